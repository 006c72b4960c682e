//! Broadcast ephemerides and satellite orbit evaluation.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::atmosphere::KlobucharParams;
use crate::constants::{MU_GPS, OMEGA_E, REL_F};
use crate::error::{Error, Result};
use crate::geodesy::EcefPosition;
use crate::time::{wrap_half_week, GpsTime};

/// Maximum |t - toe| for which an ephemeris is used, s.
pub const VALIDITY_WINDOW_S: f64 = 4.0 * 3600.0;
/// Step of the central differences used for velocity and range derivatives, s.
pub const DIFF_STEP_S: f64 = 0.5;

const KEPLER_MAX_ITER: usize = 20;
const KEPLER_TOL: f64 = 1.0e-13;

/// Broadcast fields carried through parsing and serialization that the
/// orbit model does not use.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BroadcastExtras {
    pub codes_on_l2: f64,
    pub l2p_flag: f64,
    pub sv_accuracy: f64,
    pub sv_health: f64,
    pub iodc: f64,
    pub transmission_time: f64,
    pub fit_interval: f64,
}

/// One satellite's broadcast orbit and clock record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ephemeris {
    pub prn: u8,
    pub toe: GpsTime,
    pub toc: GpsTime,
    pub sqrt_a: f64,
    pub e: f64,
    pub i0: f64,
    pub omega0: f64,
    pub omega: f64,
    pub m0: f64,
    pub delta_n: f64,
    pub i_dot: f64,
    pub omega_dot: f64,
    pub cuc: f64,
    pub cus: f64,
    pub crc: f64,
    pub crs: f64,
    pub cic: f64,
    pub cis: f64,
    pub af0: f64,
    pub af1: f64,
    pub af2: f64,
    pub tgd: f64,
    pub iode: u32,
    pub extras: BroadcastExtras,
}

/// Satellite-clock modeling switches. Simulation and solving must agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClockModel {
    /// Include the eccentricity relativistic term.
    pub relativistic: bool,
}

/// Position, velocity and clock correction of a satellite at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteState {
    pub position: EcefPosition,
    pub velocity: Vector3<f64>,
    /// Satellite clock offset from GPS time, s (GPS time = satellite time - this).
    pub clock_correction: f64,
}

impl Ephemeris {
    /// Checks the record against the physical envelope of GPS orbits.
    pub fn validate(&self) -> Result<()> {
        if !(1..=32).contains(&self.prn) {
            return Err(Error::InvariantViolation(format!("PRN {} outside 1..32", self.prn)));
        }
        if !(0.0..0.1).contains(&self.e) {
            return Err(Error::InvariantViolation(format!(
                "PRN {}: eccentricity {} outside [0, 0.1)",
                self.prn, self.e
            )));
        }
        let a = self.sqrt_a * self.sqrt_a;
        if !(2.0e7..=3.0e7).contains(&a) {
            return Err(Error::InvariantViolation(format!(
                "PRN {}: semi-major axis {a} m outside the GPS band",
                self.prn
            )));
        }
        if !(self.af0.abs() < 1.0e-2) {
            return Err(Error::InvariantViolation(format!(
                "PRN {}: clock bias {} s too large",
                self.prn, self.af0
            )));
        }
        let all = [
            self.i0, self.omega0, self.omega, self.m0, self.delta_n, self.i_dot, self.omega_dot,
            self.cuc, self.cus, self.crc, self.crs, self.cic, self.cis, self.af1, self.af2,
            self.tgd,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(format!("PRN {}: non-finite field", self.prn)));
        }
        Ok(())
    }

    /// Mean motion including the broadcast correction, rad/s.
    pub fn mean_motion(&self) -> f64 {
        MU_GPS.sqrt() / (self.sqrt_a * self.sqrt_a * self.sqrt_a) + self.delta_n
    }

    fn eccentric_anomaly(&self, t: GpsTime) -> Result<f64> {
        let tk = wrap_half_week(t.diff(self.toe));
        solve_kepler(self.m0 + self.mean_motion() * tk, self.e)
    }

    /// Satellite position in ECEF at GPS time `t` (no light-time handling).
    pub fn position(&self, t: GpsTime) -> Result<EcefPosition> {
        let tk = wrap_half_week(t.diff(self.toe));
        let a = self.sqrt_a * self.sqrt_a;
        let ecc = solve_kepler(self.m0 + self.mean_motion() * tk, self.e)?;
        let (se, ce) = ecc.sin_cos();
        let nu = ((1.0 - self.e * self.e).sqrt() * se).atan2(ce - self.e);
        let phi = nu + self.omega;
        let (s2, c2) = (2.0 * phi).sin_cos();
        let u = phi + self.cus * s2 + self.cuc * c2;
        let r = a * (1.0 - self.e * ce) + self.crs * s2 + self.crc * c2;
        let i = self.i0 + self.cis * s2 + self.cic * c2 + self.i_dot * tk;
        let (su, cu) = u.sin_cos();
        let (xp, yp) = (r * cu, r * su);
        let node = self.omega0 + (self.omega_dot - OMEGA_E) * tk - OMEGA_E * self.toe.sow;
        let (so, co) = node.sin_cos();
        let (si, ci) = i.sin_cos();
        Ok(EcefPosition::new(
            xp * co - yp * ci * so,
            xp * so + yp * ci * co,
            yp * si,
        ))
    }

    /// Satellite clock offset at `t`, s, with the group delay removed for
    /// L1 code observations.
    pub fn clock_correction(&self, t: GpsTime, model: ClockModel) -> Result<f64> {
        let dt = wrap_half_week(t.diff(self.toc));
        let mut corr = self.af0 + self.af1 * dt + self.af2 * dt * dt - self.tgd;
        if model.relativistic {
            corr += REL_F * self.e * self.sqrt_a * self.eccentric_anomaly(t)?.sin();
        }
        Ok(corr)
    }

    /// Position, velocity and clock at `t`.
    pub fn state(&self, t: GpsTime, model: ClockModel) -> Result<SatelliteState> {
        Ok(SatelliteState {
            position: self.position(t)?,
            velocity: self.velocity(t)?,
            clock_correction: self.clock_correction(t, model)?,
        })
    }

    /// Velocity by central difference of positions, m/s.
    pub fn velocity(&self, t: GpsTime) -> Result<Vector3<f64>> {
        self.velocity_with_step(t, DIFF_STEP_S)
    }

    pub fn velocity_with_step(&self, t: GpsTime, h: f64) -> Result<Vector3<f64>> {
        let fwd = self.position(t.add_seconds(h))?;
        let bwd = self.position(t.add_seconds(-h))?;
        Ok((fwd - bwd).to_vector() / (2.0 * h))
    }
}

/// Solves Kepler's equation `E - e sin E = M` by Newton iteration.
pub fn solve_kepler(mean_anomaly: f64, e: f64) -> Result<f64> {
    let mut ecc = mean_anomaly;
    for _ in 0..KEPLER_MAX_ITER {
        let f = ecc - e * ecc.sin() - mean_anomaly;
        let step = f / (1.0 - e * ecc.cos());
        ecc -= step;
        if step.abs() < KEPLER_TOL {
            return Ok(ecc);
        }
    }
    let residual = (ecc - e * ecc.sin() - mean_anomaly).abs();
    if residual < KEPLER_TOL {
        Ok(ecc)
    } else {
        Err(Error::Numerical(format!(
            "Kepler iteration did not converge (M = {mean_anomaly}, e = {e})"
        )))
    }
}

/// Satellite position, velocity and clock at `t` from the best record.
pub fn satellite_state(eph: &Ephemeris, t: GpsTime, model: ClockModel) -> Result<SatelliteState> {
    eph.state(t, model)
}

/// Satellite velocity at `t`, m/s.
pub fn satellite_velocity(eph: &Ephemeris, t: GpsTime) -> Result<Vector3<f64>> {
    eph.velocity(t)
}

/// Time derivative of the receiver-satellite distance, m/s.
pub fn range_rate(receiver: EcefPosition, eph: &Ephemeris, t: GpsTime) -> Result<f64> {
    let pos = eph.position(t)?;
    let vel = eph.velocity(t)?;
    let los = (receiver - pos).to_vector();
    Ok(-los.dot(&vel) / los.norm())
}

/// Second time derivative of the receiver-satellite distance, m/s^2.
pub fn range_acceleration(receiver: EcefPosition, eph: &Ephemeris, t: GpsTime) -> Result<f64> {
    let h = DIFF_STEP_S;
    let r0 = receiver.distance(eph.position(t)?);
    let rp = receiver.distance(eph.position(t.add_seconds(h))?);
    let rm = receiver.distance(eph.position(t.add_seconds(-h))?);
    Ok((rp - 2.0 * r0 + rm) / (h * h))
}

/// Ephemerides of one navigation file plus its ionospheric parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EphemerisSet {
    records: Vec<Ephemeris>,
    pub iono: Option<KlobucharParams>,
}

impl EphemerisSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a record. Returns `false` (and drops it) if a record with the same
    /// PRN, toe and IODE is already present.
    pub fn insert(&mut self, eph: Ephemeris) -> bool {
        let dup = self
            .records
            .iter()
            .any(|r| r.prn == eph.prn && r.toe == eph.toe && r.iode == eph.iode);
        if dup {
            return false;
        }
        self.records.push(eph);
        true
    }

    pub fn records(&self) -> &[Ephemeris] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct PRNs, ascending.
    pub fn prns(&self) -> Vec<u8> {
        let mut p: Vec<u8> = self.records.iter().map(|r| r.prn).collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    /// The record for `prn` whose toe is nearest `t`.
    pub fn find(&self, prn: u8, t: GpsTime) -> Result<&Ephemeris> {
        find_ephemeris(self, prn, t)
    }
}

impl FromIterator<Ephemeris> for EphemerisSet {
    fn from_iter<I: IntoIterator<Item = Ephemeris>>(iter: I) -> Self {
        let mut set = EphemerisSet::new();
        for e in iter {
            set.insert(e);
        }
        set
    }
}

/// Selects the record for `prn` with toe nearest to `t`.
pub fn find_ephemeris(set: &EphemerisSet, prn: u8, t: GpsTime) -> Result<&Ephemeris> {
    let best = set
        .records
        .iter()
        .filter(|r| r.prn == prn)
        .map(|r| (wrap_half_week(t.diff(r.toe)).abs(), r))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    match best {
        None => Err(Error::EphemerisNotFound { prn }),
        Some((age, _)) if age > VALIDITY_WINDOW_S => Err(Error::StaleEphemeris { prn, age_s: age }),
        Some((_, r)) => Ok(r),
    }
}
