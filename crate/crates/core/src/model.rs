//! Snapshot observations and the linear systems the solvers consume.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::atmosphere::atmospheric_delay;
use crate::constants::{F_L1, NOMINAL_DELAY, SPEED_OF_LIGHT, T_CODE};
use crate::error::{invalid, Error, Result};
use crate::geodesy::{earth_rotation_correction, ecef_to_geodetic, enu_basis, topocentric_from, EcefPosition};
use crate::ils::{MilsProblem, Weight};
use crate::nav::{ClockModel, EphemerisSet, SatelliteState, DIFF_STEP_S};
use crate::time::GpsTime;

/// Satellite clock model shared by the forward model and the solvers.
pub const CLOCK_MODEL: ClockModel = ClockModel { relativistic: true };
/// Largest accepted |Doppler|, Hz. Generous to leave room for oscillator bias.
pub const MAX_DOPPLER_HZ: f64 = 50_000.0;
/// Default regularization length of the a-priori rows, m.
pub const DEFAULT_REGULARIZATION_M: f64 = 100_000.0;
/// Default arrival-time standard deviation, s.
pub const DEFAULT_SIGMA_T: f64 = 10.0e-9;
/// Default Doppler standard deviation, Hz.
pub const DEFAULT_SIGMA_D: f64 = 1.0;

/// Code phase of one satellite, in code periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodePhaseObservation {
    pub prn: u8,
    pub phi: f64,
    pub snr: Option<f64>,
    /// Whole code periods between the snapshot's common boundary and the
    /// period this phase belongs to. Zero unless the phase was renormalized.
    pub ms_offset: i64,
}

impl CodePhaseObservation {
    pub fn new(prn: u8, phi: f64) -> Self {
        Self {
            prn,
            phi,
            snr: None,
            ms_offset: 0,
        }
    }

    /// Arrival time after the snapshot epoch, s.
    pub fn arrival_offset(&self) -> f64 {
        (self.ms_offset as f64 + self.phi) * T_CODE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerObservation {
    pub prn: u8,
    pub doppler_hz: f64,
}

/// Code phases (and optionally Doppler shifts) captured at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Receiver clock reading of the common code-period boundary.
    pub receiver_epoch: GpsTime,
    code_obs: Vec<CodePhaseObservation>,
    doppler_obs: Option<Vec<DopplerObservation>>,
}

impl Snapshot {
    /// Validates the observations. Phases outside [0, 1) are folded into
    /// whole-period offsets so that every phase refers to the same boundary.
    pub fn new(
        receiver_epoch: GpsTime,
        code_obs: Vec<CodePhaseObservation>,
        doppler_obs: Option<Vec<DopplerObservation>>,
    ) -> Result<Self> {
        let mut code_obs = code_obs;
        for o in &mut code_obs {
            if !o.phi.is_finite() {
                return Err(invalid(format!("PRN {}: non-finite code phase", o.prn)));
            }
            let whole = libm::floor(o.phi);
            if whole != 0.0 {
                o.phi -= whole;
                o.ms_offset += whole as i64;
                if o.phi >= 1.0 {
                    o.phi -= 1.0;
                    o.ms_offset += 1;
                }
            }
        }
        if code_obs.len() < 4 {
            return Err(Error::InsufficientObservations {
                have: code_obs.len(),
                need: 4,
            });
        }
        for (i, o) in code_obs.iter().enumerate() {
            if code_obs[..i].iter().any(|p| p.prn == o.prn) {
                return Err(invalid(format!("PRN {} observed twice", o.prn)));
            }
        }
        if let Some(dop) = &doppler_obs {
            for (i, d) in dop.iter().enumerate() {
                if !d.doppler_hz.is_finite() || d.doppler_hz.abs() >= MAX_DOPPLER_HZ {
                    return Err(invalid(format!("PRN {}: implausible Doppler {}", d.prn, d.doppler_hz)));
                }
                if dop[..i].iter().any(|p| p.prn == d.prn) {
                    return Err(invalid(format!("PRN {} has two Doppler values", d.prn)));
                }
                if !code_obs.iter().any(|o| o.prn == d.prn) {
                    return Err(invalid(format!("Doppler for PRN {} without a code phase", d.prn)));
                }
            }
        }
        Ok(Self {
            receiver_epoch,
            code_obs,
            doppler_obs,
        })
    }

    pub fn code_obs(&self) -> &[CodePhaseObservation] {
        &self.code_obs
    }

    pub fn doppler_obs(&self) -> Option<&[DopplerObservation]> {
        self.doppler_obs.as_deref()
    }

    pub fn len(&self) -> usize {
        self.code_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code_obs.is_empty()
    }

    pub fn prns(&self) -> Vec<u8> {
        self.code_obs.iter().map(|o| o.prn).collect()
    }

    pub fn doppler_for(&self, prn: u8) -> Option<f64> {
        self.doppler_obs
            .as_ref()?
            .iter()
            .find(|d| d.prn == prn)
            .map(|d| d.doppler_hz)
    }

    /// Doppler values in code-observation order; errors if any is missing.
    pub fn dopplers(&self) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.len());
        for (i, o) in self.code_obs.iter().enumerate() {
            out[i] = self
                .doppler_for(o.prn)
                .ok_or_else(|| invalid(format!("no Doppler observation for PRN {}", o.prn)))?;
        }
        Ok(out)
    }

    pub fn has_full_doppler(&self) -> bool {
        self.code_obs.iter().all(|o| self.doppler_for(o.prn).is_some())
    }

    /// Keeps the observations of the listed PRNs.
    pub fn retain_prns(&self, keep: &[u8]) -> Result<Snapshot> {
        let code = self
            .code_obs
            .iter()
            .filter(|o| keep.contains(&o.prn))
            .copied()
            .collect();
        let dop = self
            .doppler_obs
            .as_ref()
            .map(|d| d.iter().filter(|o| keep.contains(&o.prn)).copied().collect());
        Snapshot::new(self.receiver_epoch, code, dop)
    }

    /// Same snapshot without Doppler observations.
    pub fn without_doppler(&self) -> Snapshot {
        Snapshot {
            receiver_epoch: self.receiver_epoch,
            code_obs: self.code_obs.clone(),
            doppler_obs: None,
        }
    }
}

/// Half-widths of the region expected to contain the truth around the a priori.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub x_max: f64,
    pub y_max: f64,
    pub z_max: f64,
    pub b_max: f64,
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            x_max: DEFAULT_REGULARIZATION_M,
            y_max: DEFAULT_REGULARIZATION_M,
            z_max: DEFAULT_REGULARIZATION_M,
            b_max: 100.0,
        }
    }
}

/// Initial position and clock bias guess.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriState {
    pub position: EcefPosition,
    pub bias_s: f64,
    pub bounds: SearchBox,
}

impl AprioriState {
    pub fn new(position: EcefPosition, bias_s: f64, bounds: SearchBox) -> Result<Self> {
        let b = bounds;
        if !(b.x_max > 0.0 && b.y_max > 0.0 && b.z_max > 0.0 && b.b_max > 0.0) {
            return Err(invalid("search box half-widths must be positive"));
        }
        if !position.is_finite() || !bias_s.is_finite() {
            return Err(invalid("a-priori state must be finite"));
        }
        Ok(Self {
            position,
            bias_s,
            bounds,
        })
    }

    pub fn point(&self) -> LinearizationPoint {
        LinearizationPoint {
            position: self.position,
            bias_s: self.bias_s,
        }
    }
}

/// Position and clock bias around which the model is linearized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizationPoint {
    pub position: EcefPosition,
    pub bias_s: f64,
}

/// Model quantities at one linearization point, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    pub point: LinearizationPoint,
    pub prns: Vec<u8>,
    /// Columns 1-3: unit vector from satellite to receiver; column 4: the
    /// derivative of the range with respect to the clock bias (the negated
    /// range rate).
    pub jacobian: DMatrix<f64>,
    /// Predicted arrival delays, s: range / c minus satellite clock offset,
    /// plus atmospheric delay when modeled.
    pub delays_g: DVector<f64>,
    /// Arrival times after the epoch, `(offset + phi) * t_code`, s.
    pub phases: DVector<f64>,
    /// Flight times used to date the departures, s.
    pub delays_d: DVector<f64>,
    pub ranges: DVector<f64>,
    pub range_rates: DVector<f64>,
    /// `J[:, 4] + c`.
    pub h_col4: DVector<f64>,
    /// Time derivative of `J[:, 1..4]`.
    pub dh14: DMatrix<f64>,
    /// `-(c / f0) D - range_rate` when every satellite has a Doppler value.
    pub doppler_rhs: Option<DVector<f64>>,
    pub departures: Vec<GpsTime>,
    /// Satellite states at departure, rotated into the frame at reception.
    pub sat_states: Vec<SatelliteState>,
}

impl LinearizedSystem {
    pub fn len(&self) -> usize {
        self.prns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prns.is_empty()
    }

    /// Flight times implied by the current ranges.
    pub fn light_times(&self) -> Vec<f64> {
        self.ranges.iter().map(|r| r / SPEED_OF_LIGHT).collect()
    }
}

/// Departure times `t_i - d_i - b` for every code observation.
pub fn estimate_departure_times(
    snapshot: &Snapshot,
    point: LinearizationPoint,
    delays_d: &[f64],
) -> Result<Vec<GpsTime>> {
    if delays_d.len() != snapshot.len() {
        return Err(invalid("one flight time per observation required"));
    }
    Ok(snapshot
        .code_obs
        .iter()
        .zip(delays_d)
        .map(|(o, d)| snapshot.receiver_epoch.add_seconds(o.arrival_offset() - d - point.bias_s))
        .collect())
}

/// The nominal flight time for every observation.
pub fn nominal_delays(snapshot: &Snapshot) -> Vec<f64> {
    alloc::vec![NOMINAL_DELAY; snapshot.len()]
}

/// Line-of-sight geometry of one satellite seen from a fixed receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosGeometry {
    pub state: SatelliteState,
    pub unit: Vector3<f64>,
    pub range: f64,
    pub range_rate: f64,
    pub range_accel: f64,
    /// Time derivative of `unit`.
    pub unit_rate: Vector3<f64>,
}

/// Geometry of satellite `prn` departing at `departure` with flight time
/// `flight` (used for the Earth-rotation correction).
pub fn los_geometry(
    receiver: EcefPosition,
    eph: &EphemerisSet,
    prn: u8,
    departure: GpsTime,
    flight: f64,
) -> Result<LosGeometry> {
    let rec = eph.find(prn, departure)?;
    let h = DIFF_STEP_S;
    let at = |tau: f64| -> Result<EcefPosition> {
        Ok(earth_rotation_correction(flight, rec.position(departure.add_seconds(tau))?))
    };
    let p0 = at(0.0)?;
    let pp = at(h)?;
    let pm = at(-h)?;
    let (r0, rp, rm) = (receiver.distance(p0), receiver.distance(pp), receiver.distance(pm));
    if !(r0 > 0.0) {
        return Err(Error::Numerical(format!("PRN {prn}: zero range")));
    }
    let velocity = (pp - pm).to_vector() / (2.0 * h);
    let unit = (receiver - p0).to_vector() / r0;
    let range_rate = -unit.dot(&velocity);
    let range_accel = (rp - 2.0 * r0 + rm) / (h * h);
    let unit_rate = (-velocity - unit * range_rate) / r0;
    Ok(LosGeometry {
        state: SatelliteState {
            position: p0,
            velocity,
            clock_correction: rec.clock_correction(departure, CLOCK_MODEL)?,
        },
        unit,
        range: r0,
        range_rate,
        range_accel,
        unit_rate,
    })
}

/// Linearizes the observation model at `point`.
///
/// `atmosphere` adds modeled tropospheric delay, plus ionospheric delay when
/// the ephemeris set carries broadcast coefficients.
pub fn linearize(
    snapshot: &Snapshot,
    point: LinearizationPoint,
    delays_d: &[f64],
    eph: &EphemerisSet,
    atmosphere: bool,
) -> Result<LinearizedSystem> {
    let m = snapshot.len();
    let departures = estimate_departure_times(snapshot, point, delays_d)?;
    let site = if atmosphere {
        ecef_to_geodetic(point.position).ok()
    } else {
        None
    };
    let mut jacobian = DMatrix::zeros(m, 4);
    let mut dh14 = DMatrix::zeros(m, 4);
    let mut delays_g = DVector::zeros(m);
    let mut phases = DVector::zeros(m);
    let mut ranges = DVector::zeros(m);
    let mut range_rates = DVector::zeros(m);
    let mut sat_states = Vec::with_capacity(m);
    for (i, o) in snapshot.code_obs.iter().enumerate() {
        let g = los_geometry(point.position, eph, o.prn, departures[i], delays_d[i])?;
        for k in 0..3 {
            jacobian[(i, k)] = g.unit[k];
            dh14[(i, k)] = g.unit_rate[k];
        }
        jacobian[(i, 3)] = -g.range_rate;
        dh14[(i, 3)] = -g.range_accel;
        let mut delay = g.range / SPEED_OF_LIGHT - g.state.clock_correction;
        if let Some(site) = &site {
            if let Ok(view) = topocentric_from(site, point.position, g.state.position) {
                delay += atmospheric_delay(site, &view, departures[i], eph.iono.as_ref()).total_seconds();
            }
        }
        delays_g[i] = delay;
        phases[i] = o.arrival_offset();
        ranges[i] = g.range;
        range_rates[i] = g.range_rate;
        sat_states.push(g.state);
    }
    let h_col4 = jacobian.column(3).map(|v| v + SPEED_OF_LIGHT);
    let doppler_rhs = if snapshot.has_full_doppler() && snapshot.doppler_obs.is_some() {
        let d = snapshot.dopplers()?;
        Some(d.map(|v| -SPEED_OF_LIGHT / F_L1 * v) - &range_rates)
    } else {
        None
    };
    Ok(LinearizedSystem {
        point,
        prns: snapshot.prns(),
        jacobian,
        delays_g,
        phases,
        delays_d: DVector::from_column_slice(delays_d),
        ranges,
        range_rates,
        h_col4,
        dh14,
        doppler_rhs,
        departures,
        sat_states,
    })
}

/// Drops observations whose satellite is below `mask_deg` as seen from the
/// a-priori position.
pub fn elevation_filter(
    snapshot: &Snapshot,
    point: LinearizationPoint,
    eph: &EphemerisSet,
    mask_deg: f64,
) -> Result<Snapshot> {
    let site = ecef_to_geodetic(point.position)?;
    let departures = estimate_departure_times(snapshot, point, &nominal_delays(snapshot))?;
    let mut keep = Vec::new();
    for (o, t) in snapshot.code_obs.iter().zip(departures) {
        let pos = earth_rotation_correction(NOMINAL_DELAY, eph.find(o.prn, t)?.position(t)?);
        let view = topocentric_from(&site, point.position, pos)?;
        if view.elevation >= mask_deg {
            keep.push(o.prn);
        } else {
            log::warn!("PRN {} at {:.1} deg is below the {mask_deg} deg mask", o.prn, view.elevation);
        }
    }
    snapshot.retain_prns(&keep)
}

/// How the a-priori regularization rows are weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// Every row weighted `c / length_m`.
    Uniform { length_m: f64 },
    /// Row `i` weighted `c / r_i` with `r_i` the bound implied by the box.
    FromBox(SearchBox),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Uniform {
            length_m: DEFAULT_REGULARIZATION_M,
        }
    }
}

/// Bound on `|J_i (dl; db)|` over the box (triangle inequality), m.
pub fn row_bound(jacobian_row: &[f64; 4], bounds: &SearchBox) -> f64 {
    jacobian_row[0].abs() * bounds.x_max
        + jacobian_row[1].abs() * bounds.y_max
        + jacobian_row[2].abs() * bounds.z_max
        + jacobian_row[3].abs() * bounds.b_max
}

/// Height pseudo-measurement appended when only four satellites are used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightRow {
    /// Local up direction at the linearization point.
    pub up: Vector3<f64>,
    /// Reference height minus current height, m.
    pub misclosure_m: f64,
    pub sigma_m: f64,
}

impl HeightRow {
    pub fn new(point: EcefPosition, reference_height_m: f64, sigma_m: f64) -> Result<Self> {
        let g = ecef_to_geodetic(point)?;
        Ok(Self {
            up: enu_basis(&g)[2],
            misclosure_m: reference_height_m - g.height,
            sigma_m,
        })
    }
}

fn top_block(lin: &LinearizedSystem, nbar: &[i64], extra_cols: usize) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let m = lin.len();
    let mut real = DMatrix::zeros(m, 4 + extra_cols);
    real.view_mut((0, 0), (m, 4)).copy_from(&(&lin.jacobian / SPEED_OF_LIGHT));
    for i in 0..m {
        real[(i, 3)] += 1.0;
    }
    let int = DMatrix::identity(m, m) * -T_CODE;
    let rhs = DVector::from_fn(m, |i, _| {
        lin.phases[i] - lin.delays_g[i] + nbar[i] as f64 * T_CODE - lin.point.bias_s
    });
    (real, int, rhs)
}

/// Real block, integer block, rhs and row weights of one group of rows.
type RowBlock = (DMatrix<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>);

fn stack(blocks: &[RowBlock]) -> Result<MilsProblem> {
    let rows: usize = blocks.iter().map(|b| b.2.len()).sum();
    let p = blocks[0].0.ncols();
    let q = blocks[0].1.ncols();
    let mut real = DMatrix::zeros(rows, p);
    let mut int = DMatrix::zeros(rows, q);
    let mut rhs = DVector::zeros(rows);
    let mut w = DVector::zeros(rows);
    let mut r0 = 0;
    for (a, b, y, wt) in blocks {
        let n = y.len();
        real.view_mut((r0, 0), (n, p)).copy_from(a);
        int.view_mut((r0, 0), (n, q)).copy_from(b);
        rhs.rows_mut(r0, n).copy_from(y);
        w.rows_mut(r0, n).copy_from(wt);
        r0 += n;
    }
    MilsProblem::new(real, int, rhs, Weight::Diagonal(w))
}

fn check_geometry(lin: &LinearizedSystem) -> Result<()> {
    let m = lin.len();
    if m < 4 {
        return Err(Error::InsufficientObservations { have: m, need: 4 });
    }
    let j = &lin.jacobian;
    let svd = j.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(min > 1.0e-12 * max) {
        return Err(Error::Degenerate("satellite geometry has rank below 4".into()));
    }
    Ok(())
}

fn height_block(h: &HeightRow, p: usize, q: usize) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(1, p);
    for k in 0..3 {
        a[(0, k)] = h.up[k];
    }
    (
        a,
        DMatrix::zeros(1, q),
        DVector::from_element(1, h.misclosure_m),
        DVector::from_element(1, 1.0 / h.sigma_m),
    )
}

/// Code-phase rows plus a-priori regularization rows.
///
/// Unknowns: real `(dl, db)`, integer `n - nbar`.
pub fn assemble_apriori_mils(
    lin: &LinearizedSystem,
    nbar: &[i64],
    sigma_t: f64,
    regularization: Regularization,
    height: Option<&HeightRow>,
) -> Result<MilsProblem> {
    check_geometry(lin)?;
    let m = lin.len();
    if nbar.len() != m {
        return Err(invalid("one integer per observation required"));
    }
    let (real, int, rhs) = top_block(lin, nbar, 0);
    let reg_w = regularization_weights(lin, regularization)?;
    let mut blocks = alloc::vec![
        (real, int, rhs, DVector::from_element(m, 1.0 / sigma_t)),
        (&lin.jacobian / SPEED_OF_LIGHT, DMatrix::zeros(m, m), DVector::zeros(m), reg_w),
    ];
    if let Some(h) = height {
        blocks.push(height_block(h, 4, m));
    }
    stack(&blocks)
}

/// Per-row weights of the a-priori regularization rows.
pub fn regularization_weights(lin: &LinearizedSystem, reg: Regularization) -> Result<DVector<f64>> {
    let m = lin.len();
    match reg {
        Regularization::Uniform { length_m } => {
            if !(length_m > 0.0) {
                return Err(invalid("regularization length must be positive"));
            }
            Ok(DVector::from_element(m, SPEED_OF_LIGHT / length_m))
        }
        Regularization::FromBox(b) => Ok(DVector::from_fn(m, |i, _| {
            let row = [
                lin.jacobian[(i, 0)],
                lin.jacobian[(i, 1)],
                lin.jacobian[(i, 2)],
                lin.jacobian[(i, 3)],
            ];
            SPEED_OF_LIGHT / row_bound(&row, &b)
        })),
    }
}

/// Code-phase rows plus Doppler rows.
///
/// Unknowns: real `(dl, db, du)`, integer `n - nbar`. The Doppler rows are in
/// m/s and weighted `1 / ((c / f0) sigma_d)`.
pub fn assemble_doppler_mils(
    lin: &LinearizedSystem,
    nbar: &[i64],
    ubar: f64,
    sigma_t: f64,
    sigma_d_hz: f64,
    height: Option<&HeightRow>,
) -> Result<MilsProblem> {
    check_geometry(lin)?;
    let m = lin.len();
    if nbar.len() != m {
        return Err(invalid("one integer per observation required"));
    }
    let dop = lin
        .doppler_rhs
        .as_ref()
        .ok_or_else(|| invalid("Doppler observations missing for some satellites"))?;
    let (real, int, rhs) = top_block(lin, nbar, 1);
    let mut bottom = DMatrix::zeros(m, 5);
    bottom.view_mut((0, 0), (m, 4)).copy_from(&lin.dh14);
    bottom.set_column(4, &lin.h_col4);
    let bottom_rhs = dop - lin.h_col4.scale(ubar);
    let wd = 1.0 / (SPEED_OF_LIGHT / F_L1 * sigma_d_hz);
    let mut blocks = alloc::vec![
        (real, int, rhs, DVector::from_element(m, 1.0 / sigma_t)),
        (bottom, DMatrix::zeros(m, m), bottom_rhs, DVector::from_element(m, wd)),
    ];
    if let Some(h) = height {
        blocks.push(height_block(h, 5, m));
    }
    stack(&blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::{geodetic_to_ecef, GeodeticPosition};
    use crate::nav::tests::circular;
    use crate::nav::Ephemeris;

    fn constellation() -> EphemerisSet {
        // Four circular orbits with different planes and phases.
        let mut set = EphemerisSet::new();
        for (k, (om, m0)) in [(0.0, 0.3), (1.2, 1.0), (2.4, -0.6), (3.6, 2.0), (4.8, 0.8)].iter().enumerate() {
            let mut e: Ephemeris = circular(k as u8 + 1, 26_560_000.0);
            e.omega0 = *om;
            e.i0 = 0.96;
            e.m0 = *m0;
            set.insert(e);
        }
        set
    }

    fn snapshot(prns: &[u8], phis: &[f64]) -> Snapshot {
        let obs = prns
            .iter()
            .zip(phis)
            .map(|(&p, &f)| CodePhaseObservation::new(p, f))
            .collect();
        Snapshot::new(GpsTime::new(2100, 345_600.0).unwrap(), obs, None).unwrap()
    }

    #[test]
    fn snapshot_validation() {
        let t = GpsTime::new(2100, 0.0).unwrap();
        let obs = |p: &[u8]| p.iter().map(|&p| CodePhaseObservation::new(p, 0.5)).collect::<Vec<_>>();
        assert!(matches!(
            Snapshot::new(t, obs(&[1, 2, 3]), None),
            Err(Error::InsufficientObservations { have: 3, need: 4 })
        ));
        assert!(Snapshot::new(t, obs(&[1, 2, 3, 3]), None).is_err());
        let dop = alloc::vec![DopplerObservation { prn: 9, doppler_hz: 100.0 }];
        assert!(Snapshot::new(t, obs(&[1, 2, 3, 4]), Some(dop)).is_err());
    }

    #[test]
    fn phases_are_folded_to_a_common_boundary() {
        let s = snapshot(&[1, 2, 3, 4], &[1.25, -0.25, 0.5, 0.0]);
        let o = s.code_obs();
        assert_eq!((o[0].ms_offset, o[0].phi), (1, 0.25));
        assert_eq!((o[1].ms_offset, o[1].phi), (-1, 0.75));
        assert!((o[0].arrival_offset() - 1.25e-3).abs() < 1e-15);
        assert!((o[1].arrival_offset() + 0.25e-3).abs() < 1e-15);
    }

    #[test]
    fn departure_times() {
        let s = snapshot(&[1, 2, 3, 4], &[0.0, 0.1, 0.2, 0.3]);
        let p = LinearizationPoint {
            position: EcefPosition::new(6.4e6, 0.0, 0.0),
            bias_s: 0.0,
        };
        let d = nominal_delays(&s);
        let t = estimate_departure_times(&s, p, &d).unwrap();
        assert!((s.receiver_epoch.diff(t[0]) - 0.0765).abs() < 1e-9);
        let shifted = estimate_departure_times(&s, LinearizationPoint { bias_s: 1.0, ..p }, &d).unwrap();
        for (a, b) in t.iter().zip(&shifted) {
            assert!((a.diff(*b) - 1.0).abs() < 1e-9);
        }
    }

    fn site() -> EcefPosition {
        geodetic_to_ecef(GeodeticPosition::new(20.0, 30.0, 100.0).unwrap())
    }

    #[test]
    fn jacobian_rows_and_derivatives() {
        let eph = constellation();
        let s = snapshot(&[1, 2, 3, 4, 5], &[0.1, 0.2, 0.3, 0.4, 0.5]);
        let p = LinearizationPoint {
            position: site(),
            bias_s: 0.0,
        };
        let d = nominal_delays(&s);
        let lin = linearize(&s, p, &d, &eph, false).unwrap();
        for i in 0..lin.len() {
            let n = lin.jacobian.row(i).columns(0, 3).norm();
            assert!((n - 1.0).abs() < 1e-9);
            assert!(lin.jacobian[(i, 3)].abs() < 1000.0);
            assert!((lin.h_col4[i] - SPEED_OF_LIGHT).abs() < 1000.0);
        }
        // Central differences of J over +-0.5 s of receiver time.
        let step = 0.5;
        let shift = |dt: f64| {
            let sp = Snapshot::new(s.receiver_epoch.add_seconds(dt), s.code_obs().to_vec(), None).unwrap();
            linearize(&sp, p, &d, &eph, false).unwrap()
        };
        let (fwd, bwd) = (shift(step), shift(-step));
        for i in 0..lin.len() {
            for k in 0..4 {
                let fd = (fwd.jacobian[(i, k)] - bwd.jacobian[(i, k)]) / (2.0 * step);
                let an = lin.dh14[(i, k)];
                assert!((fd - an).abs() <= 1e-3 * an.abs().max(1e-9), "{i},{k}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn jacobian_matches_numerical_gradient_of_delay() {
        let eph = constellation();
        let s = snapshot(&[1, 2, 3, 4, 5], &[0.1, 0.2, 0.3, 0.4, 0.5]);
        let p = LinearizationPoint {
            position: site(),
            bias_s: 0.3,
        };
        let d = nominal_delays(&s);
        let lin = linearize(&s, p, &d, &eph, false).unwrap();
        let h = 10.0;
        for k in 0..3 {
            let mut dp = [0.0; 3];
            dp[k] = h;
            let off = EcefPosition::new(dp[0], dp[1], dp[2]);
            let a = linearize(&s, LinearizationPoint { position: p.position + off, ..p }, &d, &eph, false).unwrap();
            let b = linearize(&s, LinearizationPoint { position: p.position - off, ..p }, &d, &eph, false).unwrap();
            for i in 0..lin.len() {
                let fd = (a.delays_g[i] - b.delays_g[i]) * SPEED_OF_LIGHT / (2.0 * h);
                assert!((fd - lin.jacobian[(i, k)]).abs() < 1e-6);
            }
        }
        let hb = 0.01;
        let a = linearize(&s, LinearizationPoint { bias_s: p.bias_s + hb, ..p }, &d, &eph, false).unwrap();
        let b = linearize(&s, LinearizationPoint { bias_s: p.bias_s - hb, ..p }, &d, &eph, false).unwrap();
        for i in 0..lin.len() {
            // Only the range part depends on the bias; the clock term is nearly constant.
            let fd = (a.ranges[i] - b.ranges[i]) / (2.0 * hb);
            assert!((fd - lin.jacobian[(i, 3)]).abs() < 1e-3, "{fd} vs {}", lin.jacobian[(i, 3)]);
        }
    }

    #[test]
    fn elevation_mask() {
        let eph = constellation();
        let s = snapshot(&[1, 2, 3, 4, 5], &[0.1, 0.2, 0.3, 0.4, 0.5]);
        // Pick the receiver directly under satellite 1 so it sits at zenith.
        let t = s.receiver_epoch.add_seconds(-NOMINAL_DELAY);
        let sub = earth_rotation_correction(NOMINAL_DELAY, eph.find(1, t).unwrap().position(t).unwrap());
        let g = ecef_to_geodetic(sub).unwrap();
        let rcv = geodetic_to_ecef(GeodeticPosition { height: 0.0, ..g });
        let p = LinearizationPoint { position: rcv, bias_s: 0.0 };
        let site = ecef_to_geodetic(rcv).unwrap();
        let elev: Vec<f64> = s
            .code_obs()
            .iter()
            .map(|o| {
                let pos = earth_rotation_correction(NOMINAL_DELAY, eph.find(o.prn, t).unwrap().position(t).unwrap());
                topocentric_from(&site, rcv, pos).unwrap().elevation
            })
            .collect();
        assert!((elev[0] - 90.0).abs() < 1e-6);
        let visible = elev.iter().filter(|e| **e >= 0.0).count();
        match elevation_filter(&s, p, &eph, 0.0) {
            Ok(f) => assert_eq!(f.len(), visible),
            Err(Error::InsufficientObservations { have, .. }) => assert_eq!(have, visible),
            Err(e) => panic!("{e}"),
        }
        // A mask of -90 degrees keeps everything.
        assert_eq!(elevation_filter(&s, p, &eph, -90.0).unwrap().len(), 5);
    }

    #[test]
    fn row_bound_holds_inside_box() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let b = SearchBox {
            x_max: 5e4,
            y_max: 2e4,
            z_max: 1e5,
            b_max: 30.0,
        };
        for _ in 0..1000 {
            let row: [f64; 4] = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-800.0..800.0),
            ];
            let x = [
                rng.random_range(-b.x_max..b.x_max),
                rng.random_range(-b.y_max..b.y_max),
                rng.random_range(-b.z_max..b.z_max),
                rng.random_range(-b.b_max..b.b_max),
            ];
            let v: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!(v.abs() <= row_bound(&row, &b));
        }
    }

    #[test]
    fn apriori_mils_shape_and_weights() {
        let eph = constellation();
        let s = snapshot(&[1, 2, 3, 4, 5], &[0.1, 0.2, 0.3, 0.4, 0.5]);
        let p = LinearizationPoint { position: site(), bias_s: 0.0 };
        let lin = linearize(&s, p, &nominal_delays(&s), &eph, false).unwrap();
        let prob = assemble_apriori_mils(&lin, &[0; 5], DEFAULT_SIGMA_T, Regularization::default(), None).unwrap();
        assert_eq!(prob.rows(), 10);
        assert_eq!(prob.real_unknowns(), 4);
        assert_eq!(prob.int_unknowns(), 5);
        match &prob.weight {
            Weight::Diagonal(w) => {
                assert!((w[0] - 1e8).abs() < 1e-6);
                assert!((w[5] - SPEED_OF_LIGHT / 1e5).abs() < 1e-9);
            }
            _ => panic!("diagonal weight expected"),
        }
        assert!((prob.real_block[(0, 3)] - (1.0 + lin.jacobian[(0, 3)] / SPEED_OF_LIGHT)).abs() < 1e-15);
        assert_eq!(prob.int_block[(2, 2)], -T_CODE);
        // Common-offset direction: k more periods and k t_code more bias leave
        // the top residuals unchanged up to the shadow term.
        let x = DVector::from_vec(alloc::vec![0.0, 0.0, 0.0, 0.0]);
        let k = 3;
        let x2 = DVector::from_vec(alloc::vec![0.0, 0.0, 0.0, k as f64 * T_CODE]);
        let top = |x: &DVector<f64>, z: &[i64]| {
            let zf = DVector::from_iterator(5, z.iter().map(|&v| v as f64));
            (&prob.real_block * x + &prob.int_block * zf - &prob.rhs).rows(0, 5).into_owned()
        };
        let diff = top(&x, &[0; 5]) - top(&x2, &[k; 5]);
        for i in 0..5 {
            let shadow = lin.jacobian[(i, 3)] / SPEED_OF_LIGHT * k as f64 * T_CODE;
            assert!((diff[i] + shadow).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_doppler_is_an_input_error() {
        let eph = constellation();
        let s = snapshot(&[1, 2, 3, 4, 5], &[0.1, 0.2, 0.3, 0.4, 0.5]);
        let p = LinearizationPoint { position: site(), bias_s: 0.0 };
        let lin = linearize(&s, p, &nominal_delays(&s), &eph, false).unwrap();
        assert!(matches!(
            assemble_doppler_mils(&lin, &[0; 5], 0.0, 1e-8, 1.0, None),
            Err(Error::InvalidInput(_))
        ));
    }
}
