//! Synthetic snapshots and constellations with known truth.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::atmosphere::{atmospheric_delay, KlobucharParams};
use crate::constants::{F_L1, NOMINAL_DELAY, OMEGA_E, SPEED_OF_LIGHT, T_CODE};
use crate::error::{invalid, Error, Result};
use crate::geodesy::{
    earth_rotation_correction, ecef_to_geodetic, enu_basis, geodetic_to_ecef, normalize_longitude,
    topocentric_from, EcefPosition, GeodeticPosition,
};
use crate::model::{los_geometry, AprioriState, CodePhaseObservation, DopplerObservation, SearchBox, Snapshot, CLOCK_MODEL};
use crate::nav::{BroadcastExtras, Ephemeris, EphemerisSet};
use crate::time::GpsTime;

/// Default elevation mask of generated snapshots, degrees.
pub const SIM_MASK_DEG: f64 = 10.0;
/// Orbit radius of the synthetic constellation, m.
pub const SYNTHETIC_RADIUS_M: f64 = 26_560_000.0;
/// Inclination of the synthetic constellation, degrees.
pub const SYNTHETIC_INCLINATION_DEG: f64 = 55.0;
/// Mean Earth radius used for great-circle displacements, m.
pub const MEAN_EARTH_RADIUS_M: f64 = 6_371_008.8;

const LIGHT_TIME_ITERATIONS: usize = 5;
const LIGHT_TIME_TOL: f64 = 1.0e-12;

/// Broadcast ionosphere coefficients typical of mid solar activity.
pub const TYPICAL_KLOBUCHAR: KlobucharParams = KlobucharParams {
    alpha: [1.118e-8, 7.451e-9, -5.961e-8, -5.961e-8],
    beta: [9.011e4, 1.638e4, -1.966e5, -6.554e4],
};

/// The state a snapshot is generated from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthState {
    pub position: EcefPosition,
    /// Receiver clock minus GPS time, s.
    pub bias_s: f64,
    /// Relative master-oscillator offset; positive runs fast.
    pub drift_s_per_s: f64,
    /// GPS time of the capture.
    pub epoch: GpsTime,
}

impl TruthState {
    pub fn new(position: EcefPosition, bias_s: f64, drift_s_per_s: f64, epoch: GpsTime) -> Result<Self> {
        if !position.is_on_earth() {
            return Err(invalid("truth position must be on the Earth's surface"));
        }
        if !(drift_s_per_s.abs() < 1.0e-5) || !bias_s.is_finite() {
            return Err(invalid("truth clock parameters out of range"));
        }
        Ok(Self {
            position,
            bias_s,
            drift_s_per_s,
            epoch,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Arrival-time standard deviation, s.
    pub sigma_t: f64,
    /// Doppler standard deviation, Hz.
    pub sigma_d: f64,
    /// Add modeled ionospheric and tropospheric delays.
    pub atmosphere: bool,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            sigma_t: 0.0,
            sigma_d: 0.0,
            atmosphere: false,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_t >= 0.0) || !(self.sigma_d >= 0.0) {
            return Err(invalid("noise standard deviations must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-satellite truth recorded alongside a generated snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSnapshot {
    pub snapshot: Snapshot,
    /// True whole code periods between departure and the common boundary.
    pub integers: Vec<i64>,
    /// True flight times, s.
    pub flight_times: Vec<f64>,
    pub elevations: Vec<f64>,
}

/// Flight time to a stationary receiver of a signal leaving at `departure`.
fn flight_time(eph: &Ephemeris, receiver: EcefPosition, departure: GpsTime) -> Result<f64> {
    let pos = eph.position(departure)?;
    let mut tau = NOMINAL_DELAY;
    for _ in 0..LIGHT_TIME_ITERATIONS {
        let next = receiver.distance(earth_rotation_correction(tau, pos)) / SPEED_OF_LIGHT;
        let done = (next - tau).abs() < LIGHT_TIME_TOL;
        tau = next;
        if done {
            break;
        }
    }
    Ok(tau)
}

/// Simulates code phases (and Doppler) seen by `truth` with a 10 degree mask.
pub fn generate_snapshot(truth: &TruthState, eph: &EphemerisSet, noise: &NoiseSpec) -> Result<GeneratedSnapshot> {
    generate_snapshot_masked(truth, eph, noise, SIM_MASK_DEG)
}

pub fn generate_snapshot_masked(
    truth: &TruthState,
    eph: &EphemerisSet,
    noise: &NoiseSpec,
    mask_deg: f64,
) -> Result<GeneratedSnapshot> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let time_noise = Normal::new(0.0, noise.sigma_t).map_err(|e| Error::Generation(format!("{e}")))?;
    let dop_noise = Normal::new(0.0, noise.sigma_d).map_err(|e| Error::Generation(format!("{e}")))?;
    let site = ecef_to_geodetic(truth.position)?;

    // Common boundary: the receiver reading at the capture, floored to a code period.
    let reading = truth.epoch.add_seconds(truth.bias_s);
    let boundary_sow = libm::floor(reading.sow / T_CODE) * T_CODE;
    let epoch = GpsTime::normalized(reading.week as i64, boundary_sow);
    // Everything below is an offset from `epoch` in seconds.
    let arrival_gps0 = -truth.bias_s;

    let mut code = Vec::new();
    let mut dopplers = Vec::new();
    let mut integers = Vec::new();
    let mut flights = Vec::new();
    let mut elevations = Vec::new();
    for prn in eph.prns() {
        let rec = match eph.find(prn, truth.epoch) {
            Ok(r) => *r,
            Err(_) => continue,
        };
        let t_mid = epoch.add_seconds(arrival_gps0 - NOMINAL_DELAY);
        let pos = earth_rotation_correction(NOMINAL_DELAY, rec.position(t_mid)?);
        let view = topocentric_from(&site, truth.position, pos)?;
        if view.elevation < mask_deg {
            continue;
        }
        // Departure of the earliest code period arriving after the boundary.
        let tau0 = flight_time(&rec, truth.position, epoch.add_seconds(arrival_gps0 - NOMINAL_DELAY))?;
        let dep0 = arrival_gps0 - tau0;
        let sv0 = dep0 + rec.clock_correction(epoch.add_seconds(dep0), CLOCK_MODEL)?;
        let mut k = libm::ceil(sv0 / T_CODE) as i64;
        let eps = time_noise.sample(&mut rng);
        let mut found = None;
        for _ in 0..4 {
            let sv = k as f64 * T_CODE;
            let mut dep = sv;
            for _ in 0..3 {
                dep = sv - rec.clock_correction(epoch.add_seconds(dep), CLOCK_MODEL)?;
            }
            let t_dep = epoch.add_seconds(dep);
            let tau = flight_time(&rec, truth.position, t_dep)?;
            let mut atmos = 0.0;
            if noise.atmosphere {
                let p = earth_rotation_correction(tau, rec.position(t_dep)?);
                let v = topocentric_from(&site, truth.position, p)?;
                atmos = atmospheric_delay(&site, &v, t_dep, eph.iono.as_ref()).total_seconds();
            }
            let arrival = dep + tau + atmos + truth.bias_s + eps;
            if arrival < 0.0 {
                k += 1;
            } else if arrival >= T_CODE {
                k -= 1;
            } else {
                found = Some((arrival, t_dep, tau));
                break;
            }
        }
        let (arrival, t_dep, tau) =
            found.ok_or_else(|| Error::Generation(format!("PRN {prn}: arrival outside the capture window")))?;
        let phi = (arrival / T_CODE).clamp(0.0, 1.0 - f64::EPSILON);
        code.push(CodePhaseObservation {
            prn,
            phi,
            snr: Some(45.0),
            ms_offset: 0,
        });
        integers.push(-k);
        flights.push(tau);
        elevations.push(view.elevation);
        let geo = los_geometry(truth.position, eph, prn, t_dep, tau)?;
        let bias_hz = -truth.drift_s_per_s * F_L1;
        let d = -geo.range_rate / SPEED_OF_LIGHT * F_L1 + bias_hz + dop_noise.sample(&mut rng);
        dopplers.push(DopplerObservation { prn, doppler_hz: d });
    }
    if code.len() < 4 {
        return Err(Error::Generation(format!(
            "only {} satellites above {mask_deg} degrees",
            code.len()
        )));
    }
    let snapshot = Snapshot::new(epoch, code, Some(dopplers))?;
    Ok(GeneratedSnapshot {
        snapshot,
        integers,
        flight_times: flights,
        elevations,
    })
}

/// A-priori state `distance_m` away from the truth along `azimuth_deg`
/// (spherical great circle, height kept) with the clock `time_error_s` behind.
pub fn perturb_apriori(truth: &TruthState, distance_m: f64, azimuth_deg: f64, time_error_s: f64) -> Result<AprioriState> {
    if !(distance_m >= 0.0) {
        return Err(invalid("distance must be nonnegative"));
    }
    let g = ecef_to_geodetic(truth.position)?;
    let moved = great_circle_destination(&g, distance_m, azimuth_deg);
    let bounds = SearchBox {
        x_max: distance_m.max(1_000.0),
        y_max: distance_m.max(1_000.0),
        z_max: distance_m.max(1_000.0),
        b_max: time_error_s.abs().max(1.0),
    };
    AprioriState::new(geodetic_to_ecef(moved), truth.bias_s - time_error_s, bounds)
}

/// Destination after travelling `distance_m` along `azimuth_deg` on the mean sphere.
pub fn great_circle_destination(start: &GeodeticPosition, distance_m: f64, azimuth_deg: f64) -> GeodeticPosition {
    let sigma = distance_m / MEAN_EARTH_RADIUS_M;
    let (lat1, lon1) = (start.latitude.to_radians(), start.longitude.to_radians());
    let az = azimuth_deg.to_radians();
    let sin_lat2 = lat1.sin() * sigma.cos() + lat1.cos() * sigma.sin() * az.cos();
    let lat2 = sin_lat2.clamp(-1.0, 1.0).asin();
    let lon2 = lon1 + (az.sin() * sigma.sin() * lat1.cos()).atan2(sigma.cos() - lat1.sin() * sin_lat2);
    GeodeticPosition {
        latitude: lat2.to_degrees(),
        longitude: normalize_longitude(lon2.to_degrees()),
        height: start.height,
    }
}

/// Great-circle distance on the mean sphere, m.
pub fn great_circle_distance(a: &GeodeticPosition, b: &GeodeticPosition) -> f64 {
    let (p1, p2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dp = p2 - p1;
    let dl = (b.longitude - a.longitude).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * MEAN_EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Position dilution of precision of the given satellites seen from `site`.
pub fn pdop(site: EcefPosition, sats: &[EcefPosition]) -> Result<f64> {
    if sats.len() < 4 {
        return Err(Error::InsufficientObservations {
            have: sats.len(),
            need: 4,
        });
    }
    let mut normal = Matrix4::<f64>::zeros();
    for s in sats {
        let u = (*s - site).to_vector().normalize();
        let row = nalgebra::RowVector4::new(-u.x, -u.y, -u.z, 1.0);
        normal += row.transpose() * row;
    }
    let inv = normal
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("satellite geometry is singular".into()))?;
    Ok((inv[(0, 0)] + inv[(1, 1)] + inv[(2, 2)]).sqrt())
}

/// Where a synthetic constellation is designed to be seen from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstellationDesign {
    pub site: GeodeticPosition,
    pub epoch: GpsTime,
    /// Lowest elevation of a designed satellite at `epoch`, degrees.
    pub min_elevation_deg: f64,
}

impl Default for ConstellationDesign {
    fn default() -> Self {
        Self {
            site: GeodeticPosition {
                latitude: 32.1,
                longitude: 34.8,
                height: 50.0,
            },
            epoch: GpsTime {
                week: 2100,
                sow: 345_600.0,
            },
            min_elevation_deg: 20.0,
        }
    }
}

/// Circular 55 degree orbits arranged so all `n_sats` are above 20 degrees at
/// the default design site and epoch.
pub fn synthetic_constellation(n_sats: usize, seed: u64) -> Result<EphemerisSet> {
    synthetic_constellation_for(n_sats, seed, &ConstellationDesign::default())
}

pub fn synthetic_constellation_for(n_sats: usize, seed: u64, design: &ConstellationDesign) -> Result<EphemerisSet> {
    if !(4..=13).contains(&n_sats) {
        return Err(invalid("synthetic constellations have 4 to 13 satellites"));
    }
    if design.site.latitude.abs() > 50.0 {
        return Err(invalid("design site must be within 50 degrees of the equator"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    let site = geodetic_to_ecef(design.site);
    let [east, north, up] = enu_basis(&design.site);
    let incl = SYNTHETIC_INCLINATION_DEG.to_radians();
    let max_z = SYNTHETIC_RADIUS_M * incl.sin() * 0.999;
    let mut set = EphemerisSet::new();
    set.iono = Some(TYPICAL_KLOBUCHAR);
    let az0 = rng.random_range(0.0..360.0);
    let lo = design.min_elevation_deg + 2.0;
    for placed in 0..n_sats {
        let (mut az, mut el) = if placed == 0 {
            (rng.random_range(0.0..360.0), rng.random_range(70.0..88.0))
        } else {
            let slot = (placed - 1) as f64 / (n_sats - 1) as f64 * 360.0;
            let el = if n_sats <= 6 || placed % 2 == 1 {
                rng.random_range(lo..lo + 18.0)
            } else {
                rng.random_range(40.0..65.0)
            };
            (az0 + slot + rng.random_range(-10.0..10.0), el)
        };
        // Directions whose satellite would sit above the orbit's reach in
        // latitude are moved up the sky until they fit.
        let mut tries = 0;
        let p = loop {
            let (az_r, el_r): (f64, f64) = (az.to_radians(), el.to_radians());
            let dir = east * (el_r.cos() * az_r.sin()) + north * (el_r.cos() * az_r.cos()) + up * el_r.sin();
            let s = site.to_vector();
            let b = s.dot(&dir);
            let c = s.norm_squared() - SYNTHETIC_RADIUS_M * SYNTHETIC_RADIUS_M;
            let p = s + dir * (-b + (b * b - c).sqrt());
            if p.z.abs() <= max_z {
                break p;
            }
            tries += 1;
            if el >= 88.0 {
                return Err(Error::Generation("could not place synthetic satellites".into()));
            }
            if tries <= 12 {
                // Swing away from the pole-ward side of the sky first.
                let pole_az = if design.site.latitude >= 0.0 { 0.0 } else { 180.0 };
                let rel = (az - pole_az).to_radians().sin();
                az += if rel >= 0.0 { 4.0 } else { -4.0 };
            } else {
                el = (el + 3.0).min(88.0);
            }
        };
        let prn = placed as u8 + 1;
        set.insert(circular_through(prn, &p, incl, rng.random_bool(0.5), design.epoch, &mut rng));
    }
    Ok(set)
}

/// Circular orbit record whose satellite is at ECEF `p` at `epoch`.
fn circular_through(prn: u8, p: &Vector3<f64>, incl: f64, ascending: bool, epoch: GpsTime, rng: &mut ChaCha8Rng) -> Ephemeris {
    let r = p.norm();
    let sin_u = (p.z / (r * incl.sin())).clamp(-1.0, 1.0);
    let mut u = sin_u.asin();
    if !ascending {
        u = PI - u;
    }
    let (xp, yp) = (r * u.cos(), r * u.sin() * incl.cos());
    let node = p.y.atan2(p.x) - yp.atan2(xp);
    Ephemeris {
        prn,
        toe: epoch,
        toc: epoch,
        sqrt_a: r.sqrt(),
        e: 0.0,
        i0: incl,
        omega0: node + OMEGA_E * epoch.sow,
        omega: 0.0,
        m0: u,
        delta_n: 0.0,
        i_dot: 0.0,
        omega_dot: 0.0,
        cuc: 0.0,
        cus: 0.0,
        crc: 0.0,
        crs: 0.0,
        cic: 0.0,
        cis: 0.0,
        af0: rng.random_range(-2.0e-4..2.0e-4),
        af1: rng.random_range(-5.0e-12..5.0e-12),
        af2: 0.0,
        tgd: rng.random_range(-1.0e-8..1.0e-8),
        iode: prn as u32,
        extras: BroadcastExtras {
            fit_interval: 4.0,
            ..BroadcastExtras::default()
        },
    }
}

/// A random truth state near the design site, with a random capture time
/// within `epoch_spread_s` of the design epoch.
pub fn random_truth(design: &ConstellationDesign, rng: &mut impl Rng, epoch_spread_s: f64) -> Result<TruthState> {
    let dist = rng.random_range(0.0..100_000.0);
    let az = rng.random_range(0.0..360.0);
    let mut g = great_circle_destination(&design.site, dist, az);
    g.height = rng.random_range(0.0..500.0);
    let dt = if epoch_spread_s > 0.0 {
        rng.random_range(-epoch_spread_s..epoch_spread_s)
    } else {
        0.0
    };
    TruthState::new(
        geodetic_to_ecef(g),
        rng.random_range(-0.5..0.5),
        rng.random_range(-2.0e-6..2.0e-6),
        design.epoch.add_seconds(dt),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linearize, LinearizationPoint};

    fn truth() -> TruthState {
        let d = ConstellationDesign::default();
        TruthState::new(geodetic_to_ecef(d.site), 0.123_456_789, 0.0, d.epoch.add_seconds(60.0)).unwrap()
    }

    #[test]
    fn constellation_is_valid_and_visible() {
        for seed in 0..20 {
            for n in [4, 8, 13] {
                let set = synthetic_constellation(n, seed).unwrap();
                assert_eq!(set.len(), n);
                let d = ConstellationDesign::default();
                let site = geodetic_to_ecef(d.site);
                let mut sats = Vec::new();
                let mut visible = 0;
                for e in set.records() {
                    e.validate().unwrap();
                    let p = e.position(d.epoch).unwrap();
                    assert!((p.norm() - SYNTHETIC_RADIUS_M).abs() < 1.0);
                    let v = topocentric_from(&d.site, site, p).unwrap();
                    if v.elevation > 10.0 {
                        visible += 1;
                    }
                    assert!(v.elevation > d.min_elevation_deg - 1e-6, "seed {seed}: {}", v.elevation);
                    sats.push(p);
                }
                assert!(visible * 2 >= n);
                let dop = pdop(site, &sats).unwrap();
                assert!(dop < 6.0, "seed {seed} n {n}: pdop {dop}");
            }
        }
    }

    #[test]
    fn noiseless_forward_model_is_consistent() {
        let set = synthetic_constellation(10, 1).unwrap();
        let t = truth();
        let gen = generate_snapshot(&t, &set, &NoiseSpec::noiseless()).unwrap();
        let s = &gen.snapshot;
        assert_eq!(s.len(), 10);
        let point = LinearizationPoint {
            position: t.position,
            bias_s: t.bias_s,
        };
        let lin = linearize(s, point, &gen.flight_times, &set, false).unwrap();
        for i in 0..s.len() {
            let r = lin.phases[i] - (lin.delays_g[i] - gen.integers[i] as f64 * T_CODE + t.bias_s);
            assert!(r.abs() < 1e-12, "{i}: {r}");
            assert!((0.0..1.0).contains(&s.code_obs()[i].phi));
            // Noiseless Doppler equals the model range rate.
            let d = s.doppler_for(lin.prns[i]).unwrap();
            assert!((d + lin.range_rates[i] / SPEED_OF_LIGHT * F_L1).abs() < 1e-6);
        }
        assert!(lin.doppler_rhs.as_ref().unwrap().amax() < 1e-6);
    }

    #[test]
    fn one_code_period_of_bias_shifts_integers() {
        let set = synthetic_constellation(8, 2).unwrap();
        let t = truth();
        let a = generate_snapshot(&t, &set, &NoiseSpec::noiseless()).unwrap();
        let t2 = TruthState { bias_s: t.bias_s + T_CODE, ..t };
        let b = generate_snapshot(&t2, &set, &NoiseSpec::noiseless()).unwrap();
        for i in 0..a.snapshot.len() {
            assert!((a.snapshot.code_obs()[i].phi - b.snapshot.code_obs()[i].phi).abs() < 1e-7);
            assert_eq!(b.integers[i] - a.integers[i], 1);
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let set = synthetic_constellation(8, 3).unwrap();
        let noise = NoiseSpec {
            sigma_t: 1e-8,
            sigma_d: 1.0,
            atmosphere: true,
            seed: 42,
        };
        let a = generate_snapshot(&truth(), &set, &noise).unwrap();
        let b = generate_snapshot(&truth(), &set, &noise).unwrap();
        assert_eq!(a, b);
        let c = generate_snapshot(&truth(), &set, &NoiseSpec { seed: 43, ..noise }).unwrap();
        assert_ne!(a.snapshot, c.snapshot);
    }

    #[test]
    fn atmosphere_delays_arrivals_by_plausible_amounts() {
        let set = synthetic_constellation(10, 4).unwrap();
        let off = generate_snapshot(&truth(), &set, &NoiseSpec::noiseless()).unwrap();
        let on = generate_snapshot(&truth(), &set, &NoiseSpec { atmosphere: true, ..NoiseSpec::noiseless() }).unwrap();
        for i in 0..off.snapshot.len() {
            let a = off.snapshot.code_obs()[i].arrival_offset() - off.integers[i] as f64 * T_CODE;
            let b = on.snapshot.code_obs()[i].arrival_offset() - on.integers[i] as f64 * T_CODE;
            let meters = (b - a) * SPEED_OF_LIGHT;
            assert!((2.0..60.0).contains(&meters), "elev {}: {meters} m", off.elevations[i]);
        }
    }

    #[test]
    fn drift_biases_doppler() {
        let set = synthetic_constellation(6, 5).unwrap();
        let t = truth();
        let a = generate_snapshot(&t, &set, &NoiseSpec::noiseless()).unwrap();
        let b = generate_snapshot(&TruthState { drift_s_per_s: 1e-6, ..t }, &set, &NoiseSpec::noiseless()).unwrap();
        for o in a.snapshot.code_obs() {
            let d = b.snapshot.doppler_for(o.prn).unwrap() - a.snapshot.doppler_for(o.prn).unwrap();
            assert!((d + 1e-6 * F_L1).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_visible_is_an_error() {
        let set = synthetic_constellation(4, 6).unwrap();
        let far = geodetic_to_ecef(GeodeticPosition {
            latitude: -32.1,
            longitude: -145.2,
            height: 0.0,
        });
        let t = TruthState { position: far, ..truth() };
        assert!(matches!(
            generate_snapshot(&t, &set, &NoiseSpec::noiseless()),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn apriori_perturbation() {
        let t = truth();
        let a = perturb_apriori(&t, 0.0, 37.0, 0.0).unwrap();
        assert!(a.position.distance(t.position) < 1e-6);
        assert_eq!(a.bias_s, t.bias_s);
        let g0 = ecef_to_geodetic(t.position).unwrap();
        for d in [1.0e3, 5.0e4, 3.0e5, 1.0e7, 2.0e7] {
            for az in [0.0, 90.0, 200.0] {
                let a = perturb_apriori(&t, d, az, 100.0).unwrap();
                let g = ecef_to_geodetic(a.position).unwrap();
                assert!((g.height - g0.height).abs() < 1e-3);
                let dist = great_circle_distance(&g0, &g);
                assert!((dist - d).abs() <= 1e-3 * d, "{d} {az}: {dist}");
                assert!((a.bias_s - (t.bias_s - 100.0)).abs() < 1e-12);
            }
        }
        let anti = perturb_apriori(&t, 2.0e7, 0.0, 0.0).unwrap();
        assert!(anti.position.distance(t.position) > 1.2e7);
        assert!(anti.position.is_on_earth());
    }

    #[test]
    fn random_truths_see_the_constellation() {
        let d = ConstellationDesign::default();
        let set = synthetic_constellation(13, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let t = random_truth(&d, &mut rng, 300.0).unwrap();
            let g = generate_snapshot(&t, &set, &NoiseSpec::noiseless()).unwrap();
            assert!(g.snapshot.len() >= 11);
        }
    }
}
