//! Snapshot position solvers.
//!
//! Van Diggelen's one-shot integer resolution followed by Gauss-Newton on the
//! shadowed model, the two regularized mixed-integer formulations with an
//! outer re-linearization loop, and a Doppler-only coarse fix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::constants::{F_L1, SPEED_OF_LIGHT, T_CODE};
use crate::error::{invalid, Error, Result};
use crate::geodesy::{earth_rotation_correction, ecef_to_geodetic, EcefPosition};
use crate::ils::{solve_mils, solve_real_ls, MilsProblem, Weight};
use crate::model::{
    assemble_apriori_mils, assemble_doppler_mils, linearize, nominal_delays, AprioriState, HeightRow,
    LinearizationPoint, LinearizedSystem, Regularization, Snapshot, DEFAULT_SIGMA_D, DEFAULT_SIGMA_T,
};
use crate::nav::EphemerisSet;

/// A fix within this distance of the truth counts as a success, m.
pub const SUCCESS_RADIUS_M: f64 = 1_000.0;
/// Standard deviation of the height pseudo-measurement, m.
pub const DEFAULT_HEIGHT_SIGMA_M: f64 = 10.0;
/// Speed used to express clock corrections as distances in convergence tests, m/s.
const SHADOW_SPEED: f64 = 1_000.0;
/// Consecutive growing corrections that count as divergence.
const DIVERGENCE_STREAK: usize = 3;
const DOPPLER_ONLY_STEPS: usize = 20;
const DOPPLER_ONLY_HALVINGS: usize = 12;
/// Shortest satellite range considered when bounding linearization error, m.
const MIN_RANGE_M: f64 = 2.0e7;
/// Upper bounds on GPS satellite speed (m/s) and range acceleration (m/s^2).
const MAX_SAT_SPEED: f64 = 3_900.0;
const MAX_RANGE_ACCEL: f64 = 0.2;

/// Bound on the second-order range error of a linearization made `r_m`
/// and `t_s` away from the truth, m.
pub fn linearization_error_m(r_m: f64, t_s: f64) -> f64 {
    r_m * r_m / (2.0 * MIN_RANGE_M) + MAX_SAT_SPEED * r_m * t_s / MIN_RANGE_M + 0.5 * MAX_RANGE_ACCEL * t_s * t_s
}

/// Height the fix is held to when only four satellites are available.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightConstraint {
    pub reference_height_m: f64,
    pub sigma_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Integer re-resolution passes of the mixed-integer solvers.
    pub max_outer_iterations: usize,
    pub max_gn_iterations: usize,
    pub convergence_tol_m: f64,
    pub convergence_tol_b: f64,
    /// Used whenever exactly four satellites are available. Defaults to the
    /// a-priori height with a 10 m standard deviation.
    pub height_constraint: Option<HeightConstraint>,
    /// Polish the Doppler-regularized fix on code-phase rows only.
    pub refine_without_regularization: bool,
    pub sigma_t: f64,
    pub sigma_d_hz: f64,
    pub regularization: Regularization,
    /// Model tropospheric and (with broadcast coefficients) ionospheric delays.
    pub atmosphere: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 5,
            max_gn_iterations: 10,
            convergence_tol_m: 1.0e-4,
            convergence_tol_b: 1.0e-12,
            height_constraint: None,
            refine_without_regularization: false,
            sigma_t: DEFAULT_SIGMA_T,
            sigma_d_hz: DEFAULT_SIGMA_D,
            regularization: Regularization::default(),
            atmosphere: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iterations == 0 || self.max_gn_iterations == 0 {
            return Err(invalid("iteration limits must be positive"));
        }
        if !(self.convergence_tol_m > 0.0 && self.convergence_tol_b > 0.0) {
            return Err(invalid("convergence tolerances must be positive"));
        }
        if !(self.sigma_t > 0.0 && self.sigma_d_hz > 0.0) {
            return Err(invalid("noise levels must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    VanDiggelen,
    MilsApriori,
    MilsDoppler,
    DopplerOnly,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::VanDiggelen,
        Method::MilsApriori,
        Method::MilsDoppler,
        Method::DopplerOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::VanDiggelen => "vandiggelen",
            Method::MilsApriori => "mils-apriori",
            Method::MilsDoppler => "mils-doppler",
            Method::DopplerOnly => "doppler-only",
        }
    }

    /// Whether the method resolves code-phase integers.
    pub fn uses_code_phase(self) -> bool {
        self != Method::DopplerOnly
    }

    pub fn needs_doppler(self) -> bool {
        matches!(self, Method::MilsDoppler | Method::DopplerOnly)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fix {
    pub position: EcefPosition,
    /// Receiver clock bias, s. For Van Diggelen's method this is the coarse
    /// (shadow) time; the fine part is in `beta_s`.
    pub bias_s: f64,
    pub beta_s: Option<f64>,
    /// Resolved integers in observation order (empty for Doppler-only).
    pub integers: Vec<i64>,
    pub prns: Vec<u8>,
    /// Clock drift, s/s, when estimated.
    pub drift: Option<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
    pub method: Method,
}

impl Fix {
    pub fn error_m(&self, truth: EcefPosition) -> f64 {
        self.position.distance(truth)
    }
}

/// Runs `method` on the snapshot.
pub fn solve(
    method: Method,
    snapshot: &Snapshot,
    apriori: &AprioriState,
    eph: &EphemerisSet,
    config: &SolverConfig,
) -> Result<Fix> {
    match method {
        Method::VanDiggelen => solve_van_diggelen(snapshot, apriori, eph, config),
        Method::MilsApriori => solve_mils_apriori(snapshot, apriori, eph, config),
        Method::MilsDoppler => solve_mils_doppler(snapshot, apriori, eph, config),
        Method::DopplerOnly => solve_doppler_only(snapshot, apriori, eph, config),
    }
}

/// Flight times consistent with `point`, by fixed-point iteration from `start`.
pub fn light_time_delays(
    snapshot: &Snapshot,
    point: LinearizationPoint,
    eph: &EphemerisSet,
    start: &[f64],
    iterations: usize,
) -> Result<Vec<f64>> {
    let mut d = start.to_vec();
    for (i, o) in snapshot.code_obs().iter().enumerate() {
        for _ in 0..iterations {
            let t = snapshot
                .receiver_epoch
                .add_seconds(o.arrival_offset() - d[i] - point.bias_s);
            let pos = earth_rotation_correction(d[i], eph.find(o.prn, t)?.position(t)?);
            d[i] = point.position.distance(pos) / SPEED_OF_LIGHT;
        }
    }
    Ok(d)
}

/// Index of the satellite with the smallest |range rate|, and the integers
/// and fractional bias resolved from it.
pub fn van_diggelen_resolve(lin: &LinearizedSystem) -> Result<(Vec<i64>, f64)> {
    let m = lin.len();
    if m < 4 {
        return Err(Error::InsufficientObservations { have: m, need: 4 });
    }
    let j = (0..m)
        .min_by(|&a, &b| lin.jacobian[(a, 3)].abs().total_cmp(&lin.jacobian[(b, 3)].abs()))
        .unwrap_or(0);
    let nu_j = libm::ceil((lin.delays_g[j] - lin.phases[j]) / T_CODE);
    let mut beta = nu_j * T_CODE + lin.phases[j] - lin.delays_g[j];
    // Guard against rounding pushing beta onto the upper boundary.
    let mut nu_j = nu_j as i64;
    if beta >= T_CODE {
        beta -= T_CODE;
        nu_j -= 1;
    }
    let nu = (0..m)
        .map(|i| {
            if i == j {
                nu_j
            } else {
                libm::round((lin.delays_g[i] - lin.phases[i] + beta) / T_CODE) as i64
            }
        })
        .collect();
    Ok((nu, beta.max(0.0)))
}

fn height_row(
    m: usize,
    config: &SolverConfig,
    apriori: &AprioriState,
    current: EcefPosition,
) -> Result<Option<HeightRow>> {
    if m != 4 {
        return Ok(None);
    }
    let c = match config.height_constraint {
        Some(c) => c,
        None => HeightConstraint {
            reference_height_m: ecef_to_geodetic(apriori.position)?.height,
            sigma_m: DEFAULT_HEIGHT_SIGMA_M,
        },
    };
    log::debug!("four satellites: holding height at {:.1} m", c.reference_height_m);
    Ok(Some(HeightRow::new(current, c.reference_height_m, c.sigma_m)?))
}

/// Tracks correction sizes to detect convergence and divergence.
struct Progress {
    last: f64,
    growing: usize,
}

impl Progress {
    fn new() -> Self {
        Self {
            last: f64::INFINITY,
            growing: 0,
        }
    }

    /// Records a correction; returns true once it has grown three times in a row.
    fn diverging(&mut self, size: f64) -> bool {
        if size > self.last {
            self.growing += 1;
        } else {
            self.growing = 0;
        }
        self.last = size;
        self.growing >= DIVERGENCE_STREAK
    }
}

fn vd_system(
    lin: &LinearizedSystem,
    nu: &[i64],
    beta: f64,
    sigma_t: f64,
    height: Option<&HeightRow>,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let m = lin.len();
    let rows = m + usize::from(height.is_some());
    let mut a = DMatrix::zeros(rows, 5);
    let mut y = DVector::zeros(rows);
    let mut w = DVector::from_element(rows, 1.0 / sigma_t);
    for i in 0..m {
        for k in 0..4 {
            a[(i, k)] = lin.jacobian[(i, k)] / SPEED_OF_LIGHT;
        }
        a[(i, 4)] = 1.0;
        y[i] = lin.phases[i] - lin.delays_g[i] + nu[i] as f64 * T_CODE - beta;
    }
    if let Some(h) = height {
        for k in 0..3 {
            a[(m, k)] = h.up[k];
        }
        y[m] = h.misclosure_m;
        w[m] = 1.0 / h.sigma_m;
    }
    (a, y, w)
}

/// Gauss-Newton on position, coarse time and fractional bias with the
/// integers held at `nu`.
pub fn gauss_newton_fix(
    snapshot: &Snapshot,
    apriori: &AprioriState,
    eph: &EphemerisSet,
    nu: &[i64],
    beta0: f64,
    config: &SolverConfig,
) -> Result<Fix> {
    config.validate()?;
    let m = snapshot.len();
    if nu.len() != m {
        return Err(invalid("one integer per observation required"));
    }
    let mut point = apriori.point();
    let mut beta = beta0;
    let mut d = light_time_delays(snapshot, point, eph, &nominal_delays(snapshot), 2)?;
    let mut progress = Progress::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..config.max_gn_iterations {
        iterations += 1;
        let lin = linearize(snapshot, point, &d, eph, config.atmosphere)?;
        let height = height_row(m, config, apriori, point.position)?;
        let (a, y, w) = vd_system(&lin, nu, beta, config.sigma_t, height.as_ref());
        if a.nrows() < 5 {
            return Err(Error::Degenerate("five unknowns need five rows".into()));
        }
        let step = solve_real_ls(&a, &y, &Weight::Diagonal(w))?;
        let dl = Vector3::new(step[0], step[1], step[2]);
        point.position = EcefPosition::from_vector(&(point.position.to_vector() + dl));
        point.bias_s += step[3];
        beta += step[4];
        if !point.position.is_finite() || !point.bias_s.is_finite() {
            return Err(Error::Numerical("Gauss-Newton produced a non-finite state".into()));
        }
        d = light_time_delays(snapshot, point, eph, &lin.light_times(), 1)?;
        let size_m = dl.norm() + step[3].abs() * SHADOW_SPEED;
        if size_m < config.convergence_tol_m && step[4].abs() < config.convergence_tol_b {
            converged = true;
            break;
        }
        if progress.diverging(size_m + step[4].abs() * SPEED_OF_LIGHT) {
            log::debug!("Gauss-Newton corrections grew {DIVERGENCE_STREAK} times in a row");
            break;
        }
    }
    let lin = linearize(snapshot, point, &d, eph, config.atmosphere)?;
    let height = height_row(m, config, apriori, point.position)?;
    let (_, y, w) = vd_system(&lin, nu, beta, config.sigma_t, height.as_ref());
    Ok(Fix {
        position: point.position,
        bias_s: point.bias_s,
        beta_s: Some(beta),
        integers: nu.to_vec(),
        prns: snapshot.prns(),
        drift: None,
        iterations,
        residual_norm: y.component_mul(&w).norm(),
        converged,
        method: Method::VanDiggelen,
    })
}

/// Resolves the integers once at the a priori and iterates on the
/// continuous unknowns.
pub fn solve_van_diggelen(
    snapshot: &Snapshot,
    apriori: &AprioriState,
    eph: &EphemerisSet,
    config: &SolverConfig,
) -> Result<Fix> {
    config.validate()?;
    let lin = linearize(snapshot, apriori.point(), &nominal_delays(snapshot), eph, config.atmosphere)?;
    let (nu, beta) = van_diggelen_resolve(&lin)?;
    gauss_newton_fix(snapshot, apriori, eph, &nu, beta, config)
}

#[derive(Clone, Copy, PartialEq)]
enum Regularizer {
    Apriori,
    Doppler,
}

struct MilsState {
    point: LinearizationPoint,
    nbar: Vec<i64>,
    ubar: f64,
    d: Vec<f64>,
}

fn assemble(
    kind: Regularizer,
    lin: &LinearizedSystem,
    st: &MilsState,
    config: &SolverConfig,
    height: Option<&HeightRow>,
) -> Result<MilsProblem> {
    match kind {
        Regularizer::Apriori => {
            assemble_apriori_mils(lin, &st.nbar, config.sigma_t, config.regularization, height)
        }
        Regularizer::Doppler => {
            assemble_doppler_mils(lin, &st.nbar, st.ubar, config.sigma_t, config.sigma_d_hz, height)
        }
    }
}

/// Code-phase rows only, with the integers fixed at `nbar`.
fn code_rows_only(lin: &LinearizedSystem, nbar: &[i64], sigma_t: f64, height: Option<&HeightRow>) -> MilsProblem {
    let m = lin.len();
    let rows = m + usize::from(height.is_some());
    let mut a = DMatrix::zeros(rows, 4);
    let mut y = DVector::zeros(rows);
    let mut w = DVector::from_element(rows, 1.0 / sigma_t);
    for i in 0..m {
        for k in 0..4 {
            a[(i, k)] = lin.jacobian[(i, k)] / SPEED_OF_LIGHT;
        }
        a[(i, 3)] += 1.0;
        y[i] = lin.phases[i] - lin.delays_g[i] + nbar[i] as f64 * T_CODE - lin.point.bias_s;
    }
    if let Some(h) = height {
        for k in 0..3 {
            a[(m, k)] = h.up[k];
        }
        y[m] = h.misclosure_m;
        w[m] = 1.0 / h.sigma_m;
    }
    MilsProblem {
        real_block: a,
        int_block: DMatrix::zeros(rows, 0),
        rhs: y,
        weight: Weight::Diagonal(w),
    }
}

fn apply_real_step(st: &mut MilsState, x: &DVector<f64>) -> Result<(f64, f64)> {
    let dl = Vector3::new(x[0], x[1], x[2]);
    st.point.position = EcefPosition::from_vector(&(st.point.position.to_vector() + dl));
    st.point.bias_s += x[3];
    if x.len() > 4 {
        st.ubar += x[4];
    }
    if !st.point.position.is_finite() || !st.point.bias_s.is_finite() {
        return Err(Error::Numerical("mixed-integer iteration produced a non-finite state".into()));
    }
    Ok((dl.norm(), x[3].abs()))
}

fn weighted_rhs_norm(p: &MilsProblem) -> f64 {
    match &p.weight {
        Weight::Identity => p.rhs.norm(),
        Weight::Diagonal(w) => p.rhs.component_mul(w).norm(),
        Weight::Full(w) => (w * &p.rhs).norm(),
    }
}

fn solve_mils_outer(
    kind: Regularizer,
    snapshot: &Snapshot,
    apriori: &AprioriState,
    eph: &EphemerisSet,
    config: &SolverConfig,
) -> Result<Fix> {
    config.validate()?;
    let m = snapshot.len();
    let method = match kind {
        Regularizer::Apriori => Method::MilsApriori,
        Regularizer::Doppler => Method::MilsDoppler,
    };
    if kind == Regularizer::Doppler && !snapshot.has_full_doppler() {
        return Err(invalid("MILS with Doppler regularization needs Doppler for every satellite"));
    }
    let point = apriori.point();
    let d = nominal_delays(snapshot);
    // Integers implied by the a priori, so that corrections stay small.
    let lin0 = linearize(snapshot, point, &d, eph, config.atmosphere)?;
    let nbar = (0..m)
        .map(|i| libm::round((lin0.delays_g[i] - lin0.phases[i] + point.bias_s) / T_CODE) as i64)
        .collect();
    let mut st = MilsState {
        point,
        nbar,
        ubar: 0.0,
        d,
    };
    let mut iterations = 0;
    let mut settled = false;
    // Distance and time the linearization point may be off by. While the
    // implied linearization error exceeds the noise, the code-phase rows are
    // down-weighted so that it cannot pull the integers far away.
    let b = apriori.bounds;
    let mut reach = (Vector3::new(b.x_max, b.y_max, b.z_max).norm(), b.b_max);
    for outer in 0..config.max_outer_iterations {
        iterations += 1;
        let lin_err = linearization_error_m(reach.0, reach.1) / SPEED_OF_LIGHT;
        let nominal = lin_err <= config.sigma_t;
        let pass = SolverConfig {
            sigma_t: libm::hypot(config.sigma_t, lin_err),
            ..*config
        };
        let lin = linearize(snapshot, st.point, &st.d, eph, config.atmosphere)?;
        let height = height_row(m, config, apriori, st.point.position)?;
        let problem = assemble(kind, &lin, &st, &pass, height.as_ref())?;
        let sol = solve_mils(&problem, 1)?;
        reach = apply_real_step(&mut st, &sol.real_part)?;
        for (n, dn) in st.nbar.iter_mut().zip(&sol.int_part) {
            *n += dn;
        }
        st.d = light_time_delays(snapshot, st.point, eph, &lin.light_times(), 2)?;
        log::trace!("outer {outer}: step {:.1} m {:.6} s", reach.0, reach.1);
        if nominal && sol.int_part.iter().all(|&v| v == 0) {
            settled = true;
            break;
        }
    }

    // Continuous polish with the integers held.
    let polish_code_only = kind == Regularizer::Doppler && config.refine_without_regularization;
    let mut progress = Progress::new();
    let mut polished = false;
    for _ in 0..config.max_gn_iterations {
        iterations += 1;
        let lin = linearize(snapshot, st.point, &st.d, eph, config.atmosphere)?;
        let height = height_row(m, config, apriori, st.point.position)?;
        let problem = if polish_code_only {
            code_rows_only(&lin, &st.nbar, config.sigma_t, height.as_ref())
        } else {
            assemble(kind, &lin, &st, config, height.as_ref())?
        };
        let x = solve_real_ls(&problem.real_block, &problem.rhs, &problem.weight)?;
        let (dl, db) = apply_real_step(&mut st, &x)?;
        st.d = light_time_delays(snapshot, st.point, eph, &lin.light_times(), 1)?;
        if dl < config.convergence_tol_m && db < config.convergence_tol_b {
            polished = true;
            break;
        }
        if progress.diverging(dl + db * SPEED_OF_LIGHT) {
            break;
        }
    }

    let lin = linearize(snapshot, st.point, &st.d, eph, config.atmosphere)?;
    let height = height_row(m, config, apriori, st.point.position)?;
    let final_problem = assemble(kind, &lin, &st, config, height.as_ref())?;
    if !settled && polished {
        // The integers were still moving when the outer budget ran out;
        // accept them only if a fresh resolution leaves them unchanged.
        let check = solve_mils(&final_problem, 1)?;
        settled = check.int_part.iter().all(|&v| v == 0);
    }
    Ok(Fix {
        position: st.point.position,
        bias_s: st.point.bias_s,
        beta_s: None,
        integers: st.nbar,
        prns: snapshot.prns(),
        drift: (kind == Regularizer::Doppler).then_some(st.ubar),
        iterations,
        residual_norm: weighted_rhs_norm(&final_problem),
        converged: settled && polished,
        method,
    })
}

/// Mixed-integer least squares regularized by the a-priori state.
pub fn solve_mils_apriori(
    snapshot: &Snapshot,
    apriori: &AprioriState,
    eph: &EphemerisSet,
    config: &SolverConfig,
) -> Result<Fix> {
    solve_mils_outer(Regularizer::Apriori, snapshot, apriori, eph, config)
}

/// Mixed-integer least squares regularized by Doppler observations.
pub fn solve_mils_doppler(
    snapshot: &Snapshot,
    apriori: &AprioriState,
    eph: &EphemerisSet,
    config: &SolverConfig,
) -> Result<Fix> {
    solve_mils_outer(Regularizer::Doppler, snapshot, apriori, eph, config)
}

/// Damped Gauss-Newton on Doppler residuals over position, coarse time and
/// receiver frequency offset.
pub fn solve_doppler_only(
    snapshot: &Snapshot,
    apriori: &AprioriState,
    eph: &EphemerisSet,
    config: &SolverConfig,
) -> Result<Fix> {
    config.validate()?;
    let m = snapshot.len();
    let have = snapshot
        .code_obs()
        .iter()
        .filter(|o| snapshot.doppler_for(o.prn).is_some())
        .count();
    if have < 5 {
        return Err(Error::InsufficientObservations { have, need: 5 });
    }
    if have < m {
        return Err(invalid("Doppler-only fixes need Doppler for every listed satellite"));
    }
    let weight = Weight::Diagonal(DVector::from_element(m, 1.0 / (SPEED_OF_LIGHT / F_L1 * config.sigma_d_hz)));
    let mut point = apriori.point();
    // Receiver frequency offset expressed as a range-rate bias, m/s.
    let mut offset = 0.0;
    let mut d = nominal_delays(snapshot);

    let evaluate = |p: LinearizationPoint, d: &[f64], offset: f64| -> Result<(LinearizedSystem, DVector<f64>)> {
        let lin = linearize(snapshot, p, d, eph, false)?;
        let r = lin.doppler_rhs.clone().ok_or_else(|| invalid("Doppler observations missing"))?
            - DVector::from_element(m, offset);
        Ok((lin, r))
    };
    let cost = |r: &DVector<f64>| r.norm_squared();

    let (mut lin, mut resid) = evaluate(point, &d, offset)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut progress = Progress::new();
    for _ in 0..DOPPLER_ONLY_STEPS {
        iterations += 1;
        let mut a = DMatrix::zeros(m, 5);
        a.view_mut((0, 0), (m, 4)).copy_from(&lin.dh14);
        a.set_column(4, &DVector::from_element(m, 1.0));
        let step = solve_real_ls(&a, &resid, &weight)?;
        let base = cost(&resid);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..DOPPLER_ONLY_HALVINGS {
            let trial = LinearizationPoint {
                position: EcefPosition::from_vector(
                    &(point.position.to_vector() + Vector3::new(step[0], step[1], step[2]) * scale),
                ),
                bias_s: point.bias_s + step[3] * scale,
            };
            let trial_offset = offset + step[4] * scale;
            let trial_d = light_time_delays(snapshot, trial, eph, &d, 1)?;
            if let Ok((l, r)) = evaluate(trial, &trial_d, trial_offset) {
                if cost(&r) <= base || scale < 1.0 / 1024.0 {
                    accepted = Some((trial, trial_offset, trial_d, l, r));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((p, o, nd, l, r)) = accepted else {
            break;
        };
        let moved = p.position.distance(point.position);
        let dt = (p.bias_s - point.bias_s).abs();
        point = p;
        offset = o;
        d = nd;
        lin = l;
        resid = r;
        if moved < config.convergence_tol_m.max(1.0e-3) && dt * SHADOW_SPEED < config.convergence_tol_m.max(1.0e-3) {
            converged = true;
            break;
        }
        if progress.diverging(moved + dt * SHADOW_SPEED) {
            break;
        }
    }
    let w = 1.0 / (SPEED_OF_LIGHT / F_L1 * config.sigma_d_hz);
    Ok(Fix {
        position: point.position,
        bias_s: point.bias_s,
        beta_s: None,
        integers: vec![],
        prns: snapshot.prns(),
        drift: Some(offset / SPEED_OF_LIGHT),
        iterations,
        residual_norm: resid.norm() * w,
        converged,
        method: Method::DopplerOnly,
    })
}

/// One linearize-assemble-solve correction of `method` at the a priori,
/// returning the real-valued correction. Used for timing.
pub fn correction_step(
    method: Method,
    snapshot: &Snapshot,
    apriori: &AprioriState,
    eph: &EphemerisSet,
    config: &SolverConfig,
) -> Result<DVector<f64>> {
    let point = apriori.point();
    let lin = linearize(snapshot, point, &nominal_delays(snapshot), eph, config.atmosphere)?;
    let m = lin.len();
    let height = height_row(m, config, apriori, point.position)?;
    match method {
        Method::VanDiggelen => {
            let (nu, beta) = van_diggelen_resolve(&lin)?;
            let (a, y, w) = vd_system(&lin, &nu, beta, config.sigma_t, height.as_ref());
            solve_real_ls(&a, &y, &Weight::Diagonal(w))
        }
        Method::MilsApriori | Method::MilsDoppler => {
            let nbar = (0..m)
                .map(|i| libm::round((lin.delays_g[i] - lin.phases[i] + point.bias_s) / T_CODE) as i64)
                .collect();
            let st = MilsState {
                point,
                nbar,
                ubar: 0.0,
                d: Vec::new(),
            };
            let kind = if method == Method::MilsApriori {
                Regularizer::Apriori
            } else {
                Regularizer::Doppler
            };
            let problem = assemble(kind, &lin, &st, config, height.as_ref())?;
            Ok(solve_mils(&problem, 1)?.real_part)
        }
        Method::DopplerOnly => {
            let r = lin.doppler_rhs.clone().ok_or_else(|| invalid("Doppler observations missing"))?;
            let mut a = DMatrix::zeros(m, 5);
            a.view_mut((0, 0), (m, 4)).copy_from(&lin.dh14);
            a.set_column(4, &DVector::from_element(m, 1.0));
            solve_real_ls(&a, &r, &Weight::Identity)
        }
    }
}
