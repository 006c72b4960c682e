//! Weighted mixed-integer least squares.
//!
//! Minimizes `||W (A x + B z - y)||` over real `x` and integer `z`. The real
//! block is eliminated with a Householder QR, the remaining integer problem
//! is reduced with LLL-style column operations and searched depth first with
//! Schnorr-Euchner enumeration and a shrinking radius.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lovász condition parameter of the reduction.
const LLL_DELTA: f64 = 0.75;
/// Relative slack applied to the search radius so near-ties are retained.
const RADIUS_SLACK: f64 = 1.0e-9;
/// Relative tolerance under which two residuals count as tied.
const TIE_TOL: f64 = 1.0e-12;
/// A diagonal entry of a triangular factor below this fraction of its
/// column norm marks a rank-deficient column.
const RANK_TOL: f64 = 1.0e-13;

/// Row weighting with `W^T W = C^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Identity,
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Weight {
    fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Weight::Identity => m.clone(),
            Weight::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= d[i];
                }
                out
            }
            Weight::Full(w) => w * m,
        }
    }

    fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Weight::Identity => v.clone(),
            Weight::Diagonal(d) => v.component_mul(d),
            Weight::Full(w) => w * v,
        }
    }

    fn check(&self, rows: usize) -> Result<()> {
        match self {
            Weight::Identity => Ok(()),
            Weight::Diagonal(d) => {
                if d.len() != rows {
                    return Err(Error::InvalidInput(format!(
                        "weight has {} entries for {rows} rows",
                        d.len()
                    )));
                }
                if d.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                    return Err(Error::InvalidInput("diagonal weights must be positive".into()));
                }
                Ok(())
            }
            Weight::Full(w) => {
                if w.nrows() != rows || w.ncols() != rows {
                    return Err(Error::InvalidInput("weight matrix must be square".into()));
                }
                Ok(())
            }
        }
    }
}

/// `min ||W (A x + B z - y)||` with real `x` (p entries) and integer `z` (q entries).
#[derive(Debug, Clone, PartialEq)]
pub struct MilsProblem {
    pub real_block: DMatrix<f64>,
    pub int_block: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub weight: Weight,
}

impl MilsProblem {
    pub fn new(
        real_block: DMatrix<f64>,
        int_block: DMatrix<f64>,
        rhs: DVector<f64>,
        weight: Weight,
    ) -> Result<Self> {
        let m = rhs.len();
        if real_block.nrows() != m || int_block.nrows() != m {
            return Err(Error::InvalidInput("block row counts differ from rhs".into()));
        }
        if m < real_block.ncols() + 1 {
            return Err(Error::InvalidInput(format!(
                "{m} rows cannot support {} real unknowns",
                real_block.ncols()
            )));
        }
        weight.check(m)?;
        Ok(Self {
            real_block,
            int_block,
            rhs,
            weight,
        })
    }

    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn real_unknowns(&self) -> usize {
        self.real_block.ncols()
    }

    pub fn int_unknowns(&self) -> usize {
        self.int_block.ncols()
    }

    /// `||W (A x + B z - y)||` for a given pair.
    pub fn residual_norm(&self, x: &DVector<f64>, z: &[i64]) -> f64 {
        let zf = DVector::from_iterator(z.len(), z.iter().map(|&v| v as f64));
        let mut r = &self.real_block * x - &self.rhs;
        if !z.is_empty() {
            r += &self.int_block * zf;
        }
        self.weight.apply_vec(&r).norm()
    }
}

/// One integer hypothesis and its residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub int_part: Vec<i64>,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilsSolution {
    pub real_part: DVector<f64>,
    pub int_part: Vec<i64>,
    pub residual_norm: f64,
    /// Best hypotheses in ascending residual order; the first equals `int_part`.
    pub candidates: Vec<Candidate>,
    /// Nodes visited by the enumeration.
    pub nodes_visited: usize,
}

/// Solver switches; the defaults are what [`solve_mils`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MilsOptions {
    pub n_candidates: usize,
    pub reduce: bool,
}

impl Default for MilsOptions {
    fn default() -> Self {
        Self {
            n_candidates: 1,
            reduce: true,
        }
    }
}

/// Global minimizer over integer `z` with the real part solved exactly.
pub fn solve_mils(problem: &MilsProblem, n_candidates: usize) -> Result<MilsSolution> {
    solve_mils_with(
        problem,
        MilsOptions {
            n_candidates,
            ..MilsOptions::default()
        },
    )
}

pub fn solve_mils_with(problem: &MilsProblem, opts: MilsOptions) -> Result<MilsSolution> {
    if opts.n_candidates == 0 {
        return Err(Error::InvalidInput("n_candidates must be at least 1".into()));
    }
    let p = problem.real_unknowns();
    let q = problem.int_unknowns();
    let m = problem.rows();
    if m < p + q {
        return Err(Error::Degenerate(format!(
            "{m} rows for {p} real and {q} integer unknowns"
        )));
    }
    let wa = problem.weight.apply(&problem.real_block);
    let wb = problem.weight.apply(&problem.int_block);
    let wy = problem.weight.apply_vec(&problem.rhs);

    // Augmented [WA | WB | Wy], triangularized column by column.
    let mut aug = DMatrix::<f64>::zeros(m, p + q + 1);
    aug.view_mut((0, 0), (m, p)).copy_from(&wa);
    aug.view_mut((0, p), (m, q)).copy_from(&wb);
    aug.set_column(p + q, &wy);
    householder_triangularize(&mut aug, 0, p, "real block")?;
    householder_triangularize(&mut aug, p, p + q, "integer block")?;

    let real_factor = aug.view((0, 0), (p, p)).into_owned();
    let coupling = aug.view((0, p), (p, q)).into_owned();
    let real_target = aug.view((0, p + q), (p, 1)).column(0).into_owned();

    let solve_real = |z: &[i64]| -> DVector<f64> {
        let mut rhs = real_target.clone();
        if q > 0 {
            let zf = DVector::from_iterator(q, z.iter().map(|&v| v as f64));
            rhs -= &coupling * zf;
        }
        back_substitute(&real_factor, &rhs)
    };

    if q == 0 {
        let x = solve_real(&[]);
        let residual_norm = problem.residual_norm(&x, &[]);
        return Ok(MilsSolution {
            real_part: x,
            int_part: Vec::new(),
            residual_norm,
            candidates: vec![Candidate {
                int_part: Vec::new(),
                residual_norm,
            }],
            nodes_visited: 0,
        });
    }

    let mut lattice = aug.view((p, p), (q, q)).into_owned();
    let mut target = aug.view((p, p + q), (q, 1)).column(0).into_owned();
    let transform = if opts.reduce {
        let (z, r, y) = reduce_with_target(&lattice, &target)?;
        lattice = r;
        target = y;
        Some(z)
    } else {
        None
    };

    let keep = opts.n_candidates;
    let search = schnorr_euchner(&lattice, &target, keep)?;
    let mut candidates: Vec<(Vec<i64>, DVector<f64>, f64)> = search
        .leaves
        .into_iter()
        .map(|(_, w)| {
            let z = match &transform {
                Some(t) => mul_int(t, &w),
                None => w,
            };
            let x = solve_real(&z);
            let r = problem.residual_norm(&x, &z);
            (z, x, r)
        })
        .collect();
    candidates.sort_by(|a, b| compare_candidates((&a.0, a.2), (&b.0, b.2)));
    candidates.truncate(keep);
    let (int_part, real_part, residual_norm) = candidates[0].clone();
    Ok(MilsSolution {
        real_part,
        int_part,
        residual_norm,
        candidates: candidates
            .into_iter()
            .map(|(z, _, r)| Candidate {
                int_part: z,
                residual_norm: r,
            })
            .collect(),
        nodes_visited: search.nodes,
    })
}

/// Orders by residual, treating residuals within [`TIE_TOL`] as equal and
/// then preferring the lexicographically smallest integer vector.
pub fn compare_candidates(a: (&[i64], f64), b: (&[i64], f64)) -> Ordering {
    let scale = a.1.abs().max(b.1.abs()).max(f64::MIN_POSITIVE);
    if (a.1 - b.1).abs() <= TIE_TOL * scale {
        a.0.cmp(b.0)
    } else {
        a.1.total_cmp(&b.1)
    }
}

/// Weighted real least squares `min ||W (A x - y)||` through a QR of `W A`.
pub fn solve_real_ls(a: &DMatrix<f64>, y: &DVector<f64>, weight: &Weight) -> Result<DVector<f64>> {
    let (m, p) = a.shape();
    if y.len() != m {
        return Err(Error::InvalidInput("rhs length differs from row count".into()));
    }
    if m < p {
        return Err(Error::Degenerate(format!("{m} rows for {p} unknowns")));
    }
    weight.check(m)?;
    let mut aug = DMatrix::<f64>::zeros(m, p + 1);
    aug.view_mut((0, 0), (m, p)).copy_from(&weight.apply(a));
    aug.set_column(p, &weight.apply_vec(y));
    householder_triangularize(&mut aug, 0, p, "design matrix")?;
    let r = aug.view((0, 0), (p, p)).into_owned();
    let t = aug.view((0, p), (p, 1)).column(0).into_owned();
    Ok(back_substitute(&r, &t))
}

/// Applies Householder reflections that zero the subdiagonal of columns
/// `from..to` (using rows `from..`), updating every column to the right.
fn householder_triangularize(
    aug: &mut DMatrix<f64>,
    from: usize,
    to: usize,
    what: &str,
) -> Result<()> {
    let m = aug.nrows();
    let ncols = aug.ncols();
    for k in from..to {
        let row0 = k;
        if row0 >= m {
            return Err(Error::Degenerate(format!("{what}: more unknowns than rows")));
        }
        let full_norm = aug.column(k).norm();
        let mut alpha = 0.0;
        for i in row0..m {
            alpha += aug[(i, k)] * aug[(i, k)];
        }
        let alpha = alpha.sqrt();
        if !(alpha > RANK_TOL * full_norm) || !alpha.is_finite() {
            return Err(Error::Degenerate(format!("{what}: rank deficient at column {}", k - from)));
        }
        let sign = if aug[(row0, k)] >= 0.0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = (row0..m).map(|i| aug[(i, k)]).collect();
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        for j in k..ncols {
            let dot: f64 = (row0..m).map(|i| v[i - row0] * aug[(i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in row0..m {
                aug[(i, j)] -= f * v[i - row0];
            }
        }
        for i in row0 + 1..m {
            aug[(i, k)] = 0.0;
        }
    }
    Ok(())
}

fn back_substitute(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = r.nrows();
    let mut x = DVector::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

fn mul_int(z: &DMatrix<i64>, w: &[i64]) -> Vec<i64> {
    (0..z.nrows())
        .map(|i| (0..z.ncols()).map(|j| z[(i, j)] * w[j]).sum())
        .collect()
}

/// Lattice reduction of an upper-triangular factor.
///
/// Returns a unimodular `Z` and a reduced upper-triangular `R'` with
/// `Q R Z = R'` for an orthogonal `Q`.
pub fn reduce_lattice(r: &DMatrix<f64>) -> Result<(DMatrix<i64>, DMatrix<f64>)> {
    let y = DVector::zeros(r.nrows());
    let (z, reduced, _) = reduce_with_target(r, &y)?;
    Ok((z, reduced))
}

/// As [`reduce_lattice`], also rotating a target vector so that
/// `||y - R z|| = ||y' - R' w||` with `z = Z w`.
pub fn reduce_with_target(
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DMatrix<i64>, DMatrix<f64>, DVector<f64>)> {
    let n = r.nrows();
    if r.ncols() != n || y.len() != n {
        return Err(Error::InvalidInput("reduction needs a square factor".into()));
    }
    for i in 0..n {
        if !(r[(i, i)].abs() > 0.0) || !r[(i, i)].is_finite() {
            return Err(Error::Degenerate("singular lattice basis".into()));
        }
        for j in 0..i {
            if r[(i, j)] != 0.0 {
                return Err(Error::InvalidInput("lattice basis must be upper triangular".into()));
            }
        }
    }
    let mut r = r.clone();
    let mut y = y.clone();
    let mut z = DMatrix::<i64>::identity(n, n);
    if n < 2 {
        return Ok((z, r, y));
    }
    let mut k = 1;
    let mut guard = 0usize;
    while k < n {
        guard += 1;
        if guard > 100_000 {
            return Err(Error::Numerical("lattice reduction did not terminate".into()));
        }
        size_reduce(&mut r, &mut z, k - 1, k);
        let a = r[(k - 1, k - 1)];
        let b = r[(k - 1, k)];
        let c = r[(k, k)];
        if LLL_DELTA * a * a > b * b + c * c {
            r.swap_columns(k - 1, k);
            z.swap_columns(k - 1, k);
            // Restore triangularity with a Givens rotation on rows k-1, k.
            let (x0, x1) = (r[(k - 1, k - 1)], r[(k, k - 1)]);
            let h = x0.hypot(x1);
            let (cs, sn) = (x0 / h, x1 / h);
            for j in (k - 1)..n {
                let (u, v) = (r[(k - 1, j)], r[(k, j)]);
                r[(k - 1, j)] = cs * u + sn * v;
                r[(k, j)] = -sn * u + cs * v;
            }
            r[(k, k - 1)] = 0.0;
            let (u, v) = (y[k - 1], y[k]);
            y[k - 1] = cs * u + sn * v;
            y[k] = -sn * u + cs * v;
            if k > 1 {
                k -= 1;
            }
        } else {
            for i in (0..k - 1).rev() {
                size_reduce(&mut r, &mut z, i, k);
            }
            k += 1;
        }
    }
    Ok((z, r, y))
}

/// Integer Gauss transform making `|r[i][k]| <= |r[i][i]| / 2`.
fn size_reduce(r: &mut DMatrix<f64>, z: &mut DMatrix<i64>, i: usize, k: usize) {
    let mu = (r[(i, k)] / r[(i, i)]).round();
    if mu == 0.0 {
        return;
    }
    let mu_i = mu as i64;
    for row in 0..=i {
        r[(row, k)] -= mu * r[(row, i)];
    }
    for row in 0..z.nrows() {
        z[(row, k)] -= mu_i * z[(row, i)];
    }
}

pub(crate) struct SearchResult {
    /// Retained leaves as (squared metric, integer vector), ascending.
    pub leaves: Vec<(f64, Vec<i64>)>,
    pub nodes: usize,
}

/// Depth-first Schnorr-Euchner enumeration of `min ||y - R w||^2` for
/// upper-triangular `R`, keeping the `keep` best leaves plus near-ties.
pub(crate) fn schnorr_euchner(r: &DMatrix<f64>, y: &DVector<f64>, keep: usize) -> Result<SearchResult> {
    let n = r.nrows();
    // Babai point seeds the radius.
    let mut babai = vec![0i64; n];
    let mut babai_metric = 0.0;
    for k in (0..n).rev() {
        let mut s = y[k];
        for j in k + 1..n {
            s -= r[(k, j)] * babai[j] as f64;
        }
        let c = s / r[(k, k)];
        babai[k] = c.round() as i64;
        let g = r[(k, k)] * (c - babai[k] as f64);
        babai_metric += g * g;
    }
    if !babai_metric.is_finite() {
        return Err(Error::Numerical("enumeration radius could not be initialized".into()));
    }
    let slack = |v: f64| v * (1.0 + RADIUS_SLACK) + f64::MIN_POSITIVE;
    let mut radius = if keep == 1 { slack(babai_metric) } else { f64::INFINITY };

    let mut leaves: Vec<(f64, Vec<i64>)> = Vec::new();
    let mut w = vec![0i64; n];
    let mut c = vec![0.0f64; n];
    let mut step = vec![0i64; n];
    let mut dist = vec![0.0f64; n + 1];
    let sgn = |x: f64| if x > 0.0 { 1 } else { -1 };
    let mut nodes = 0usize;

    let mut k = n - 1;
    c[k] = y[k] / r[(k, k)];
    w[k] = c[k].round() as i64;
    step[k] = sgn(c[k] - w[k] as f64);
    let mut gamma = r[(k, k)] * (c[k] - w[k] as f64);
    loop {
        nodes += 1;
        let newdist = dist[k + 1] + gamma * gamma;
        if newdist <= radius {
            if k > 0 {
                dist[k] = newdist;
                k -= 1;
                let mut s = y[k];
                for j in k + 1..n {
                    s -= r[(k, j)] * w[j] as f64;
                }
                c[k] = s / r[(k, k)];
                w[k] = c[k].round() as i64;
                step[k] = sgn(c[k] - w[k] as f64);
                gamma = r[(k, k)] * (c[k] - w[k] as f64);
                continue;
            }
            leaves.push((newdist, w.clone()));
            leaves.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            if leaves.len() >= keep {
                radius = radius.min(slack(leaves[keep - 1].0));
                leaves.retain(|l| l.0 <= radius);
            }
            w[0] += step[0];
            gamma = r[(0, 0)] * (c[0] - w[0] as f64);
            step[0] = -step[0] - sgn(step[0] as f64);
        } else {
            if k == n - 1 {
                break;
            }
            k += 1;
            w[k] += step[k];
            gamma = r[(k, k)] * (c[k] - w[k] as f64);
            step[k] = -step[k] - sgn(step[k] as f64);
        }
    }
    if leaves.is_empty() {
        leaves.push((babai_metric, babai));
    }
    Ok(SearchResult { leaves, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn identity_lattice_rounds() {
        let p = MilsProblem::new(
            DMatrix::zeros(2, 0),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![2.3, -1.7]),
            Weight::Identity,
        )
        .unwrap();
        let s = solve_mils(&p, 1).unwrap();
        assert_eq!(s.int_part, vec![2, -2]);
        assert!((s.residual_norm - (0.09f64 + 0.09).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn consistent_system_recovered_exactly() {
        let a = mat(5, 2, &[1.0, 0.5, -2.0, 1.0, 0.3, 0.7, 1.1, -0.4, 0.0, 2.0]);
        let b = mat(5, 2, &[0.9, 0.1, 0.2, 1.3, -0.7, 0.4, 0.5, 0.5, 1.0, -1.0]);
        let x = DVector::from_vec(vec![0.25, -1.5]);
        let z = [3i64, -7];
        let y = &a * &x + &b * DVector::from_vec(vec![3.0, -7.0]);
        let p = MilsProblem::new(a, b, y, Weight::Identity).unwrap();
        let s = solve_mils(&p, 1).unwrap();
        assert_eq!(s.int_part, z.to_vec());
        assert!((s.real_part - x).norm() < 1e-12);
        assert!(s.residual_norm < 1e-12);
    }

    #[test]
    fn half_integer_tie_prefers_lexicographic_minimum() {
        let p = MilsProblem::new(
            DMatrix::zeros(1, 0),
            DMatrix::identity(1, 1),
            DVector::from_vec(vec![0.5]),
            Weight::Identity,
        )
        .unwrap();
        let s = solve_mils(&p, 2).unwrap();
        assert_eq!(s.int_part, vec![0]);
        assert_eq!(s.candidates[1].int_part, vec![1]);
    }

    #[test]
    fn rank_deficient_real_block_is_degenerate() {
        let a = mat(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        let p = MilsProblem::new(a, DMatrix::identity(4, 1), DVector::zeros(4), Weight::Identity)
            .unwrap();
        assert!(matches!(solve_mils(&p, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn bad_weights_rejected() {
        let w = Weight::Diagonal(DVector::from_vec(vec![1.0, -1.0]));
        assert!(MilsProblem::new(DMatrix::zeros(2, 0), DMatrix::identity(2, 2), DVector::zeros(2), w)
            .is_err());
    }

    #[test]
    fn real_ls_square_and_overdetermined() {
        let a = mat(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let y = &a * &x;
        let got = solve_real_ls(&a, &y, &Weight::Identity).unwrap();
        assert!((got - &x).norm() < 1e-12);

        let a = mat(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let x = DVector::from_vec(vec![3.0, 4.0]);
        let got = solve_real_ls(&a, &(&a * &x), &Weight::Identity).unwrap();
        assert!((got - &x).norm() < 1e-12);
    }

    #[test]
    fn real_ls_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (m, p) = (rng.random_range(3..10), rng.random_range(1..3));
            let a = DMatrix::from_fn(m, p, |_, _| rng.random_range(-5.0..5.0));
            let y = DVector::from_fn(m, |_, _| rng.random_range(-5.0..5.0));
            let w = DVector::from_fn(m, |_, _| rng.random_range(0.5..2.0));
            let got = solve_real_ls(&a, &y, &Weight::Diagonal(w.clone())).unwrap();
            let wm = DMatrix::from_diagonal(&w.component_mul(&w));
            let normal = (a.transpose() * &wm * &a)
                .try_inverse()
                .unwrap()
                * a.transpose()
                * &wm
                * &y;
            assert!((&got - &normal).norm() <= 1e-9 * normal.norm().max(1.0));
        }
    }

    #[test]
    fn reduced_diagonal_is_untouched() {
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let (z, reduced) = reduce_lattice(&r).unwrap();
        assert_eq!(z, DMatrix::<i64>::identity(3, 3));
        assert_eq!(reduced, r);
    }

    #[test]
    fn reduction_is_unimodular() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(2..7);
            let r = DMatrix::from_fn(n, n, |i, j| {
                if i > j {
                    0.0
                } else if i == j {
                    rng.random_range(0.1..5.0)
                } else {
                    rng.random_range(-20.0..20.0)
                }
            });
            let (z, reduced) = reduce_lattice(&r).unwrap();
            let zf = z.map(|v| v as f64);
            assert!((zf.determinant().abs() - 1.0).abs() < 1e-6);
            // Same lattice: the Gram matrices agree.
            let lhs = (&r * &zf).transpose() * (&r * &zf);
            let rhs = reduced.transpose() * &reduced;
            assert!((lhs - &rhs).norm() <= 1e-8 * rhs.norm());
        }
    }

    #[test]
    fn singular_basis_rejected() {
        let r = mat(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(reduce_lattice(&r), Err(Error::Degenerate(_))));
    }

    /// Exhaustive search over a box around the real-valued relaxation.
    fn brute_force(p: &MilsProblem, half_width: i64) -> (Vec<i64>, f64) {
        let q = p.int_unknowns();
        let mut all = DMatrix::<f64>::zeros(p.rows(), p.real_unknowns() + q);
        all.view_mut((0, 0), (p.rows(), p.real_unknowns())).copy_from(&p.real_block);
        all.view_mut((0, p.real_unknowns()), (p.rows(), q)).copy_from(&p.int_block);
        let float = solve_real_ls(&all, &p.rhs, &p.weight).unwrap();
        let centre: Vec<i64> = (0..q).map(|i| float[p.real_unknowns() + i].round() as i64).collect();
        let mut best: Option<(Vec<i64>, f64)> = None;
        let span = (2 * half_width + 1) as usize;
        let total = span.pow(q as u32);
        for idx in 0..total {
            let mut rem = idx;
            let z: Vec<i64> = (0..q)
                .map(|i| {
                    let d = (rem % span) as i64 - half_width;
                    rem /= span;
                    centre[i] + d
                })
                .collect();
            let r = if p.real_unknowns() == 0 {
                p.residual_norm(&DVector::zeros(0), &z)
            } else {
                let zf = DVector::from_iterator(q, z.iter().map(|&v| v as f64));
                let x = solve_real_ls(&p.real_block, &(&p.rhs - &p.int_block * zf), &p.weight).unwrap();
                p.residual_norm(&x, &z)
            };
            let better = match &best {
                None => true,
                Some((bz, br)) => compare_candidates((&z, r), (bz, *br)) == Ordering::Less,
            };
            if better {
                best = Some((z, r));
            }
        }
        best.unwrap()
    }

    fn random_problem(rng: &mut ChaCha8Rng, p: usize, q: usize, m: usize) -> MilsProblem {
        let a = DMatrix::from_fn(m, p, |_, _| rng.random_range(-3.0..3.0));
        let b = DMatrix::from_fn(m, q, |_, _| rng.random_range(-3.0..3.0));
        let y = DVector::from_fn(m, |_, _| rng.random_range(-20.0..20.0));
        let w = DVector::from_fn(m, |_, _| rng.random_range(0.2..3.0));
        MilsProblem::new(a, b, y, Weight::Diagonal(w)).unwrap()
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..200 {
            let q = rng.random_range(1..4);
            let p = rng.random_range(0..3);
            let m = p + q + rng.random_range(1..4);
            let prob = random_problem(&mut rng, p, q, m);
            let s = solve_mils(&prob, 1).unwrap();
            let (bz, br) = brute_force(&prob, 6);
            assert!(
                s.residual_norm <= br * (1.0 + 1e-9) + 1e-12,
                "trial {trial}: {} > {br} ({:?} vs {bz:?})",
                s.residual_norm,
                s.int_part
            );
            let recomputed = prob.residual_norm(&s.real_part, &s.int_part);
            assert!((recomputed - s.residual_norm).abs() <= 1e-9 * recomputed.max(1.0));
        }
    }

    #[test]
    fn unreduced_search_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let prob = random_problem(&mut rng, 2, 3, 7);
            let a = solve_mils(&prob, 1).unwrap();
            let b = solve_mils_with(&prob, MilsOptions { n_candidates: 1, reduce: false }).unwrap();
            assert!((a.residual_norm - b.residual_norm).abs() <= 1e-9 * a.residual_norm.max(1.0));
        }
    }

    #[test]
    fn candidates_are_sorted_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let prob = random_problem(&mut rng, 1, 3, 6);
            let s = solve_mils(&prob, 5).unwrap();
            assert_eq!(s.candidates.len(), 5);
            assert_eq!(s.candidates[0].int_part, s.int_part);
            for w in s.candidates.windows(2) {
                assert!(w[0].residual_norm <= w[1].residual_norm * (1.0 + 1e-12));
                assert_ne!(w[0].int_part, w[1].int_part);
            }
            assert!(s.nodes_visited > 0);
        }
    }

    proptest::proptest! {
        #[test]
        fn unimodular_change_of_variables(seed in 0u64..10_000, u01 in -3i64..4, u12 in -3i64..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prob = random_problem(&mut rng, 1, 3, 6);
            // B' = B U with U unimodular (upper unit triangular).
            let u = DMatrix::from_row_slice(3, 3, &[1.0, u01 as f64, 0.0, 0.0, 1.0, u12 as f64, 0.0, 0.0, 1.0]);
            let moved = MilsProblem::new(prob.real_block.clone(), &prob.int_block * &u, prob.rhs.clone(), prob.weight.clone()).unwrap();
            let a = solve_mils(&prob, 1).unwrap();
            let b = solve_mils(&moved, 1).unwrap();
            proptest::prop_assert!((a.residual_norm - b.residual_norm).abs() <= 1e-8 * a.residual_norm.max(1.0));
            let bz = DVector::from_iterator(3, b.int_part.iter().map(|&v| v as f64));
            let mapped = &u * bz;
            // The mapped minimizer of the moved problem is optimal here too.
            let ra = prob.residual_norm(&a.real_part, &a.int_part);
            let mapped_i: Vec<i64> = mapped.iter().map(|v| v.round() as i64).collect();
            let x = solve_real_ls(&prob.real_block, &(&prob.rhs - &prob.int_block * &mapped), &prob.weight).unwrap();
            let rb = prob.residual_norm(&x, &mapped_i);
            proptest::prop_assert!((ra - rb).abs() <= 1e-8 * ra.max(1.0));
        }

        #[test]
        fn scaling_rhs_by_integer_vector(seed in 0u64..10_000, k0 in -50i64..50, k1 in -50i64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prob = random_problem(&mut rng, 2, 2, 6);
            let shift = DVector::from_vec(vec![k0 as f64, k1 as f64]);
            let moved = MilsProblem::new(prob.real_block.clone(), prob.int_block.clone(), &prob.rhs + &prob.int_block * &shift, prob.weight.clone()).unwrap();
            let a = solve_mils(&prob, 1).unwrap();
            let b = solve_mils(&moved, 1).unwrap();
            proptest::prop_assert!((a.residual_norm - b.residual_norm).abs() <= 1e-7 * a.residual_norm.max(1.0));
        }

        #[test]
        fn uniform_weight_scales_residual(seed in 0u64..10_000, s in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prob = random_problem(&mut rng, 1, 2, 5);
            let w = match &prob.weight { Weight::Diagonal(d) => d * s, _ => unreachable!() };
            let scaled = MilsProblem::new(prob.real_block.clone(), prob.int_block.clone(), prob.rhs.clone(), Weight::Diagonal(w)).unwrap();
            let a = solve_mils(&prob, 1).unwrap();
            let b = solve_mils(&scaled, 1).unwrap();
            proptest::prop_assert!((a.residual_norm * s - b.residual_norm).abs() <= 1e-8 * b.residual_norm.max(1.0));
        }
    }
}
