//! Monte-Carlo experiments on simulated snapshots.
//!
//! Trials are independent and run in parallel; every trial draws from its own
//! ChaCha stream, so results depend only on the seed and never on scheduling.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use snapfix_core::model::Snapshot;
use snapfix_core::nav::EphemerisSet;
use snapfix_core::sim::{
    generate_snapshot_masked, perturb_apriori, random_truth, synthetic_constellation_for, ConstellationDesign,
    NoiseSpec, TruthState,
};
use snapfix_core::solvers::{correction_step, solve, Method, SolverConfig, SUCCESS_RADIUS_M};

use crate::error::{Error, Result};

/// Spread of random capture times around the design epoch, s.
const EPOCH_SPREAD_S: f64 = 600.0;
/// Random capture times around a real file's toe, s.
const REAL_NAV_SPREAD_S: f64 = 3_600.0;

/// Shared settings of all experiments.
#[derive(Debug, Clone)]
pub struct ExperimentContext {
    pub design: ConstellationDesign,
    /// Real ephemerides to simulate with; synthetic constellations otherwise.
    pub nav: Option<EphemerisSet>,
    /// Satellites per trial; random in 8..=13 when `None`.
    pub sats: Option<usize>,
    pub sigma_t: f64,
    pub sigma_d: f64,
    pub atmosphere: bool,
    pub mask_deg: f64,
    pub seed: u64,
    pub config: SolverConfig,
}

impl Default for ExperimentContext {
    fn default() -> Self {
        Self {
            design: ConstellationDesign::default(),
            nav: None,
            sats: None,
            sigma_t: snapfix_core::model::DEFAULT_SIGMA_T,
            sigma_d: snapfix_core::model::DEFAULT_SIGMA_D,
            atmosphere: false,
            mask_deg: snapfix_core::sim::SIM_MASK_DEG,
            seed: 1,
            config: SolverConfig::default(),
        }
    }
}

impl ExperimentContext {
    pub fn noiseless(mut self) -> Self {
        self.sigma_t = 0.0;
        self.sigma_d = 0.0;
        self
    }

    /// Independent generator for trial `index` of experiment part `stream`.
    pub fn rng(&self, stream: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((stream << 32) | index);
        rng
    }
}

/// A simulated capture and the state that produced it.
#[derive(Debug, Clone)]
pub struct Trial {
    pub eph: EphemerisSet,
    pub truth: TruthState,
    pub snapshot: Snapshot,
}

/// Simulates one capture with `sats` satellites (random 8..=13 if `None`).
pub fn make_trial(ctx: &ExperimentContext, rng: &mut ChaCha8Rng, sats: Option<usize>) -> Result<Trial> {
    let n = sats.or(ctx.sats).unwrap_or_else(|| rng.random_range(8..=13));
    let noise_seed = rng.random();
    let noise = NoiseSpec {
        sigma_t: ctx.sigma_t,
        sigma_d: ctx.sigma_d,
        atmosphere: ctx.atmosphere,
        seed: noise_seed,
    };
    match &ctx.nav {
        None => {
            let eph = synthetic_constellation_for(n, rng.random(), &ctx.design)?;
            let truth = random_truth(&ctx.design, rng, EPOCH_SPREAD_S)?;
            let g = generate_snapshot_masked(&truth, &eph, &noise, ctx.mask_deg)?;
            Ok(Trial {
                eph,
                truth,
                snapshot: g.snapshot,
            })
        }
        Some(nav) => {
            if nav.is_empty() {
                return Err(Error::Usage("navigation file has no GPS ephemerides".into()));
            }
            let rec = nav.records()[rng.random_range(0..nav.len())];
            let design = ConstellationDesign {
                epoch: rec.toe,
                ..ctx.design
            };
            let truth = random_truth(&design, rng, REAL_NAV_SPREAD_S)?;
            let g = generate_snapshot_masked(&truth, nav, &noise, ctx.mask_deg)?;
            let prns = g.snapshot.prns();
            let snapshot = if prns.len() > n {
                let keep: Vec<u8> = sample(rng, prns.len(), n).into_iter().map(|i| prns[i]).collect();
                g.snapshot.retain_prns(&keep)?
            } else {
                g.snapshot
            };
            Ok(Trial {
                eph: nav.clone(),
                truth,
                snapshot,
            })
        }
    }
}

/// Position error of `method` from the given initial errors; infinite if
/// the solver fails outright.
pub fn run_method(
    ctx: &ExperimentContext,
    method: Method,
    trial: &Trial,
    distance_m: f64,
    azimuth_deg: f64,
    time_error_s: f64,
) -> f64 {
    let Ok(ap) = perturb_apriori(&trial.truth, distance_m, azimuth_deg, time_error_s) else {
        return f64::INFINITY;
    };
    match solve(method, &trial.snapshot, &ap, &trial.eph, &ctx.config) {
        Ok(fix) => fix.error_m(trial.truth.position),
        Err(e) => {
            log::debug!("{method}: {e}");
            f64::INFINITY
        }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

fn success_rate(errors: &[f64], radius: f64) -> f64 {
    errors.iter().filter(|&&e| e < radius).count() as f64 / errors.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    pub distances_m: Vec<f64>,
    pub time_errors_s: Vec<f64>,
    pub trials_per_cell: usize,
    pub success_radius_m: f64,
}

impl ExperimentGrid {
    pub fn new(distances_m: Vec<f64>, time_errors_s: Vec<f64>, trials_per_cell: usize) -> Result<Self> {
        let g = Self {
            distances_m,
            time_errors_s,
            trials_per_cell,
            success_radius_m: SUCCESS_RADIUS_M,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite() && *x >= 0.0);
        if !ok(&self.distances_m) || !ok(&self.time_errors_s) {
            return Err(Error::Usage("grid axes must be non-empty lists of nonnegative values".into()));
        }
        if self.trials_per_cell == 0 || !(self.success_radius_m > 0.0) {
            return Err(Error::Usage("need at least one trial per cell and a positive success radius".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapCell {
    pub distance_m: f64,
    pub time_error_s: f64,
    pub success_rate: f64,
    pub median_error_m: f64,
}

/// Success rate over a grid of initial position and time errors. Azimuths are
/// random; time errors are the cell value plus U[0, 1) s, positive in even
/// trials and negative in odd ones.
pub fn heatmap(ctx: &ExperimentContext, method: Method, grid: &ExperimentGrid) -> Result<Vec<HeatmapCell>> {
    grid.validate()?;
    let cells: Vec<(usize, f64, f64)> = grid
        .distances_m
        .iter()
        .flat_map(|&d| grid.time_errors_s.iter().map(move |&t| (d, t)))
        .enumerate()
        .map(|(i, (d, t))| (i, d, t))
        .collect();
    cells
        .par_iter()
        .map(|&(cell, d, t)| {
            let errors = (0..grid.trials_per_cell)
                .into_par_iter()
                .map(|k| {
                    let mut rng = ctx.rng(cell as u64, k as u64);
                    let trial = make_trial(ctx, &mut rng, None)?;
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    let te = sign * (t + rng.random_range(0.0..1.0));
                    let az = rng.random_range(0.0..360.0);
                    Ok(run_method(ctx, method, &trial, d, az, te))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(HeatmapCell {
                distance_m: d,
                time_error_s: t,
                success_rate: success_rate(&errors, grid.success_radius_m),
                median_error_m: median(&errors),
            })
        })
        .collect()
}

/// Sorted absolute errors per method on identical trials and initial errors.
pub fn cdf(
    ctx: &ExperimentContext,
    methods: &[Method],
    distance_m: f64,
    time_error_s: f64,
    trials: usize,
) -> Result<BTreeMap<Method, Vec<f64>>> {
    let rows = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ctx.rng(0, k as u64);
            let trial = make_trial(ctx, &mut rng, None)?;
            let az = rng.random_range(0.0..360.0);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            Ok(methods
                .iter()
                .map(|&m| run_method(ctx, m, &trial, distance_m, az, sign * time_error_s))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = BTreeMap::new();
    for (j, &m) in methods.iter().enumerate() {
        let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        col.sort_by(f64::total_cmp);
        out.insert(m, col);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsatsRow {
    pub method: Method,
    pub n_sats: usize,
    pub success_fraction: f64,
}

/// Success fraction against the number of satellites used. Each trial sees
/// 13 satellites and keeps a random subset; initial errors are uniform up to
/// `max_distance_m` and `max_time_s`.
pub fn nsats(
    ctx: &ExperimentContext,
    methods: &[Method],
    counts: std::ops::RangeInclusive<usize>,
    trials: usize,
    max_distance_m: f64,
    max_time_s: f64,
) -> Result<Vec<NsatsRow>> {
    if *counts.start() < 4 || *counts.end() > 13 || counts.is_empty() {
        return Err(Error::Usage("satellite counts must lie within 4..=13".into()));
    }
    let counts: Vec<usize> = counts.collect();
    let per_count = counts
        .par_iter()
        .map(|&n| {
            let successes = (0..trials)
                .into_par_iter()
                .map(|k| {
                    let mut rng = ctx.rng(n as u64, k as u64);
                    let trial = make_trial(ctx, &mut rng, Some(13))?;
                    let prns = trial.snapshot.prns();
                    let keep: Vec<u8> = sample(&mut rng, prns.len(), n.min(prns.len()))
                        .into_iter()
                        .map(|i| prns[i])
                        .collect();
                    let trial = Trial {
                        snapshot: trial.snapshot.retain_prns(&keep)?,
                        ..trial
                    };
                    let d = rng.random_range(0.0..=max_distance_m);
                    let t = rng.random_range(-max_time_s..=max_time_s);
                    let az = rng.random_range(0.0..360.0);
                    Ok(methods
                        .iter()
                        .map(|&m| run_method(ctx, m, &trial, d, az, t) < SUCCESS_RADIUS_M)
                        .collect::<Vec<bool>>())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(methods
                .iter()
                .enumerate()
                .map(|(j, &m)| NsatsRow {
                    method: m,
                    n_sats: n,
                    success_fraction: successes.iter().filter(|r| r[j]).count() as f64 / trials as f64,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<NsatsRow> = per_count.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.method, r.n_sats));
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub n_sats: usize,
    pub median_s: f64,
    pub p95_s: f64,
}

/// Wall-clock time of single correction steps, measured sequentially.
pub fn bench(ctx: &ExperimentContext, method: Method, n_sats: usize, trials: usize) -> Result<BenchRow> {
    if trials == 0 {
        return Err(Error::Usage("need at least one trial".into()));
    }
    let mut times = Vec::with_capacity(trials);
    for k in 0..trials {
        let mut rng = ctx.rng(n_sats as u64, k as u64);
        let trial = make_trial(ctx, &mut rng, Some(n_sats))?;
        let ap = perturb_apriori(&trial.truth, 10_000.0, rng.random_range(0.0..360.0), 10.0)?;
        let start = Instant::now();
        let step = correction_step(method, &trial.snapshot, &ap, &trial.eph, &ctx.config)?;
        times.push(start.elapsed().as_secs_f64());
        std::hint::black_box(step);
    }
    times.sort_by(f64::total_cmp);
    let p95 = times[((times.len() as f64 * 0.95).ceil() as usize).clamp(1, times.len()) - 1];
    Ok(BenchRow {
        method,
        n_sats,
        median_s: median(&times),
        p95_s: p95,
    })
}


fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "inf".to_string()
    }
}

pub fn write_heatmap_csv<W: Write>(w: W, cells: &[HeatmapCell]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["distance_m", "time_error_s", "success_rate", "median_error_m"])?;
    for c in cells {
        out.write_record([num(c.distance_m), num(c.time_error_s), num(c.success_rate), num(c.median_error_m)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_cdf_csv<W: Write>(w: W, columns: &BTreeMap<Method, Vec<f64>>) -> Result<()> {
    let mut out = writer(w);
    let mut header = vec!["rank".to_string()];
    header.extend(columns.keys().map(|m| m.name().to_string()));
    out.write_record(&header)?;
    let rows = columns.values().map(Vec::len).max().unwrap_or(0);
    for i in 0..rows {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(columns.values().map(|c| c.get(i).map_or(String::new(), |&e| num(e))));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_nsats_csv<W: Write>(w: W, rows: &[NsatsRow]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["method", "n_sats", "success_fraction"])?;
    for r in rows {
        out.write_record([r.method.name().to_string(), r.n_sats.to_string(), num(r.success_fraction)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_bench_csv<W: Write>(w: W, rows: &[BenchRow]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["method", "n_sats", "median_ms", "p95_ms"])?;
    for r in rows {
        out.write_record([
            r.method.name().to_string(),
            r.n_sats.to_string(),
            num(r.median_s * 1e3),
            num(r.p95_s * 1e3),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, f64::INFINITY]), f64::INFINITY);
    }

    #[test]
    fn grid_validation() {
        assert!(ExperimentGrid::new(vec![], vec![1.0], 4).is_err());
        assert!(ExperimentGrid::new(vec![1.0], vec![-1.0], 4).is_err());
        assert!(ExperimentGrid::new(vec![1.0], vec![1.0], 0).is_err());
        assert!(ExperimentGrid::new(vec![0.0], vec![0.0], 1).is_ok());
    }

    #[test]
    fn trial_streams_are_independent_of_order() {
        let ctx = ExperimentContext::default();
        let a = make_trial(&ctx, &mut ctx.rng(3, 5), None).unwrap();
        let _ = make_trial(&ctx, &mut ctx.rng(3, 4), None).unwrap();
        let b = make_trial(&ctx, &mut ctx.rng(3, 5), None).unwrap();
        assert_eq!(a.snapshot, b.snapshot);
        let c = make_trial(&ctx, &mut ctx.rng(3, 6), None).unwrap();
        assert_ne!(a.snapshot, c.snapshot);
    }

    #[test]
    fn csv_has_one_header() {
        let cells = [HeatmapCell {
            distance_m: 1000.0,
            time_error_s: 2.0,
            success_rate: 1.0,
            median_error_m: f64::INFINITY,
        }];
        let mut buf = Vec::new();
        write_heatmap_csv(&mut buf, &cells).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "distance_m,time_error_s,success_rate,median_error_m\n1000,2,1,inf\n"
        );
    }
}
