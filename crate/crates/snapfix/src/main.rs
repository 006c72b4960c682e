use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use snapfix::experiments::{
    bench, cdf, heatmap, nsats, write_bench_csv, write_cdf_csv, write_heatmap_csv, write_nsats_csv,
    ExperimentContext, ExperimentGrid,
};
use snapfix::rinex::{read_nav_file, write_rinex_nav, RinexVersion};
use snapfix::snapfile::SnapshotFile;
use snapfix::{Error, Result};
use snapfix_core::geodesy::{ecef_to_geodetic, geodetic_to_ecef, EcefPosition, GeodeticPosition};
use snapfix_core::model::{elevation_filter, AprioriState, Regularization, SearchBox};
use snapfix_core::nav::EphemerisSet;
use snapfix_core::sim::{
    generate_snapshot_masked, synthetic_constellation_for, ConstellationDesign, NoiseSpec, TruthState,
};
use snapfix_core::solvers::{solve, HeightConstraint, Method, SolverConfig, DEFAULT_HEIGHT_SIGMA_M};
use snapfix_core::time::GpsTime;

#[derive(Parser)]
#[command(name = "snapfix", version, about = "Snapshot GNSS positioning with coarse time")]
struct Cli {
    /// RINEX navigation file (2.x or 3.x, GPS)
    #[arg(long, global = true)]
    nav: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Elevation mask, degrees
    #[arg(long, global = true, default_value_t = 10.0)]
    mask: f64,
    /// Output file (stdout if omitted)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a fix from a snapshot file
    Fix(FixArgs),
    /// Simulate a snapshot file
    Simulate(SimulateArgs),
    /// Success rate over a grid of initial errors (CSV)
    Heatmap(HeatmapArgs),
    /// Sorted errors of several methods on paired trials (CSV)
    Cdf(CdfArgs),
    /// Success fraction against satellite count (CSV)
    Nsats(NsatsArgs),
    /// Timing of single correction steps (CSV)
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Arrival-time standard deviation, ns
    #[arg(long, default_value_t = 10.0)]
    sigma_t_ns: f64,
    /// Doppler standard deviation, Hz
    #[arg(long, default_value_t = 1.0)]
    sigma_d_hz: f64,
    #[arg(long, default_value_t = 5)]
    max_outer: usize,
    #[arg(long, default_value_t = 10)]
    max_gn: usize,
    /// Model tropospheric and ionospheric delays
    #[arg(long)]
    atmosphere: bool,
    /// Polish Doppler-regularized fixes on code-phase rows only
    #[arg(long)]
    refine: bool,
    /// Regularization length, m (ignored with --box-regularization)
    #[arg(long, default_value_t = 100_000.0)]
    regularization_m: f64,
    /// Derive regularization weights from the a-priori search box
    #[arg(long)]
    box_regularization: bool,
    /// Height held when only four satellites are used, m
    #[arg(long)]
    height: Option<f64>,
}

impl SolverArgs {
    fn config(&self, bounds: SearchBox) -> Result<SolverConfig> {
        let c = SolverConfig {
            max_outer_iterations: self.max_outer,
            max_gn_iterations: self.max_gn,
            sigma_t: self.sigma_t_ns * 1e-9,
            sigma_d_hz: self.sigma_d_hz,
            atmosphere: self.atmosphere,
            refine_without_regularization: self.refine,
            regularization: if self.box_regularization {
                Regularization::FromBox(bounds)
            } else {
                Regularization::Uniform {
                    length_m: self.regularization_m,
                }
            },
            height_constraint: self.height.map(|h| HeightConstraint {
                reference_height_m: h,
                sigma_m: DEFAULT_HEIGHT_SIGMA_M,
            }),
            ..SolverConfig::default()
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct FixArgs {
    /// Snapshot file
    snapshot: PathBuf,
    #[arg(long, default_value = "mils-doppler", value_parser = parse_method)]
    method: Method,
    /// A-priori latitude, degrees
    #[arg(long, allow_hyphen_values = true)]
    lat: f64,
    /// A-priori longitude, degrees
    #[arg(long, allow_hyphen_values = true)]
    lon: f64,
    /// A-priori height, m
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    alt: f64,
    /// A-priori receiver clock bias, s
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    bias: f64,
    /// Half-width of the a-priori position box, m
    #[arg(long, default_value_t = 100_000.0)]
    box_m: f64,
    /// Half-width of the a-priori clock box, s
    #[arg(long, default_value_t = 100.0)]
    box_s: f64,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Use a synthetic constellation instead of --nav
    #[arg(long)]
    synthetic: bool,
    /// Satellites in the synthetic constellation
    #[arg(long, default_value_t = 8)]
    sats: usize,
    /// Also write the constellation as a RINEX navigation file
    #[arg(long)]
    write_nav: Option<PathBuf>,
    #[arg(long, default_value_t = 32.1, allow_hyphen_values = true)]
    lat: f64,
    #[arg(long, default_value_t = 34.8, allow_hyphen_values = true)]
    lon: f64,
    #[arg(long, default_value_t = 50.0, allow_hyphen_values = true)]
    alt: f64,
    /// Receiver clock bias, s
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    bias: f64,
    /// Oscillator offset, s/s
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    drift: f64,
    /// GPS week of the capture (defaults to the design epoch or the first toe)
    #[arg(long)]
    week: Option<u32>,
    #[arg(long)]
    sow: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    sigma_t_ns: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_d_hz: f64,
    /// No measurement noise
    #[arg(long)]
    noiseless: bool,
    /// Add modeled atmospheric delays
    #[arg(long)]
    atmosphere: bool,
    /// Omit Doppler
    #[arg(long)]
    no_doppler: bool,
    #[arg(long, default_value = "sim")]
    id: String,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Satellites per trial (random 8..=13 if omitted)
    #[arg(long)]
    sats: Option<usize>,
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    sim_atmosphere: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Initial distances, m
    #[arg(long, value_delimiter = ',', default_value = "0,10000,50000,100000,200000,300000,1000000,10000000")]
    distances: Vec<f64>,
    /// Initial time errors, s
    #[arg(long, value_delimiter = ',', default_value = "0,10,50,100,150,300,1000,4000")]
    times: Vec<f64>,
    #[arg(long, default_value_t = 16)]
    trials: usize,
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct CdfArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_method,
          default_value = "vandiggelen,mils-apriori,mils-doppler,doppler-only")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 20_000.0)]
    distance: f64,
    #[arg(long, default_value_t = 20.0)]
    time: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct NsatsArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_method,
          default_value = "vandiggelen,mils-apriori,mils-doppler,doppler-only")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 4)]
    min: usize,
    #[arg(long, default_value_t = 13)]
    max: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Largest initial distance, m
    #[arg(long, default_value_t = 300_000.0)]
    max_distance: f64,
    /// Largest initial time error, s
    #[arg(long, default_value_t = 300.0)]
    max_time: f64,
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_method,
          default_value = "vandiggelen,mils-apriori,mils-doppler,doppler-only")]
    methods: Vec<Method>,
    /// Satellite counts to time
    #[arg(long, value_delimiter = ',', default_value = "5,8,13")]
    sats: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[command(flatten)]
    solver: SolverArgs,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: snapfix_core::Error| e.to_string())
}

struct Globals {
    nav: Option<PathBuf>,
    seed: u64,
    mask: f64,
    out: Option<PathBuf>,
}

impl Globals {
    fn output(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn load_nav(&self) -> Result<Option<EphemerisSet>> {
        self.nav.as_deref().map(load_nav).transpose()
    }

    fn context(&self, exp: &ExperimentArgs) -> Result<ExperimentContext> {
        let mut ctx = ExperimentContext {
            nav: self.load_nav()?,
            sats: exp.sats,
            atmosphere: exp.sim_atmosphere,
            mask_deg: self.mask,
            seed: self.seed,
            config: exp.solver.config(SearchBox::default())?,
            ..ExperimentContext::default()
        };
        if exp.noiseless {
            ctx = ctx.noiseless();
        }
        Ok(ctx)
    }
}

fn load_nav(path: &Path) -> Result<EphemerisSet> {
    let file = read_nav_file(path)?;
    log::info!("{}: {} GPS ephemerides", path.display(), file.ephemerides.len());
    Ok(file.ephemerides)
}

/// Exit status 1 marks a fix that did not converge.
fn cmd_fix(g: &Globals, a: &FixArgs) -> Result<u8> {
    let nav_path = g
        .nav
        .as_deref()
        .ok_or_else(|| Error::Usage("fix needs --nav".into()))?;
    let eph = load_nav(nav_path)?;
    let file = SnapshotFile::read(&a.snapshot)?;
    let snapshot = file.to_snapshot()?;
    let bounds = SearchBox {
        x_max: a.box_m,
        y_max: a.box_m,
        z_max: a.box_m,
        b_max: a.box_s,
    };
    let position = geodetic_to_ecef(GeodeticPosition {
        latitude: a.lat,
        longitude: a.lon,
        height: a.alt,
    });
    let apriori = AprioriState::new(position, a.bias, bounds)?;
    let config = a.solver.config(bounds)?;
    let snapshot = elevation_filter(&snapshot, apriori.point(), &eph, g.mask)?;
    if a.method.needs_doppler() && !snapshot.has_full_doppler() {
        return Err(Error::Core(snapfix_core::Error::InvalidInput(format!(
            "method {} needs Doppler for every satellite",
            a.method
        ))));
    }
    let fix = solve(a.method, &snapshot, &apriori, &eph, &config)?;
    let geo = ecef_to_geodetic(fix.position)?;
    let mut out = g.output()?;
    print_fix(&mut out, &file.id, &fix, geo)?;
    out.flush()?;
    Ok(if fix.converged { 0 } else { 1 })
}

fn print_fix(
    out: &mut dyn Write,
    id: &str,
    fix: &snapfix_core::solvers::Fix,
    geo: GeodeticPosition,
) -> io::Result<()> {
    writeln!(out, "receiver: {id}")?;
    writeln!(out, "method: {}", fix.method)?;
    writeln!(out, "converged: {}", fix.converged)?;
    writeln!(out, "ecef_m: {:.4} {:.4} {:.4}", fix.position.x, fix.position.y, fix.position.z)?;
    writeln!(
        out,
        "geodetic: {:.9} {:.9} {:.4}",
        geo.latitude, geo.longitude, geo.height
    )?;
    writeln!(out, "bias_s: {:.12}", fix.bias_s)?;
    if let Some(beta) = fix.beta_s {
        writeln!(out, "beta_s: {beta:.12}")?;
    }
    if let Some(drift) = fix.drift {
        writeln!(out, "drift: {drift:.6e}")?;
    }
    let pairs: Vec<String> = fix
        .prns
        .iter()
        .zip(&fix.integers)
        .map(|(p, n)| format!("{p}:{n}"))
        .collect();
    writeln!(out, "integers: {}", pairs.join(" "))?;
    writeln!(out, "iterations: {}", fix.iterations)?;
    writeln!(out, "residual_norm: {:.6e}", fix.residual_norm)
}

fn cmd_simulate(g: &Globals, a: &SimulateArgs) -> Result<u8> {
    let site = GeodeticPosition {
        latitude: a.lat,
        longitude: a.lon,
        height: a.alt,
    };
    let (eph, default_epoch) = if a.synthetic {
        let mut design = ConstellationDesign {
            site,
            ..ConstellationDesign::default()
        };
        if let (Some(week), Some(sow)) = (a.week, a.sow) {
            design.epoch = GpsTime::new(week, sow)?;
        }
        (synthetic_constellation_for(a.sats, g.seed, &design)?, design.epoch)
    } else {
        let eph = g
            .load_nav()?
            .ok_or_else(|| Error::Usage("simulate needs --nav or --synthetic".into()))?;
        let first = eph
            .records()
            .first()
            .ok_or_else(|| Error::Usage("navigation file has no GPS ephemerides".into()))?
            .toe;
        (eph, first)
    };
    let epoch = match (a.week, a.sow) {
        (Some(w), Some(s)) => GpsTime::new(w, s)?,
        (None, None) => default_epoch,
        _ => return Err(Error::Usage("give both --week and --sow".into())),
    };
    let truth = TruthState::new(geodetic_to_ecef(site), a.bias, a.drift, epoch)?;
    let quiet = if a.noiseless { 0.0 } else { 1.0 };
    let noise = NoiseSpec {
        sigma_t: quiet * a.sigma_t_ns * 1e-9,
        sigma_d: quiet * a.sigma_d_hz,
        atmosphere: a.atmosphere,
        seed: g.seed,
    };
    let generated = generate_snapshot_masked(&truth, &eph, &noise, g.mask)?;
    let snapshot = if a.no_doppler {
        generated.snapshot.without_doppler()
    } else {
        generated.snapshot
    };
    let file = SnapshotFile::from_snapshot(&snapshot, &a.id)?;
    if let Some(p) = &a.write_nav {
        std::fs::write(p, write_rinex_nav(&eph, RinexVersion::V3))?;
    }
    let mut out = g.output()?;
    let pos: EcefPosition = truth.position;
    writeln!(
        out,
        "# truth ecef_m {:.4} {:.4} {:.4} bias_s {} drift {}",
        pos.x, pos.y, pos.z, truth.bias_s, truth.drift_s_per_s
    )?;
    out.write_all(file.serialize().as_bytes())?;
    out.flush()?;
    Ok(0)
}

fn cmd_heatmap(g: &Globals, a: &HeatmapArgs) -> Result<u8> {
    let ctx = g.context(&a.exp)?;
    let grid = ExperimentGrid::new(a.distances.clone(), a.times.clone(), a.trials)?;
    let cells = heatmap(&ctx, a.method, &grid)?;
    write_heatmap_csv(g.output()?, &cells)?;
    Ok(0)
}

fn cmd_cdf(g: &Globals, a: &CdfArgs) -> Result<u8> {
    let ctx = g.context(&a.exp)?;
    let cols = cdf(&ctx, &a.methods, a.distance, a.time, a.trials)?;
    write_cdf_csv(g.output()?, &cols)?;
    Ok(0)
}

fn cmd_nsats(g: &Globals, a: &NsatsArgs) -> Result<u8> {
    let ctx = g.context(&a.exp)?;
    let rows = nsats(&ctx, &a.methods, a.min..=a.max, a.trials, a.max_distance, a.max_time)?;
    write_nsats_csv(g.output()?, &rows)?;
    Ok(0)
}

fn cmd_bench(g: &Globals, a: &BenchArgs) -> Result<u8> {
    let exp = ExperimentArgs {
        sats: None,
        noiseless: false,
        sim_atmosphere: false,
        solver: a.solver.clone(),
    };
    let ctx = g.context(&exp)?;
    let mut rows = Vec::new();
    for &m in &a.methods {
        for &n in &a.sats {
            rows.push(bench(&ctx, m, n, a.trials)?);
        }
    }
    write_bench_csv(g.output()?, &rows)?;
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = Globals {
        nav: cli.nav,
        seed: cli.seed,
        mask: cli.mask,
        out: cli.out,
    };
    let result = match &cli.command {
        Command::Fix(a) => cmd_fix(&g, a),
        Command::Simulate(a) => cmd_simulate(&g, a),
        Command::Heatmap(a) => cmd_heatmap(&g, a),
        Command::Cdf(a) => cmd_cdf(&g, a),
        Command::Nsats(a) => cmd_nsats(&g, a),
        Command::Bench(a) => cmd_bench(&g, a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
