use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use planar_ce::channel::realize;
use planar_ce::dataset_io::{
    read_estimates, read_rx_frames, write_estimates, write_rx_frames, DatasetHeader, DatasetRecord, DatasetWriter,
    EstimateSet, RecordMeta,
};
use planar_ce::drcn::{NetworkSpec, WeightBundle};
use planar_ce::evaluation::{
    calibrate, complexity_csv, complexity_table, derive_seed, run_sweep, Calibration, EstimatorKind, EstimatorSuite,
    SweepConfig, CHANNEL_STREAM, NOISE_STREAM,
};
use planar_ce::system::synthesize_rx;
use planar_ce::{FrameConfig, Network64, PilotBook64, PriorTable64, ProfileSpec};

const DATASET_STREAM: u64 = 4;

/// Block-wise planar channel estimation: simulation, estimation and benchmarks.
#[derive(Parser, Debug)]
#[command(name = "planar-ce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate channel realizations and received pilot frames.
    Simulate(SimulateArgs),
    /// Fit per-sub-block priors from simulated channels.
    Calibrate(CalibrateArgs),
    /// Estimate channels from a simulated frame file.
    Estimate(EstimateArgs),
    /// Write (module-A estimate, true channel) training pairs.
    ExportDataset(ExportArgs),
    /// Refine pilot-symbol estimates with network weights.
    Infer(InferArgs),
    /// Monte-Carlo NMSE versus SNR for a set of estimators.
    Sweep(SweepArgs),
    /// Tabulate the multiplication count over a range of user counts.
    CountFlops(CountFlopsArgs),
}

#[derive(Args, Debug)]
struct ProfileArgs {
    /// `cdl-b`, `flat`, or a profile file.
    #[arg(long, default_value = "cdl-b")]
    profile: String,
    /// Override the RMS delay spread.
    #[arg(long)]
    delay_ns: Option<f64>,
    /// Override the user speed.
    #[arg(long)]
    speed_kmh: Option<f64>,
}

impl ProfileArgs {
    fn load(&self) -> Result<ProfileSpec> {
        let mut p = match self.profile.as_str() {
            "cdl-b" => ProfileSpec::cdl_b(),
            "flat" => ProfileSpec::flat(100.0 / 3.6, 3.5e9),
            path => ProfileSpec::load(path).with_context(|| format!("--profile {path}"))?,
        };
        if let Some(ns) = self.delay_ns {
            p = p.with_delay_spread_ns(ns);
        }
        if let Some(kmh) = self.speed_kmh {
            p = p.with_speed_kmh(kmh);
        }
        Ok(p)
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    frames: usize,
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// SNR at which `sigma2_Z` is written out.
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// One of bpcm, ls, lmmse1d, lmmse2x1d.
    #[arg(long)]
    estimator: String,
    /// Network weights; refines the bpcm output onto every symbol.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Prior file from `calibrate`; fitted in-process when absent.
    #[arg(long)]
    priors: Option<PathBuf>,
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long, default_value_t = 30)]
    calib_frames: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long)]
    frames: usize,
    /// SNR drawn uniformly per frame from `a:b` dB.
    #[arg(long)]
    snr_range: String,
    /// RMS delay spread drawn uniformly per frame from `a:b` ns.
    #[arg(long, default_value = "100:300")]
    delay_range: String,
    /// Speed drawn uniformly per frame from `a:b` km/h.
    #[arg(long, default_value = "80:120")]
    speed_range: String,
    #[arg(long)]
    priors: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    calib_frames: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated: genie, ls, lmmse1d, lmmse2x1d, bpcm, lbpce.
    #[arg(long)]
    estimators: String,
    /// Inclusive `start:step:stop` in dB, or a single value.
    #[arg(long)]
    snr: String,
    #[arg(long)]
    frames: usize,
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    calib_frames: usize,
    /// Network weights, required for `lbpce`.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Record wall-clock milliseconds (the report is then not reproducible).
    #[arg(long)]
    timing: bool,
    /// Also write the complexity table of the swept estimators.
    #[arg(long)]
    complexity_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CountFlopsArgs {
    #[arg(long)]
    config: PathBuf,
    /// Inclusive `a:b` range of user counts.
    #[arg(long)]
    k_range: String,
    #[arg(long)]
    out: PathBuf,
}

/// A flag value that parsed but is not acceptable.
#[derive(Debug)]
struct FlagError {
    flag: &'static str,
    msg: String,
}

impl fmt::Display for FlagError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "--{}: {}", self.flag, self.msg)
    }
}

impl std::error::Error for FlagError {}

fn flag_error(flag: &'static str, msg: impl Into<String>) -> anyhow::Error {
    FlagError { flag, msg: msg.into() }.into()
}

fn parse_number(flag: &'static str, raw: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| flag_error(flag, format!("`{raw}` is not a number")))
}

/// `start:step:stop` inclusive, or a single value.
fn parse_snr_list(flag: &'static str, raw: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = raw.split(':').collect();
    match parts.as_slice() {
        [one] => Ok(vec![parse_number(flag, one)?]),
        [start, step, stop] => {
            let (start, step, stop) = (parse_number(flag, start)?, parse_number(flag, step)?, parse_number(flag, stop)?);
            if step <= 0.0 || stop < start {
                return Err(flag_error(flag, "expected step > 0 and stop >= start"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(flag_error(flag, format!("`{raw}` is not start:step:stop"))),
    }
}

/// `a:b` with `a <= b`.
fn parse_interval(flag: &'static str, raw: &str) -> Result<(f64, f64)> {
    match raw.split(':').collect::<Vec<_>>().as_slice() {
        [a, b] => {
            let (a, b) = (parse_number(flag, a)?, parse_number(flag, b)?);
            if a > b {
                return Err(flag_error(flag, "lower bound exceeds upper bound"));
            }
            Ok((a, b))
        }
        _ => Err(flag_error(flag, format!("`{raw}` is not a:b"))),
    }
}

fn load_config(path: &Path) -> Result<FrameConfig> {
    let cfg = FrameConfig::load(path).with_context(|| format!("--config {}", path.display()))?;
    cfg.validate().map_err(planar_ce::Error::from)?;
    Ok(cfg)
}

fn load_network(path: &Path, cfg: &FrameConfig) -> Result<Network64> {
    let spec = NetworkSpec::new(cfg.symbols, cfg.pilot_symbols);
    let bundle = WeightBundle::load_for(path, &spec).with_context(|| format!("--weights {}", path.display()))?;
    Ok(Network64::new(&bundle, &spec)?)
}

/// Uniform draw in `[a, b]` from a derived seed.
fn uniform(seed: u64, (a, b): (f64, f64)) -> f64 {
    a + (b - a) * ((seed >> 11) as f64 / (1u64 << 53) as f64)
}

fn placeholder_calibration(cfg: &FrameConfig) -> Calibration<f64> {
    Calibration {
        priors: PriorTable64::uniform(cfg, 1.0, 1.0, 1.0, 1.0),
        covariances: planar_ce::baselines::CovarianceBank::identity(cfg),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let profile = a.profile.load()?;
    if a.frames == 0 {
        return Err(flag_error("frames", "must be at least 1"));
    }
    let pilots = PilotBook64::generate(&cfg)?;
    let frames = (0..a.frames as u64)
        .map(|i| {
            let real = realize(&cfg, &profile, derive_seed(a.seed, CHANNEL_STREAM, i))?;
            synthesize_rx(&cfg, &pilots, &real, a.snr, derive_seed(a.seed, NOISE_STREAM, i))
        })
        .collect::<planar_ce::Result<Vec<_>>>()?;
    write_rx_frames(&a.out, &cfg, &frames)?;
    Ok(())
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let profile = a.profile.load()?;
    let pilots = PilotBook64::generate(&cfg)?;
    let cal = calibrate(&cfg, &profile, &pilots, a.frames, a.seed)?;
    fs::write(&a.out, cal.priors.to_text(&cfg, a.snr))?;
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let kind: EstimatorKind = a.estimator.parse().map_err(|e| flag_error("estimator", format!("{e}")))?;
    if !matches!(
        kind,
        EstimatorKind::Bpcm | EstimatorKind::Ls | EstimatorKind::Lmmse1d | EstimatorKind::Lmmse2x1d
    ) {
        return Err(flag_error("estimator", "expected one of bpcm, ls, lmmse1d, lmmse2x1d"));
    }
    if a.weights.is_some() && kind != EstimatorKind::Bpcm {
        return Err(flag_error("weights", "only applies to --estimator bpcm"));
    }
    let network = a.weights.as_deref().map(|w| load_network(w, &cfg)).transpose()?;
    let (rx_cfg, frames) = read_rx_frames(&a.input)?;
    if rx_cfg != cfg {
        return Err(planar_ce::Error::DimensionMismatch(format!(
            "{} was simulated with a different frame configuration",
            a.input.display()
        ))
        .into());
    }
    let pilots = PilotBook64::generate(&cfg)?;
    let needs_cov = matches!(kind, EstimatorKind::Lmmse1d | EstimatorKind::Lmmse2x1d);
    let needs_priors = kind == EstimatorKind::Bpcm && a.priors.is_none();
    let mut cal = if needs_cov || needs_priors {
        calibrate(&cfg, &a.profile.load()?, &pilots, a.calib_frames, a.seed)?
    } else {
        placeholder_calibration(&cfg)
    };
    if let Some(p) = &a.priors {
        cal.priors = PriorTable64::load(p).with_context(|| format!("--priors {}", p.display()))?;
    }
    let refine = network.is_some();
    let suite = EstimatorSuite::new(&cfg, &pilots, cal, network)?;
    let set = EstimateSet {
        frames: frames
            .iter()
            .map(|rx| {
                if refine {
                    suite.full_estimate(EstimatorKind::Lbpce, rx)
                } else {
                    suite.pilot_estimate(kind, rx)
                }
            })
            .collect::<planar_ce::Result<Vec<_>>>()?,
    };
    write_estimates(&a.out, &set)?;
    Ok(())
}

fn export_dataset(a: ExportArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let base = a.profile.load()?;
    let snr = parse_interval("snr-range", &a.snr_range)?;
    let delay = parse_interval("delay-range", &a.delay_range)?;
    let speed = parse_interval("speed-range", &a.speed_range)?;
    if a.frames == 0 {
        return Err(flag_error("frames", "must be at least 1"));
    }
    let pilots = PilotBook64::generate(&cfg)?;
    let mut cal = match &a.priors {
        Some(_) => placeholder_calibration(&cfg),
        None => calibrate(&cfg, &base, &pilots, a.calib_frames, a.seed)?,
    };
    if let Some(p) = &a.priors {
        cal.priors = PriorTable64::load(p).with_context(|| format!("--priors {}", p.display()))?;
    }
    let suite = EstimatorSuite::new(&cfg, &pilots, cal, None)?;
    let mut writer = DatasetWriter::create(&a.out, DatasetHeader::from_config(&cfg))?;
    for i in 0..a.frames as u64 {
        let profile = base
            .clone()
            .with_delay_spread_ns(uniform(derive_seed(a.seed, DATASET_STREAM, 3 * i), delay))
            .with_speed_kmh(uniform(derive_seed(a.seed, DATASET_STREAM, 3 * i + 1), speed));
        let snr_db = uniform(derive_seed(a.seed, DATASET_STREAM, 3 * i + 2), snr);
        let channel_seed = derive_seed(a.seed, CHANNEL_STREAM, i);
        let real = realize(&cfg, &profile, channel_seed)?;
        let rx = synthesize_rx(&cfg, &pilots, &real, snr_db, derive_seed(a.seed, NOISE_STREAM, i))?;
        let inputs = suite.pilot_estimate(EstimatorKind::Bpcm, &rx)?;
        for (k, input) in inputs.iter().enumerate() {
            let meta = RecordMeta {
                profile: profile.name.clone(),
                seed: channel_seed,
                user: k,
            };
            writer.write(&DatasetRecord::from_tensors(input.view(), real.user(k), snr_db, meta))?;
        }
    }
    writer.finish()?;
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let bundle = WeightBundle::load(&a.weights).with_context(|| format!("--weights {}", a.weights.display()))?;
    let interp = bundle
        .get("interp.weight")
        .filter(|t| t.dims.len() == 4)
        .ok_or_else(|| planar_ce::Error::WeightMismatch("missing 4-D tensor `interp.weight`".into()))?;
    let spec = NetworkSpec::new(interp.dims[0], interp.dims[1]);
    let net = Network64::new(&bundle, &spec)?;
    let est = read_estimates(&a.input)?;
    let (_, s, n, m) = est.dims();
    if !est.frames.is_empty() && s != spec.pilot_symbols {
        return Err(planar_ce::Error::ShapeMismatch {
            name: "estimate".into(),
            expected: vec![spec.pilot_symbols, n, m],
            found: vec![s, n, m],
        }
        .into());
    }
    let frames = est
        .frames
        .iter()
        .map(|users| users.iter().map(|x| net.forward(x.view())).collect())
        .collect::<planar_ce::Result<Vec<_>>>()?;
    write_estimates(&a.out, &EstimateSet { frames })?;
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let estimators = EstimatorKind::parse_list(&a.estimators).map_err(|e| flag_error("estimators", format!("{e}")))?;
    let snr = parse_snr_list("snr", &a.snr)?;
    if a.frames == 0 {
        return Err(flag_error("frames", "must be at least 1"));
    }
    if estimators.contains(&EstimatorKind::Lbpce) && a.weights.is_none() {
        return Err(flag_error("weights", "required when sweeping lbpce"));
    }
    let mut sc = SweepConfig::new(cfg.clone(), a.profile.load()?, estimators, snr, a.frames);
    sc.seed = a.seed;
    sc.calibration_frames = a.calib_frames;
    sc.timing = a.timing;
    sc.network = a.weights.as_deref().map(|w| load_network(w, &cfg)).transpose()?;
    let report = run_sweep(&sc)?;
    report.write_csv(&a.out)?;
    if let Some(path) = &a.complexity_out {
        fs::write(path, report.complexity_csv())?;
    }
    Ok(())
}

fn count_flops(a: CountFlopsArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let (lo, hi) = parse_interval("k-range", &a.k_range)?;
    if lo < 0.0 || lo.fract() != 0.0 || hi.fract() != 0.0 {
        return Err(flag_error("k-range", "bounds must be non-negative integers"));
    }
    let rows = complexity_table(&cfg, lo as usize..=hi as usize)?;
    fs::write(&a.out, complexity_csv(&rows))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Estimate(a) => estimate(a),
        Command::ExportDataset(a) => export_dataset(a),
        Command::Infer(a) => infer(a),
        Command::Sweep(a) => sweep(a),
        Command::CountFlops(a) => count_flops(a),
    }
}

fn error_code(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| {
            if let Some(core) = e.downcast_ref::<planar_ce::Error>() {
                Some(core.code())
            } else if e.downcast_ref::<FlagError>().is_some() {
                Some("InvalidFlag")
            } else if e.downcast_ref::<std::io::Error>().is_some() {
                Some("IoError")
            } else {
                None
            }
        })
        .unwrap_or("Error")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: InvalidFlag: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("error: {}: {msg}", error_code(&err));
            ExitCode::FAILURE
        }
    }
}
