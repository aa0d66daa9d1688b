//! NMSE scoring, the multiplication-count formula, and Monte-Carlo SNR sweeps.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{s, Array3, ArrayView, Dimension};
use rayon::prelude::*;

use crate::baselines::{
    interp_time_linear, lmmse_1d_freq, lmmse_2x1d, CovarianceAccumulator, CovarianceBank, LsEstimator,
};
use crate::bpcm::{BpcmEstimator, PriorCalibrator, PriorTable, MIN_CALIBRATION_REALIZATIONS};
use crate::channel::{realize, ProfileSpec};
use crate::drcn::{Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::frame::{FrameConfig, PilotBook};
use crate::scalar::{Cx, Real};
use crate::system::{synthesize_rx, RxFrame};

/// Squared error and truth energy of one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Nmse {
    pub error: f64,
    pub energy: f64,
}

impl Nmse {
    pub fn linear(&self) -> f64 {
        self.error / self.energy
    }

    /// `10·log10` of [`Nmse::linear`]; an exact estimate gives `-inf`.
    pub fn db(&self) -> f64 {
        10.0 * self.linear().log10()
    }

    pub fn merge(&mut self, other: Nmse) {
        self.error += other.error;
        self.energy += other.energy;
    }
}

/// `‖Ĥ−H‖² / ‖H‖²` over every element.
pub fn nmse<T: Real, D: Dimension>(estimate: ArrayView<'_, Cx<T>, D>, truth: ArrayView<'_, Cx<T>, D>) -> Result<Nmse> {
    let n = nmse_sums(estimate, truth)?;
    if n.energy == 0.0 {
        return Err(Error::ZeroTruth);
    }
    Ok(n)
}

fn nmse_sums<T: Real, D: Dimension>(estimate: ArrayView<'_, Cx<T>, D>, truth: ArrayView<'_, Cx<T>, D>) -> Result<Nmse> {
    if estimate.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            name: "estimate".into(),
            expected: truth.shape().to_vec(),
            found: estimate.shape().to_vec(),
        });
    }
    let mut out = Nmse::default();
    for (e, h) in estimate.iter().zip(truth.iter()) {
        out.error += (*e - *h).norm_sqr().as_f64();
        out.energy += h.norm_sqr().as_f64();
    }
    Ok(out)
}

/// The two terms of the LBPCE multiplication count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Complexity {
    /// `P³ + 6KP² + 3KUVMP` with `P = N·T_P/(VU)`.
    pub module_a: u128,
    /// `(12170 + 30T)·T_P·N·M·K / 4`, rounded to the nearest integer.
    pub module_b: u128,
}

impl Complexity {
    pub fn total(&self) -> u128 {
        self.module_a + self.module_b
    }
}

/// Closed-form complex-multiplication count of module A plus module B.
///
/// Only the partition of the pilot grid is checked, so `K = 0` is accepted.
pub fn complexity_lbpce(cfg: &FrameConfig) -> Result<Complexity> {
    let blocks = cfg.time_blocks * cfg.freq_blocks;
    if blocks == 0 || (cfg.subcarriers * cfg.pilot_symbols) % blocks != 0 {
        return Err(Error::DimensionMismatch(format!(
            "N·T_P = {} is not divisible by U·V = {}",
            cfg.subcarriers * cfg.pilot_symbols,
            blocks
        )));
    }
    let p = (cfg.subcarriers * cfg.pilot_symbols / blocks) as u128;
    let (k, m, uv) = (cfg.users as u128, cfg.antennas as u128, blocks as u128);
    let module_a = p * p * p + 6 * k * p * p + 3 * k * uv * m * p;
    let numerator =
        (12170 + 30 * cfg.symbols as u128) * cfg.pilot_symbols as u128 * cfg.subcarriers as u128 * m * k;
    Ok(Complexity {
        module_a,
        module_b: (numerator + 2) / 4,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityRow {
    pub estimator: String,
    pub users: usize,
    pub multiplications: u128,
}

/// Rows `lbpce_module_a`, `lbpce_module_b`, `lbpce` for each user count.
pub fn complexity_table(cfg: &FrameConfig, users: impl IntoIterator<Item = usize>) -> Result<Vec<ComplexityRow>> {
    let mut rows = Vec::new();
    for k in users {
        let c = complexity_lbpce(&FrameConfig { users: k, ..cfg.clone() })?;
        for (name, count) in [
            ("lbpce_module_a", c.module_a),
            ("lbpce_module_b", c.module_b),
            ("lbpce", c.total()),
        ] {
            rows.push(ComplexityRow {
                estimator: name.into(),
                users: k,
                multiplications: count,
            });
        }
    }
    Ok(rows)
}

pub fn complexity_csv(rows: &[ComplexityRow]) -> String {
    let mut out = String::from("estimator,K,multiplications\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.estimator, r.users, r.multiplications);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    /// Returns the true channel.
    Genie,
    /// Per-sub-block least squares on the block mean.
    Ls,
    /// LS followed by Wiener smoothing across subcarriers.
    Lmmse1d,
    /// LS followed by frequency then pilot-symbol Wiener smoothing.
    Lmmse2x1d,
    /// Module A: per-sub-block planar LMMSE.
    Bpcm,
    /// Module A followed by the 3D-DRCN.
    Lbpce,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Genie,
        EstimatorKind::Ls,
        EstimatorKind::Lmmse1d,
        EstimatorKind::Lmmse2x1d,
        EstimatorKind::Bpcm,
        EstimatorKind::Lbpce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Genie => "genie",
            EstimatorKind::Ls => "ls",
            EstimatorKind::Lmmse1d => "lmmse1d",
            EstimatorKind::Lmmse2x1d => "lmmse2x1d",
            EstimatorKind::Bpcm => "bpcm",
            EstimatorKind::Lbpce => "lbpce",
        }
    }

    /// Parses a comma-separated list such as `bpcm,ls`.
    pub fn parse_list(list: &str) -> Result<Vec<Self>> {
        list.split(',').map(|s| s.trim().parse()).collect()
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownEstimator(s.to_string()))
    }
}

/// Deterministic per-stream seed (SplitMix64 finalizer over the inputs).
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const CHANNEL_STREAM: u64 = 1;
pub const NOISE_STREAM: u64 = 2;
pub const CALIBRATION_STREAM: u64 = 3;

/// Trained statistics shared by the model-based estimators.
#[derive(Debug, Clone)]
pub struct Calibration<T: Real> {
    pub priors: PriorTable<T>,
    pub covariances: CovarianceBank<T>,
}

/// Draws `frames` noiseless realizations and fits priors and covariances.
pub fn calibrate<T: Real>(
    cfg: &FrameConfig,
    profile: &ProfileSpec,
    pilots: &PilotBook<T>,
    frames: usize,
    seed: u64,
) -> Result<Calibration<T>> {
    let mut priors = PriorCalibrator::new(cfg, pilots)?;
    let mut covariances = CovarianceAccumulator::new(cfg);
    for i in 0..frames {
        let real = realize::<T>(cfg, profile, derive_seed(seed, CALIBRATION_STREAM, i as u64))?;
        priors.add(&real)?;
        covariances.add(&real);
    }
    Ok(Calibration {
        priors: priors.finish()?,
        covariances: covariances.finish()?,
    })
}

/// Every estimator configured against one frame layout and pilot book.
#[derive(Debug, Clone)]
pub struct EstimatorSuite<T: Real> {
    cfg: FrameConfig,
    ls: LsEstimator<T>,
    bpcm: BpcmEstimator<T>,
    covariances: CovarianceBank<T>,
    network: Option<Network<T>>,
}

impl<T: Real> EstimatorSuite<T> {
    pub fn new(
        cfg: &FrameConfig,
        pilots: &PilotBook<T>,
        calibration: Calibration<T>,
        network: Option<Network<T>>,
    ) -> Result<Self> {
        if let Some(net) = &network {
            let want = NetworkSpec::new(cfg.symbols, cfg.pilot_symbols);
            if net.spec() != &want {
                return Err(Error::ShapeMismatch {
                    name: "interp.weight".into(),
                    expected: want.interp.weight_shape(),
                    found: net.spec().interp.weight_shape(),
                });
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            ls: LsEstimator::new(cfg, pilots)?,
            bpcm: BpcmEstimator::new(cfg, pilots, calibration.priors)?,
            covariances: calibration.covariances,
            network,
        })
    }

    pub fn config(&self) -> &FrameConfig {
        &self.cfg
    }

    pub fn network(&self) -> Option<&Network<T>> {
        self.network.as_ref()
    }

    /// Noise variance of a block-wise estimate: `σ² / P`, floored so that a
    /// noiseless frame still gives a well-posed Wiener filter.
    fn effective_noise(&self, rx: &RxFrame<T>, cov: &ndarray::Array2<Cx<T>>) -> T {
        let p = T::lit(self.cfg.block_pilot_len() as f64);
        let n = cov.nrows().max(1);
        let mean_diag = (0..n).map(|i| cov[[i, i]].re).sum::<T>() / T::lit(n as f64);
        (rx.noise_var() / p).max(mean_diag * T::lit(1e-10))
    }

    /// Per-user estimates on the pilot symbols, `(T_P, N, M)` each. The
    /// network estimator reports its module-A input here.
    pub fn pilot_estimate(&self, kind: EstimatorKind, rx: &RxFrame<T>) -> Result<Vec<Array3<Cx<T>>>> {
        match kind {
            EstimatorKind::Genie => Ok(self.truth_at_pilots(rx)),
            EstimatorKind::Ls => self.ls.estimate(rx),
            EstimatorKind::Lmmse1d => {
                let ls = self.ls.estimate(rx)?;
                lmmse_1d_freq(&ls, &self.covariances, self.effective_noise(rx, &self.covariances.freq))
            }
            EstimatorKind::Lmmse2x1d => {
                let ls = self.ls.estimate(rx)?;
                lmmse_2x1d(
                    &ls,
                    &self.covariances,
                    self.effective_noise(rx, &self.covariances.freq),
                    self.effective_noise(rx, &self.covariances.time),
                )
            }
            EstimatorKind::Bpcm | EstimatorKind::Lbpce => self.bpcm.estimate(rx),
        }
    }

    /// Per-user estimates on every symbol, `(T, N, M)` each. Pilot-grid
    /// estimators are extended by linear interpolation in time.
    pub fn full_estimate(&self, kind: EstimatorKind, rx: &RxFrame<T>) -> Result<Vec<Array3<Cx<T>>>> {
        match kind {
            EstimatorKind::Genie => Ok((0..self.cfg.users).map(|k| rx.truth.user(k).to_owned()).collect()),
            EstimatorKind::Lbpce => {
                let net = self.network.as_ref().ok_or_else(|| Error::MissingWeights(kind.to_string()))?;
                let module_a = self.bpcm.estimate(rx)?;
                module_a.par_iter().map(|x| net.forward(x.view())).collect()
            }
            _ => self
                .pilot_estimate(kind, rx)?
                .iter()
                .map(|x| interp_time_linear(x.view(), &self.cfg.pilot_positions, self.cfg.symbols))
                .collect(),
        }
    }

    fn truth_at_pilots(&self, rx: &RxFrame<T>) -> Vec<Array3<Cx<T>>> {
        let (tp, n, m) = (self.cfg.pilot_symbols, self.cfg.subcarriers, self.cfg.antennas);
        (0..self.cfg.users)
            .map(|k| {
                let mut out = Array3::from_elem((tp, n, m), Cx::new(T::zero(), T::zero()));
                for (i, &p) in self.cfg.pilot_positions.iter().enumerate() {
                    out.slice_mut(s![i, .., ..]).assign(&rx.truth.h.slice(s![k, p - 1, .., ..]));
                }
                out
            })
            .collect()
    }
}

/// Full-grid NMSE sums of per-user estimates against a frame's truth.
pub fn score<T: Real>(estimates: &[Array3<Cx<T>>], rx: &RxFrame<T>) -> Result<Nmse> {
    if estimates.len() != rx.truth.h.shape()[0] {
        return Err(Error::DimensionMismatch(format!(
            "{} user estimates for {} users",
            estimates.len(),
            rx.truth.h.shape()[0]
        )));
    }
    let mut total = Nmse::default();
    for (k, e) in estimates.iter().enumerate() {
        total.merge(nmse_sums(e.view(), rx.truth.user(k))?);
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct SweepConfig<T: Real> {
    pub frame: FrameConfig,
    pub profile: ProfileSpec,
    pub estimators: Vec<EstimatorKind>,
    pub snr_db: Vec<f64>,
    pub frames: usize,
    pub seed: u64,
    pub calibration_frames: usize,
    pub network: Option<Network<T>>,
    /// Record wall-clock time per row; off by default so that reports are
    /// byte-identical across runs.
    pub timing: bool,
}

impl<T: Real> SweepConfig<T> {
    pub fn new(frame: FrameConfig, profile: ProfileSpec, estimators: Vec<EstimatorKind>, snr_db: Vec<f64>, frames: usize) -> Self {
        Self {
            frame,
            profile,
            estimators,
            snr_db,
            frames,
            seed: 1,
            calibration_frames: MIN_CALIBRATION_REALIZATIONS,
            network: None,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NmseCell {
    /// NMSE in dB; `-inf` for an exact estimator.
    Db(f64),
    /// At least one frame failed; carries the first error.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub estimator: String,
    pub snr_db: f64,
    pub nmse: NmseCell,
    pub frames: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub complexity: Vec<ComplexityRow>,
}

impl SweepReport {
    pub fn row(&self, estimator: EstimatorKind, snr_db: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator.name() && r.snr_db == snr_db)
    }

    /// `estimator,snr_db,nmse_db,frames,wall_ms`, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("estimator,snr_db,nmse_db,frames,wall_ms\n");
        for r in &self.rows {
            let nmse = match &r.nmse {
                NmseCell::Db(v) if v.is_infinite() && *v < 0.0 => "-inf".to_string(),
                NmseCell::Db(v) => format!("{v:.6}"),
                NmseCell::Failed(_) => "fail".to_string(),
            };
            let _ = writeln!(out, "{},{},{},{},{:.3}", r.estimator, r.snr_db, nmse, r.frames, r.wall_ms);
        }
        out
    }

    pub fn complexity_csv(&self) -> String {
        complexity_csv(&self.complexity)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

type Cell = std::result::Result<(Nmse, f64), String>;

/// Monte-Carlo NMSE for every (estimator, SNR) pair.
///
/// Frame `i` uses the same channel and noise seeds for every estimator and
/// every SNR. Frames run in parallel and are reduced in index order, so the
/// report depends only on the configuration.
pub fn run_sweep<T: Real>(sc: &SweepConfig<T>) -> Result<SweepReport> {
    let cfg = &sc.frame;
    cfg.validate()?;
    if sc.frames == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let pilots = PilotBook::<T>::generate(cfg)?;
    let needs_calibration = sc.estimators.iter().any(|k| *k != EstimatorKind::Genie);
    let calibration = if needs_calibration {
        calibrate(cfg, &sc.profile, &pilots, sc.calibration_frames, sc.seed)?
    } else {
        Calibration {
            priors: PriorTable::uniform(cfg, T::one(), T::one(), T::one(), T::one()),
            covariances: CovarianceBank::identity(cfg),
        }
    };
    let suite = EstimatorSuite::new(cfg, &pilots, calibration, sc.network.clone())?;
    let (ne, ns) = (sc.estimators.len(), sc.snr_db.len());

    let per_frame = (0..sc.frames)
        .into_par_iter()
        .map(|i| -> Result<Vec<Cell>> {
            let real = realize::<T>(cfg, &sc.profile, derive_seed(sc.seed, CHANNEL_STREAM, i as u64))?;
            let noise_seed = derive_seed(sc.seed, NOISE_STREAM, i as u64);
            let mut cells = Vec::with_capacity(ne * ns);
            for &kind in &sc.estimators {
                for &snr in &sc.snr_db {
                    let rx = synthesize_rx(cfg, &pilots, &real, snr, noise_seed)?;
                    let start = Instant::now();
                    let est = suite.full_estimate(kind, &rx);
                    let ms = start.elapsed().as_secs_f64() * 1e3;
                    cells.push(
                        est.and_then(|e| score(&e, &rx))
                            .map(|n| (n, ms))
                            .map_err(|e| format!("{}: {e}", e.code())),
                    );
                }
            }
            Ok(cells)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(ne * ns);
    for (ei, kind) in sc.estimators.iter().enumerate() {
        for (si, &snr) in sc.snr_db.iter().enumerate() {
            let mut total = Nmse::default();
            let mut wall = 0.0;
            let mut failure = None;
            for cells in &per_frame {
                match &cells[ei * ns + si] {
                    Ok((n, ms)) => {
                        total.merge(*n);
                        wall += ms;
                    }
                    Err(msg) => {
                        failure.get_or_insert_with(|| msg.clone());
                    }
                }
            }
            let nmse = match failure {
                Some(msg) => NmseCell::Failed(msg),
                None if total.energy == 0.0 => NmseCell::Failed(Error::ZeroTruth.to_string()),
                None => NmseCell::Db(total.db()),
            };
            rows.push(SweepRow {
                estimator: kind.name().into(),
                snr_db: snr,
                nmse,
                frames: sc.frames,
                wall_ms: if sc.timing { wall } else { 0.0 },
            });
        }
    }

    let complexity = complexity_lbpce(cfg)?;
    let mut complexity_rows = Vec::new();
    for kind in &sc.estimators {
        let count = match kind {
            EstimatorKind::Bpcm => complexity.module_a,
            EstimatorKind::Lbpce => complexity.total(),
            _ => continue,
        };
        complexity_rows.push(ComplexityRow {
            estimator: kind.name().into(),
            users: cfg.users,
            multiplications: count,
        });
    }
    Ok(SweepReport {
        rows,
        complexity: complexity_rows,
    })
}
