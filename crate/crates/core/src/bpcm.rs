//! Block-wise planar channel estimation.
//!
//! Inside each sub-block the channel of user `k` at antenna `m` is modelled
//! as a plane `c·γ_t + d·λ_n + q` over the local time bias `γ_t` and
//! frequency bias `λ_n`. The three coefficient matrices `C`, `D`, `Q`
//! (each `K × M`) get zero-mean priors with per-block scalar variances and
//! are estimated by LMMSE from the pilot rows:
//!
//! ```text
//! Σ      = v_C·A·Aᴴ + v_D·B·Bᴴ + v_Q·F·Fᴴ + σ²_Z·I
//! C_post = v_C·Aᴴ·Σ⁻¹·Y,  D_post = v_D·Bᴴ·Σ⁻¹·Y,  Q_post = v_Q·Fᴴ·Σ⁻¹·Y
//! ```
//!
//! where column `k` of `A`, `B`, `F` is user `k`'s pilots times the time
//! bias, frequency bias and ones at the pilot rows. A single Cholesky
//! factorization of `Σ` serves all three posteriors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};
use rayon::prelude::*;

use crate::channel::{subblock_channel, ChannelRealization};
use crate::error::{Error, Result};
use crate::frame::{parse_key_values, selection_pattern, FrameConfig, PilotBook, SubBlockIndex};
use crate::linalg::{adjoint_mul, Cholesky};
use crate::scalar::{czero, Cx, Real};
use crate::system::{noise_variance, RxFrame};

/// Minimum number of training realizations accepted by [`calibrate_priors`].
pub const MIN_CALIBRATION_REALIZATIONS: usize = 30;

/// Time and frequency bias over the full sub-block, frequency-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasVectors<T: Real> {
    /// `e1`: `−T/(2U) + t` at local symbol `t`.
    pub time: Vec<T>,
    /// `e2`: `−N/(2V) + n` at local subcarrier `n`.
    pub freq: Vec<T>,
}

pub fn bias_vectors<T: Real>(cfg: &FrameConfig) -> BiasVectors<T> {
    let (bt, bn) = (cfg.block_symbols(), cfg.block_subcarriers());
    let half_t = bt as f64 / 2.0;
    let half_n = bn as f64 / 2.0;
    let mut time = Vec::with_capacity(bt * bn);
    let mut freq = Vec::with_capacity(bt * bn);
    for t in 1..=bt {
        for n in 1..=bn {
            time.push(T::lit(t as f64 - half_t));
            freq.push(T::lit(n as f64 - half_n));
        }
    }
    BiasVectors { time, freq }
}

/// Pilot-row regressors `A^P`, `B^P`, `F^P` of one sub-block, each `(N·T_P/(VU)) × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressors<T: Real> {
    pub time: Array2<Cx<T>>,
    pub freq: Array2<Cx<T>>,
    pub mean: Array2<Cx<T>>,
}

impl<T: Real> Regressors<T> {
    pub fn rows(&self) -> usize {
        self.mean.nrows()
    }

    pub fn users(&self) -> usize {
        self.mean.ncols()
    }

    /// `[A B F]`, used by oracles and diagnostics.
    pub fn stacked(&self) -> Array2<Cx<T>> {
        ndarray::concatenate(
            ndarray::Axis(1),
            &[self.time.view(), self.freq.view(), self.mean.view()],
        )
        .expect("regressors share row count")
    }
}

pub fn build_regressors<T: Real>(cfg: &FrameConfig, pilots: &PilotBook<T>, b: SubBlockIndex) -> Regressors<T> {
    let bias = bias_vectors::<T>(cfg);
    let rows = selection_pattern(cfg, b);
    let shape = (rows.len(), cfg.users);
    let mut out = Regressors {
        time: Array2::from_elem(shape, czero()),
        freq: Array2::from_elem(shape, czero()),
        mean: Array2::from_elem(shape, czero()),
    };
    for k in 0..cfg.users {
        let x = pilots.block_pilots(cfg, k, b);
        for (r, &row) in rows.iter().enumerate() {
            out.time[[r, k]] = x[r] * bias.time[row];
            out.freq[[r, k]] = x[r] * bias.freq[row];
            out.mean[[r, k]] = x[r];
        }
    }
    out
}

/// Prior variances of the three coefficient matrices and the effective noise floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec<T: Real> {
    pub v_c: T,
    pub v_d: T,
    pub v_q: T,
    /// Variance of `Z = Σ_k X_k·Δ_k + W`: AWGN plus planar-model mismatch.
    pub sigma2_z: T,
}

impl<T: Real> PriorSpec<T> {
    pub fn new(v_c: T, v_d: T, v_q: T, sigma2_z: T) -> Self {
        Self { v_c, v_d, v_q, sigma2_z }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.v_c, self.v_d, self.v_q]
            .iter()
            .all(|v| v.is_finite() && *v >= T::zero())
            && self.sigma2_z.is_finite()
            && self.sigma2_z > T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::NumericalFailure(format!(
                "invalid prior: v_C={} v_D={} v_Q={} sigma2_Z={}",
                self.v_c, self.v_d, self.v_q, self.sigma2_z
            )))
        }
    }
}

/// Observation covariance `Σ` of one sub-block; exactly Hermitian.
pub fn covariance<T: Real>(reg: &Regressors<T>, prior: &PriorSpec<T>) -> Array2<Cx<T>> {
    let p = reg.rows();
    let mut sigma = Array2::from_elem((p, p), czero());
    for i in 0..p {
        for j in 0..=i {
            let mut acc = czero();
            for (mat, v) in [(&reg.time, prior.v_c), (&reg.freq, prior.v_d), (&reg.mean, prior.v_q)] {
                if v == T::zero() {
                    continue;
                }
                let mut dot = czero();
                for k in 0..reg.users() {
                    dot += mat[[i, k]] * mat[[j, k]].conj();
                }
                acc += dot * v;
            }
            if i == j {
                sigma[[i, i]] = Cx::new(acc.re + prior.sigma2_z, T::zero());
            } else {
                sigma[[i, j]] = acc;
                sigma[[j, i]] = acc.conj();
            }
        }
    }
    sigma
}

/// Posterior means of the planar coefficients, each `K × M`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarCoefficients<T: Real> {
    /// Time-domain slope.
    pub c: Array2<Cx<T>>,
    /// Frequency-domain slope.
    pub d: Array2<Cx<T>>,
    /// Mean.
    pub q: Array2<Cx<T>>,
}

impl<T: Real> PlanarCoefficients<T> {
    pub fn zeros(users: usize, antennas: usize) -> Self {
        let z = Array2::from_elem((users, antennas), czero());
        Self {
            c: z.clone(),
            d: z.clone(),
            q: z,
        }
    }
}

/// LMMSE posteriors with zero prior means.
pub fn lmmse_posteriors<T: Real>(
    y: ArrayView2<'_, Cx<T>>,
    reg: &Regressors<T>,
    prior: &PriorSpec<T>,
) -> Result<PlanarCoefficients<T>> {
    prior.validate()?;
    if y.nrows() != reg.rows() {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} rows, regressors {}",
            y.nrows(),
            reg.rows()
        )));
    }
    let sigma = covariance(reg, prior);
    let whitened = Cholesky::factor(sigma.view())?.solve(y);
    let post = |mat: &Array2<Cx<T>>, v: T| adjoint_mul(mat.view(), whitened.view()).mapv(|z| z * v);
    Ok(PlanarCoefficients {
        c: post(&reg.time, prior.v_c),
        d: post(&reg.freq, prior.v_d),
        q: post(&reg.mean, prior.v_q),
    })
}

/// Pilot-row channel of every user, shape `(K, N·T_P/(VU), M)`:
/// `(S·e1)·c_kᵀ + (S·e2)·d_kᵀ + 1·q_kᵀ`.
pub fn reconstruct_pilot_channel<T: Real>(
    cfg: &FrameConfig,
    coeffs: &PlanarCoefficients<T>,
    b: SubBlockIndex,
) -> Array3<Cx<T>> {
    let bias = bias_vectors::<T>(cfg);
    let rows = selection_pattern(cfg, b);
    let (users, antennas) = coeffs.q.dim();
    let mut out = Array3::from_elem((users, rows.len(), antennas), czero());
    for k in 0..users {
        for (r, &row) in rows.iter().enumerate() {
            let (et, ef) = (bias.time[row], bias.freq[row]);
            for m in 0..antennas {
                out[[k, r, m]] = coeffs.c[[k, m]] * et + coeffs.d[[k, m]] * ef + coeffs.q[[k, m]];
            }
        }
    }
    out
}

/// Tiles per-block pilot channels `(K, N·T_P/(VU), M)` into per-user
/// `(T_P, N, M)` tensors ordered by global pilot symbol and subcarrier.
pub fn rearrange<T: Real>(cfg: &FrameConfig, blocks: &[(SubBlockIndex, Array3<Cx<T>>)]) -> Result<Vec<Array3<Cx<T>>>> {
    let mut by_block: BTreeMap<SubBlockIndex, &Array3<Cx<T>>> = BTreeMap::new();
    for (b, t) in blocks {
        let want = [cfg.users, cfg.block_pilot_len(), cfg.antennas];
        if t.shape() != want {
            return Err(Error::DimensionMismatch(format!(
                "block ({}, {}) has shape {:?}, expected {:?}",
                b.u,
                b.v,
                t.shape(),
                want
            )));
        }
        by_block.insert(*b, t);
    }
    let per_block = cfg.block_pilot_symbols();
    let width = cfg.block_subcarriers();
    let mut out = vec![Array3::from_elem((cfg.pilot_symbols, cfg.subcarriers, cfg.antennas), czero()); cfg.users];
    for b in cfg.blocks() {
        let t = by_block
            .get(&b)
            .ok_or(Error::MissingBlock { u: b.u, v: b.v })?;
        let p0 = (b.u - 1) * per_block;
        let n0 = (b.v - 1) * width;
        for (k, user) in out.iter_mut().enumerate() {
            for r in 0..cfg.block_pilot_len() {
                let (p, n) = (p0 + r / width, n0 + r % width);
                user.slice_mut(s![p, n, ..]).assign(&t.slice(s![k, r, ..]));
            }
        }
    }
    Ok(out)
}

/// Calibrated prior of one sub-block; `σ²_Z` follows the noise level at use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockPrior<T: Real> {
    pub v_c: T,
    pub v_d: T,
    pub v_q: T,
    /// Planar-model mismatch power folded into `σ²_Z`.
    pub mismatch: T,
    /// Overrides `noise_inflation·σ² + mismatch` when set.
    pub pinned_sigma2_z: Option<T>,
}

/// Per-sub-block priors in [`FrameConfig::blocks`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorTable<T: Real> {
    pub time_blocks: usize,
    pub freq_blocks: usize,
    pub blocks: Vec<BlockPrior<T>>,
    /// Multiplies the AWGN variance inside `σ²_Z`.
    pub noise_inflation: T,
}

impl<T: Real> PriorTable<T> {
    /// Same variances in every block, no mismatch term.
    pub fn uniform(cfg: &FrameConfig, v_c: T, v_d: T, v_q: T, noise_inflation: T) -> Self {
        Self {
            time_blocks: cfg.time_blocks,
            freq_blocks: cfg.freq_blocks,
            blocks: vec![
                BlockPrior {
                    v_c,
                    v_d,
                    v_q,
                    mismatch: T::zero(),
                    pinned_sigma2_z: None,
                };
                cfg.block_count()
            ],
            noise_inflation,
        }
    }

    pub fn block(&self, b: SubBlockIndex) -> &BlockPrior<T> {
        &self.blocks[(b.u - 1) * self.freq_blocks + (b.v - 1)]
    }

    /// Prior for block `b` at AWGN variance `noise_var`.
    pub fn spec(&self, b: SubBlockIndex, noise_var: T) -> PriorSpec<T> {
        let bp = self.block(b);
        let sigma2_z = bp
            .pinned_sigma2_z
            .unwrap_or(self.noise_inflation * noise_var + bp.mismatch);
        PriorSpec::new(bp.v_c, bp.v_d, bp.v_q, sigma2_z)
    }

    fn check(&self, cfg: &FrameConfig) -> Result<()> {
        if self.time_blocks != cfg.time_blocks
            || self.freq_blocks != cfg.freq_blocks
            || self.blocks.len() != cfg.block_count()
        {
            return Err(Error::DimensionMismatch(format!(
                "prior table is {}x{}, config partition is {}x{}",
                self.time_blocks, self.freq_blocks, cfg.time_blocks, cfg.freq_blocks
            )));
        }
        Ok(())
    }

    /// Key-value text: `v_C[u,v]`, `v_D[u,v]`, `v_Q[u,v]`, `sigma2_Z[u,v]`
    /// (at `reference_snr_db`) and `mismatch[u,v]`.
    pub fn to_text(&self, cfg: &FrameConfig, reference_snr_db: f64) -> String {
        let noise = T::lit(noise_variance(reference_snr_db, cfg));
        let mut s = String::new();
        let _ = writeln!(s, "U = {}", self.time_blocks);
        let _ = writeln!(s, "V = {}", self.freq_blocks);
        let _ = writeln!(s, "snr_db = {reference_snr_db}");
        let _ = writeln!(s, "noise_inflation = {}", self.noise_inflation);
        for b in cfg.blocks() {
            let bp = self.block(b);
            let spec = self.spec(b, noise);
            let tag = format!("[{},{}]", b.u, b.v);
            let _ = writeln!(s, "v_C{tag} = {}", bp.v_c);
            let _ = writeln!(s, "v_D{tag} = {}", bp.v_d);
            let _ = writeln!(s, "v_Q{tag} = {}", bp.v_q);
            let _ = writeln!(s, "sigma2_Z{tag} = {}", spec.sigma2_z);
            if bp.pinned_sigma2_z.is_none() {
                let _ = writeln!(s, "mismatch{tag} = {}", bp.mismatch);
            }
        }
        s
    }

    /// Parses [`PriorTable::to_text`] output. Blocks without a `mismatch`
    /// key keep their `sigma2_Z` fixed regardless of SNR.
    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_key_values(text)?;
        let num = |key: &str| -> Result<Option<f64>> {
            match map.get(key) {
                None => Ok(None),
                Some((line, raw)) => raw.parse().map(Some).map_err(|_| Error::Parse {
                    line: *line,
                    msg: format!("`{key}` is not a number: {raw}"),
                }),
            }
        };
        let need = |key: &str| -> Result<f64> {
            num(key)?.ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing key `{key}`"),
            })
        };
        let time_blocks = need("U")? as usize;
        let freq_blocks = need("V")? as usize;
        let noise_inflation = T::lit(num("noise_inflation")?.unwrap_or(1.0));
        let mut blocks = Vec::new();
        for u in 1..=time_blocks {
            for v in 1..=freq_blocks {
                let tag = format!("[{u},{v}]");
                let mismatch = num(&format!("mismatch{tag}"))?;
                let sigma = num(&format!("sigma2_Z{tag}"))?;
                let pinned = match (mismatch, sigma) {
                    (Some(_), _) => None,
                    (None, Some(s)) => Some(T::lit(s)),
                    (None, None) => {
                        return Err(Error::Parse {
                            line: 0,
                            msg: format!("block {tag} has neither sigma2_Z nor mismatch"),
                        })
                    }
                };
                blocks.push(BlockPrior {
                    v_c: T::lit(need(&format!("v_C{tag}"))?),
                    v_d: T::lit(need(&format!("v_D{tag}"))?),
                    v_q: T::lit(need(&format!("v_Q{tag}"))?),
                    mismatch: T::lit(mismatch.unwrap_or(0.0)),
                    pinned_sigma2_z: pinned,
                });
            }
        }
        Ok(Self {
            time_blocks,
            freq_blocks,
            blocks,
            noise_inflation,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Least-squares plane `(c, d, q)` through each column of a full sub-block
/// channel, plus the residual at every row.
pub fn planar_fit<T: Real>(
    bias: &BiasVectors<T>,
    block: ArrayView2<'_, Cx<T>>,
) -> Result<(Array2<Cx<T>>, Array2<Cx<T>>)> {
    let rows = block.nrows();
    let design = Array2::from_shape_fn((rows, 3), |(r, j)| {
        let x = match j {
            0 => bias.time[r],
            1 => bias.freq[r],
            _ => T::one(),
        };
        Cx::new(x, T::zero())
    });
    let gram = adjoint_mul(design.view(), design.view());
    let rhs = adjoint_mul(design.view(), block);
    let coef = Cholesky::factor_with_tolerance(gram.view(), T::lit(1e-12))?.solve(rhs.view());
    let mut resid = block.to_owned();
    for r in 0..rows {
        for m in 0..block.ncols() {
            let fit = coef[[0, m]] * bias.time[r] + coef[[1, m]] * bias.freq[r] + coef[[2, m]];
            resid[[r, m]] -= fit;
        }
    }
    Ok((coef, resid))
}

#[derive(Debug, Clone, Copy, Default)]
struct BlockMoments<T: Real> {
    c: T,
    d: T,
    q: T,
    resid: T,
    coefs: usize,
    resids: usize,
}

/// Streaming form of [`calibrate_priors`]: feed realizations one at a time.
#[derive(Debug, Clone)]
pub struct PriorCalibrator<T: Real> {
    cfg: FrameConfig,
    bias: BiasVectors<T>,
    x_power: T,
    moments: Vec<BlockMoments<T>>,
    seen: usize,
}

impl<T: Real> PriorCalibrator<T> {
    pub fn new(cfg: &FrameConfig, pilots: &PilotBook<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            bias: bias_vectors(cfg),
            x_power: pilots.mean_power(),
            moments: vec![BlockMoments::default(); cfg.block_count()],
            seen: 0,
        })
    }

    pub fn add(&mut self, real: &ChannelRealization<T>) -> Result<()> {
        let cfg = &self.cfg;
        let bias = &self.bias;
        let updates = cfg
            .blocks()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&b| -> Result<BlockMoments<T>> {
                let rows = selection_pattern(cfg, b);
                let mut acc = BlockMoments::default();
                for k in 0..cfg.users {
                    let block = subblock_channel(cfg, real, k, b);
                    let (coef, resid) = planar_fit(bias, block.view())?;
                    for m in 0..cfg.antennas {
                        acc.c += coef[[0, m]].norm_sqr();
                        acc.d += coef[[1, m]].norm_sqr();
                        acc.q += coef[[2, m]].norm_sqr();
                    }
                    acc.coefs += cfg.antennas;
                    for &r in &rows {
                        acc.resid += resid.row(r).iter().map(|z| z.norm_sqr()).sum::<T>();
                    }
                    acc.resids += rows.len() * cfg.antennas;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        for (m, u) in self.moments.iter_mut().zip(updates) {
            m.c += u.c;
            m.d += u.d;
            m.q += u.q;
            m.resid += u.resid;
            m.coefs += u.coefs;
            m.resids += u.resids;
        }
        self.seen += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<PriorTable<T>> {
        if self.seen < MIN_CALIBRATION_REALIZATIONS {
            return Err(Error::InsufficientData {
                needed: MIN_CALIBRATION_REALIZATIONS,
                got: self.seen,
            });
        }
        let users = T::lit(self.cfg.users as f64);
        let blocks = self
            .moments
            .iter()
            .map(|m| {
                let nc = T::lit(m.coefs as f64);
                BlockPrior {
                    v_c: m.c / nc,
                    v_d: m.d / nc,
                    v_q: m.q / nc,
                    mismatch: users * self.x_power * m.resid / T::lit(m.resids as f64),
                    pinned_sigma2_z: None,
                }
            })
            .collect();
        Ok(PriorTable {
            time_blocks: self.cfg.time_blocks,
            freq_blocks: self.cfg.freq_blocks,
            blocks,
            noise_inflation: T::one(),
        })
    }
}

/// Estimates per-block prior variances and the mismatch floor from training channels.
///
/// Per block, every true user/antenna column is fit by a plane; the prior
/// variances are the second moments of the fitted coefficients and the
/// mismatch is `K · E|x|² · E|Δ|²` over pilot-row residuals `Δ`.
pub fn calibrate_priors<T: Real>(
    cfg: &FrameConfig,
    pilots: &PilotBook<T>,
    training: &[ChannelRealization<T>],
) -> Result<PriorTable<T>> {
    cfg.validate()?;
    if training.len() < MIN_CALIBRATION_REALIZATIONS {
        return Err(Error::InsufficientData {
            needed: MIN_CALIBRATION_REALIZATIONS,
            got: training.len(),
        });
    }
    let mut cal = PriorCalibrator::new(cfg, pilots)?;
    for real in training {
        cal.add(real)?;
    }
    cal.finish()
}

/// Module-A pipeline: regressors are cached per sub-block for a fixed pilot book.
#[derive(Debug, Clone)]
pub struct BpcmEstimator<T: Real> {
    cfg: FrameConfig,
    priors: PriorTable<T>,
    regressors: Vec<Regressors<T>>,
}

impl<T: Real> BpcmEstimator<T> {
    pub fn new(cfg: &FrameConfig, pilots: &PilotBook<T>, priors: PriorTable<T>) -> Result<Self> {
        cfg.validate()?;
        priors.check(cfg)?;
        let regressors = cfg.blocks().map(|b| build_regressors(cfg, pilots, b)).collect();
        Ok(Self {
            cfg: cfg.clone(),
            priors,
            regressors,
        })
    }

    pub fn priors(&self) -> &PriorTable<T> {
        &self.priors
    }

    pub fn regressors(&self, b: SubBlockIndex) -> &Regressors<T> {
        &self.regressors[self.cfg.block_ordinal(b)]
    }

    /// Posterior coefficients of every sub-block, in block order.
    pub fn coefficients(&self, rx: &RxFrame<T>) -> Result<Vec<(SubBlockIndex, PlanarCoefficients<T>)>> {
        let blocks: Vec<SubBlockIndex> = self.cfg.blocks().collect();
        blocks
            .par_iter()
            .map(|&b| {
                let obs = rx.block(b).ok_or(Error::MissingBlock { u: b.u, v: b.v })?;
                let prior = self.priors.spec(b, obs.noise_var);
                let coeffs = lmmse_posteriors(obs.y.view(), self.regressors(b), &prior)?;
                Ok((b, coeffs))
            })
            .collect()
    }

    /// Per-user pilot-symbol channel estimates, each `(T_P, N, M)`.
    pub fn estimate(&self, rx: &RxFrame<T>) -> Result<Vec<Array3<Cx<T>>>> {
        let recon: Vec<_> = self
            .coefficients(rx)?
            .into_iter()
            .map(|(b, c)| (b, reconstruct_pilot_channel(&self.cfg, &c, b)))
            .collect();
        rearrange(&self.cfg, &recon)
    }
}
