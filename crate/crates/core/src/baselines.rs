//! Classical comparison estimators: block-wise flat least squares, Wiener
//! smoothing along frequency (and then time), and linear time interpolation.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;

use crate::bpcm::{rearrange, Regressors};
use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::frame::{FrameConfig, PilotBook, SubBlockIndex};
use crate::linalg::{adjoint_mul, matmul, wiener_matrix, Cholesky};
use crate::scalar::{czero, Cx, Real};
use crate::system::RxFrame;

/// Least-squares fit of the flat (mean-only) model `Y ≈ F·Q`, returns `Q̂` (`K × M`).
pub fn ls_subblock<T: Real>(y: ArrayView2<'_, Cx<T>>, mean_regressor: ArrayView2<'_, Cx<T>>) -> Result<Array2<Cx<T>>> {
    let users = mean_regressor.ncols();
    if mean_regressor.nrows() < users {
        return Err(Error::RankDeficient { users });
    }
    let gram = adjoint_mul(mean_regressor, mean_regressor);
    let rhs = adjoint_mul(mean_regressor, y);
    let chol = Cholesky::factor_with_tolerance(gram.view(), T::lit(1e-10))
        .map_err(|_| Error::RankDeficient { users })?;
    Ok(chol.solve(rhs.view()))
}

/// Block-wise LS over a whole frame, expanded to constant per-block pilot
/// estimates; per-user `(T_P, N, M)`.
#[derive(Debug, Clone)]
pub struct LsEstimator<T: Real> {
    cfg: FrameConfig,
    regressors: Vec<Array2<Cx<T>>>,
}

impl<T: Real> LsEstimator<T> {
    pub fn new(cfg: &FrameConfig, pilots: &PilotBook<T>) -> Result<Self> {
        cfg.validate()?;
        let regressors = cfg
            .blocks()
            .map(|b| crate::bpcm::build_regressors(cfg, pilots, b).mean)
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            regressors,
        })
    }

    pub fn estimate(&self, rx: &RxFrame<T>) -> Result<Vec<Array3<Cx<T>>>> {
        let cfg = &self.cfg;
        let blocks: Vec<SubBlockIndex> = cfg.blocks().collect();
        let expanded = blocks
            .par_iter()
            .map(|&b| {
                let obs = rx.block(b).ok_or(Error::MissingBlock { u: b.u, v: b.v })?;
                let q = ls_subblock(obs.y.view(), self.regressors[cfg.block_ordinal(b)].view())?;
                let mut t = Array3::from_elem((cfg.users, cfg.block_pilot_len(), cfg.antennas), czero());
                for k in 0..cfg.users {
                    for r in 0..cfg.block_pilot_len() {
                        t.slice_mut(s![k, r, ..]).assign(&q.row(k));
                    }
                }
                Ok((b, t))
            })
            .collect::<Result<Vec<_>>>()?;
        rearrange(cfg, &expanded)
    }
}

/// Returns the mean-only slice of a [`Regressors`] set, for LS.
pub fn mean_regressor<T: Real>(reg: &Regressors<T>) -> ArrayView2<'_, Cx<T>> {
    reg.mean.view()
}

/// Sample covariances along frequency and along pilot symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBank<T: Real> {
    /// `N × N`.
    pub freq: Array2<Cx<T>>,
    /// `T_P × T_P` over the pilot symbols.
    pub time: Array2<Cx<T>>,
    pub estimated_from: usize,
}

impl<T: Real> CovarianceBank<T> {
    /// `R_f = E[h_f h_fᴴ]` over (user, symbol, antenna) and `R_t` over
    /// (user, subcarrier, antenna) at the pilot symbols.
    pub fn estimate(cfg: &FrameConfig, training: &[ChannelRealization<T>]) -> Result<Self> {
        let mut acc = CovarianceAccumulator::new(cfg);
        for real in training {
            acc.add(real);
        }
        acc.finish()
    }

    pub fn identity(cfg: &FrameConfig) -> Self {
        Self {
            freq: eye(cfg.subcarriers),
            time: eye(cfg.pilot_symbols),
            estimated_from: 0,
        }
    }
}

/// Streaming sample covariances for [`CovarianceBank`].
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator<T: Real> {
    cfg: FrameConfig,
    freq: Array2<Cx<T>>,
    time: Array2<Cx<T>>,
    freq_samples: usize,
    time_samples: usize,
    seen: usize,
}

impl<T: Real> CovarianceAccumulator<T> {
    pub fn new(cfg: &FrameConfig) -> Self {
        let (n, tp) = (cfg.subcarriers, cfg.pilot_symbols);
        Self {
            cfg: cfg.clone(),
            freq: Array2::from_elem((n, n), czero()),
            time: Array2::from_elem((tp, tp), czero()),
            freq_samples: 0,
            time_samples: 0,
            seen: 0,
        }
    }

    pub fn add(&mut self, real: &ChannelRealization<T>) {
        let cfg = &self.cfg;
        for k in 0..cfg.users {
            for m in 0..cfg.antennas {
                for t in 0..cfg.symbols {
                    accumulate_outer(&mut self.freq, real.h.slice(s![k, t, .., m]).iter().copied());
                    self.freq_samples += 1;
                }
                for sc in 0..cfg.subcarriers {
                    let h = cfg.pilot_positions.iter().map(|&p| real.h[[k, p - 1, sc, m]]);
                    accumulate_outer(&mut self.time, h);
                    self.time_samples += 1;
                }
            }
        }
        self.seen += 1;
    }

    pub fn finish(&self) -> Result<CovarianceBank<T>> {
        if self.seen == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let (nf, nt) = (T::lit(self.freq_samples as f64), T::lit(self.time_samples as f64));
        Ok(CovarianceBank {
            freq: self.freq.mapv(|z| z / nf),
            time: self.time.mapv(|z| z / nt),
            estimated_from: self.seen,
        })
    }
}

fn eye<T: Real>(n: usize) -> Array2<Cx<T>> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            Cx::new(T::one(), T::zero())
        } else {
            czero()
        }
    })
}

fn accumulate_outer<T: Real>(acc: &mut Array2<Cx<T>>, v: impl Iterator<Item = Cx<T>>) {
    let v: Vec<Cx<T>> = v.collect();
    for i in 0..v.len() {
        for j in 0..v.len() {
            acc[[i, j]] += v[i] * v[j].conj();
        }
    }
}

/// Applies `W` along `axis` of a `(S, N, M)` tensor.
fn filter_axis<T: Real>(x: ArrayView3<'_, Cx<T>>, w: &Array2<Cx<T>>, axis: usize) -> Array3<Cx<T>> {
    let mut out = Array3::from_elem(x.raw_dim(), czero());
    let other = if axis == 0 { 1 } else { 0 };
    for a in 0..x.len_of(Axis(other)) {
        // (len along `axis`, M)
        let lane_in = x.index_axis(Axis(other), a);
        let filtered = matmul(w.view(), lane_in);
        out.index_axis_mut(Axis(other), a).assign(&filtered);
    }
    out
}

/// Wiener smoothing across subcarriers: `R_f·(R_f + σ²_eff·I)⁻¹` per
/// (pilot symbol, antenna) of each user tensor `(T_P, N, M)`.
pub fn lmmse_1d_freq<T: Real>(
    estimates: &[Array3<Cx<T>>],
    bank: &CovarianceBank<T>,
    sigma2_eff: T,
) -> Result<Vec<Array3<Cx<T>>>> {
    let w = wiener_matrix(bank.freq.view(), sigma2_eff)?;
    Ok(estimates.par_iter().map(|e| filter_axis(e.view(), &w, 1)).collect())
}

/// Frequency Wiener filter followed by a time Wiener filter over the pilot symbols.
pub fn lmmse_2x1d<T: Real>(
    estimates: &[Array3<Cx<T>>],
    bank: &CovarianceBank<T>,
    sigma2_freq: T,
    sigma2_time: T,
) -> Result<Vec<Array3<Cx<T>>>> {
    let wf = wiener_matrix(bank.freq.view(), sigma2_freq)?;
    let wt = wiener_matrix(bank.time.view(), sigma2_time)?;
    Ok(estimates
        .par_iter()
        .map(|e| filter_axis(filter_axis(e.view(), &wf, 1).view(), &wt, 0))
        .collect())
}

/// Linear interpolation in global symbol index from pilot symbols to all
/// `T` symbols; values outside the pilot span are held constant.
pub fn interp_time_linear<T: Real>(
    pilot_est: ArrayView3<'_, Cx<T>>,
    pilot_positions: &[usize],
    symbols: usize,
) -> Result<Array3<Cx<T>>> {
    if pilot_positions.len() < 2 {
        return Err(Error::TooFewPilots(pilot_positions.len()));
    }
    if pilot_est.len_of(Axis(0)) != pilot_positions.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} pilot symbols in estimate, {} positions",
            pilot_est.len_of(Axis(0)),
            pilot_positions.len()
        )));
    }
    let (_, n, m) = pilot_est.dim();
    let mut out = Array3::from_elem((symbols, n, m), czero());
    let last = pilot_positions.len() - 1;
    for t in 1..=symbols {
        let mut dst = out.slice_mut(s![t - 1, .., ..]);
        if t <= pilot_positions[0] {
            dst.assign(&pilot_est.slice(s![0, .., ..]));
        } else if t >= pilot_positions[last] {
            dst.assign(&pilot_est.slice(s![last, .., ..]));
        } else {
            let hi = pilot_positions.partition_point(|&p| p < t);
            let lo = hi - 1;
            let (p0, p1) = (pilot_positions[lo] as f64, pilot_positions[hi] as f64);
            let w = T::lit((t as f64 - p0) / (p1 - p0));
            let a = pilot_est.slice(s![lo, .., ..]);
            let b = pilot_est.slice(s![hi, .., ..]);
            ndarray::Zip::from(&mut dst)
                .and(&a)
                .and(&b)
                .for_each(|d, &x0, &x1| *d = x0 + (x1 - x0) * w);
        }
    }
    Ok(out)
}
