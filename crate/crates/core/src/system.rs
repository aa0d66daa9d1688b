//! Received pilot synthesis: `Y^P = Σ_k diag(x^P_k)·H^P_k + W^P` per sub-block.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::frame::{selection_pattern, FrameConfig, PilotBook, SubBlockIndex};
use crate::scalar::{czero, Cx, Real};

/// Noise variance per complex sample for a given SNR.
///
/// SNR is the per-antenna received sum-signal power over noise power; with
/// unit-power channels and unit-modulus pilots the signal power is `K`, so
/// `σ² = K / 10^(snr_db/10)`. `+∞` dB disables noise.
pub fn noise_variance(snr_db: f64, cfg: &FrameConfig) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    cfg.users as f64 / 10f64.powf(snr_db / 10.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RxSubBlock<T: Real> {
    pub block: SubBlockIndex,
    /// Shape `(N·T_P/(VU), M)`.
    pub y: Array2<Cx<T>>,
    pub snr_db: f64,
    pub noise_var: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RxFrame<T: Real> {
    /// One entry per sub-block in [`FrameConfig::blocks`] order.
    pub blocks: Vec<RxSubBlock<T>>,
    pub truth: ChannelRealization<T>,
}

impl<T: Real> RxFrame<T> {
    pub fn block(&self, b: SubBlockIndex) -> Option<&RxSubBlock<T>> {
        self.blocks.iter().find(|x| x.block == b)
    }

    pub fn snr_db(&self) -> f64 {
        self.blocks.first().map_or(f64::NAN, |b| b.snr_db)
    }

    pub fn noise_var(&self) -> T {
        self.blocks.first().map_or(T::zero(), |b| b.noise_var)
    }
}

fn check_dims<T: Real>(cfg: &FrameConfig, pilots: &PilotBook<T>, real: &ChannelRealization<T>) -> Result<()> {
    let want_h = [cfg.users, cfg.symbols, cfg.subcarriers, cfg.antennas];
    if real.h.shape() != want_h {
        return Err(Error::DimensionMismatch(format!(
            "channel shape {:?}, expected {:?}",
            real.h.shape(),
            want_h
        )));
    }
    let want_x = [cfg.users, cfg.pilot_symbols, cfg.subcarriers];
    if pilots.sequences.shape() != want_x {
        return Err(Error::DimensionMismatch(format!(
            "pilot shape {:?}, expected {:?}",
            pilots.sequences.shape(),
            want_x
        )));
    }
    Ok(())
}

/// Noiseless pilot observation of one sub-block.
pub fn pilot_observation<T: Real>(
    cfg: &FrameConfig,
    pilots: &PilotBook<T>,
    real: &ChannelRealization<T>,
    b: SubBlockIndex,
) -> Array2<Cx<T>> {
    let rows = selection_pattern(cfg, b);
    let (t0, n0) = b.origin(cfg);
    let width = cfg.block_subcarriers();
    let mut y = Array2::from_elem((rows.len(), cfg.antennas), czero());
    for k in 0..cfg.users {
        let x = pilots.block_pilots(cfg, k, b);
        for (r, &row) in rows.iter().enumerate() {
            let (t, n) = (t0 + row / width, n0 + row % width);
            let xr = x[r];
            for m in 0..cfg.antennas {
                y[[r, m]] += xr * real.h[[k, t, n, m]];
            }
        }
    }
    y
}

/// Synthesizes every sub-block's received pilots at `snr_db`.
///
/// Noise is drawn from `noise_seed` in block order then row-major, so frames
/// at different SNRs with the same seed share the same underlying draws.
pub fn synthesize_rx<T: Real>(
    cfg: &FrameConfig,
    pilots: &PilotBook<T>,
    real: &ChannelRealization<T>,
    snr_db: f64,
    noise_seed: u64,
) -> Result<RxFrame<T>> {
    cfg.validate()?;
    check_dims(cfg, pilots, real)?;
    let var = noise_variance(snr_db, cfg);
    let std = (var / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let blocks = cfg
        .blocks()
        .map(|b| {
            let mut y = pilot_observation(cfg, pilots, real, b);
            for z in y.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                if var > 0.0 {
                    *z += Cx::new(T::lit(std * re), T::lit(std * im));
                }
            }
            RxSubBlock {
                block: b,
                y,
                snr_db,
                noise_var: T::lit(var),
            }
        })
        .collect();
    Ok(RxFrame {
        blocks,
        truth: real.clone(),
    })
}
