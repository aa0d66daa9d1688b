//! Tapped multipath channels evaluated on the frame grid.
//!
//! Each user sees `L` paths with per-antenna complex gains, a delay `τ` and a
//! Doppler shift `ν` in cycles per OFDM symbol. The coefficient at global
//! 1-based symbol `t` and subcarrier `n` is
//! `h = Σ_l β_l · exp(−j2π(Δf·τ_l·n + ν_l·t))`.

use std::f64::consts::TAU;
use std::path::Path;

use ndarray::{s, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{parse_key_values, FrameConfig, SubBlockIndex};
use crate::scalar::{czero, Cx, Real};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub delay_ns: f64,
    pub power_db: f64,
}

/// Power-delay profile plus the mobility scenario it is simulated under.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSpec {
    pub name: String,
    pub taps: Vec<Tap>,
    pub rms_delay_spread_s: f64,
    pub speed_mps: f64,
    pub carrier_hz: f64,
}

/// Normalized CDL-B cluster delays and powers.
const CDL_B_TAPS: [(f64, f64); 23] = [
    (0.0000, -4.9),
    (0.1072, -1.8),
    (0.2155, -4.5),
    (0.2095, -3.7),
    (0.2870, -8.6),
    (0.2986, -2.4),
    (0.3752, -1.8),
    (0.5055, -3.2),
    (0.3681, -7.0),
    (0.3697, -3.9),
    (0.5700, -13.9),
    (0.5283, -8.6),
    (1.1021, -11.8),
    (1.2756, -12.8),
    (1.5474, -13.9),
    (1.7842, -13.9),
    (2.0169, -15.8),
    (2.8294, -17.1),
    (3.0219, -16.0),
    (3.6187, -15.7),
    (4.1067, -21.6),
    (4.2790, -22.8),
    (4.7834, -20.9),
];

impl ProfileSpec {
    /// CDL-B cluster table (delays given in ns at unit delay spread) with
    /// i.i.d. per-antenna gains. Defaults: 129 ns, 100 km/h, 3.5 GHz.
    pub fn cdl_b() -> Self {
        Self {
            name: "cdl-b".into(),
            taps: CDL_B_TAPS
                .iter()
                .map(|&(d, p)| Tap {
                    delay_ns: d,
                    power_db: p,
                })
                .collect(),
            rms_delay_spread_s: 129e-9,
            speed_mps: 100.0 / 3.6,
            carrier_hz: 3.5e9,
        }
    }

    /// One tap at zero delay.
    pub fn flat(speed_mps: f64, carrier_hz: f64) -> Self {
        Self {
            name: "flat".into(),
            taps: vec![Tap {
                delay_ns: 0.0,
                power_db: 0.0,
            }],
            rms_delay_spread_s: 0.0,
            speed_mps,
            carrier_hz,
        }
    }

    pub fn with_delay_spread_ns(mut self, ns: f64) -> Self {
        self.rms_delay_spread_s = ns * 1e-9;
        self
    }

    pub fn with_speed_kmh(mut self, kmh: f64) -> Self {
        self.speed_mps = kmh / 3.6;
        self
    }

    /// Tap powers as linear weights summing to one.
    pub fn normalized_powers(&self) -> Vec<f64> {
        let lin: Vec<f64> = self.taps.iter().map(|t| 10f64.powf(t.power_db / 10.0)).collect();
        let total: f64 = lin.iter().sum();
        lin.into_iter().map(|p| p / total).collect()
    }

    /// Power-weighted rms spread of the table's own delays (ns).
    pub fn table_rms_delay_ns(&self) -> f64 {
        let p = self.normalized_powers();
        let mean: f64 = p.iter().zip(&self.taps).map(|(w, t)| w * t.delay_ns).sum();
        let second: f64 = p
            .iter()
            .zip(&self.taps)
            .map(|(w, t)| w * (t.delay_ns - mean).powi(2))
            .sum();
        second.sqrt()
    }

    /// Delays in seconds rescaled so their rms spread equals `rms_delay_spread_s`.
    ///
    /// A table with zero spread keeps its delays as given.
    pub fn scaled_delays_s(&self) -> Vec<f64> {
        let table_rms = self.table_rms_delay_ns();
        if table_rms <= 0.0 || self.rms_delay_spread_s <= 0.0 {
            return self.taps.iter().map(|t| t.delay_ns * 1e-9).collect();
        }
        let factor = self.rms_delay_spread_s / (table_rms * 1e-9);
        self.taps.iter().map(|t| t.delay_ns * 1e-9 * factor).collect()
    }

    /// Maximum Doppler shift in Hz.
    pub fn max_doppler_hz(&self) -> f64 {
        self.speed_mps * self.carrier_hz / SPEED_OF_LIGHT
    }

    /// Parses a tap table: `delay_ns power_db` lines and the header keys
    /// `rms_delay_spread_ns`, `speed_kmh`, `carrier_ghz` (and optional `name`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut header = String::new();
        let mut taps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.contains('=') || line.contains(':') {
                header.push_str(line);
                header.push('\n');
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let parsed: Option<(f64, f64)> = match cols.as_slice() {
                [d, p] => d.parse().ok().zip(p.parse().ok()),
                _ => None,
            };
            let (delay_ns, power_db) = parsed.ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `delay_ns power_db`, got `{line}`"),
            })?;
            if delay_ns < 0.0 || !delay_ns.is_finite() || !power_db.is_finite() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "tap delay must be non-negative and finite".into(),
                });
            }
            taps.push(Tap { delay_ns, power_db });
        }
        let map = parse_key_values(&header)?;
        let num = |key: &str| -> Result<f64> {
            let (line, raw) = map.get(key).ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing key `{key}`"),
            })?;
            raw.parse().map_err(|_| Error::Parse {
                line: *line,
                msg: format!("`{key}` is not a number: {raw}"),
            })
        };
        if taps.is_empty() {
            return Err(Error::EmptyProfile);
        }
        Ok(Self {
            name: map
                .get("name")
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| "custom".into()),
            taps,
            rms_delay_spread_s: num("rms_delay_spread_ns")? * 1e-9,
            speed_mps: num("speed_kmh")? / 3.6,
            carrier_hz: num("carrier_ghz")? * 1e9,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "name = {}\nrms_delay_spread_ns = {}\nspeed_kmh = {}\ncarrier_ghz = {}\n",
            self.name,
            self.rms_delay_spread_s * 1e9,
            self.speed_mps * 3.6,
            self.carrier_hz * 1e-9
        );
        for t in &self.taps {
            s.push_str(&format!("{} {}\n", t.delay_ns, t.power_db));
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Multipath parameters of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPaths<T: Real> {
    /// Shape `(L, M)`: gain of path `l` at antenna `m`.
    pub gains: Array2<Cx<T>>,
    /// Seconds, one per path.
    pub delays_s: Vec<T>,
    /// Cycles per OFDM symbol, one per path.
    pub doppler: Vec<T>,
}

impl<T: Real> UserPaths<T> {
    pub fn path_count(&self) -> usize {
        self.delays_s.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathParams<T: Real> {
    pub users: Vec<UserPaths<T>>,
}

/// Draws gains, delays and Doppler shifts for every user.
///
/// Gains are `CN(0, p_l)` per antenna with normalized tap powers `p_l`;
/// Doppler is `f_D·cos φ / Δf` cycles per symbol with `φ ~ U[0, 2π)`.
pub fn draw_paths<T: Real>(cfg: &FrameConfig, profile: &ProfileSpec, seed: u64) -> Result<PathParams<T>> {
    cfg.validate()?;
    if profile.taps.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let powers = profile.normalized_powers();
    let delays = profile.scaled_delays_s();
    let doppler_per_symbol = profile.max_doppler_hz() * cfg.symbol_duration_s();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = powers.len();
    let users = (0..cfg.users)
        .map(|_| {
            let mut gains = Array2::from_elem((paths, cfg.antennas), czero());
            for (l, &p) in powers.iter().enumerate() {
                let amp = (p / 2.0).sqrt();
                for m in 0..cfg.antennas {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    gains[[l, m]] = Cx::new(T::lit(amp * re), T::lit(amp * im));
                }
            }
            let doppler = (0..paths)
                .map(|_| {
                    let angle: f64 = rng.gen_range(0.0..TAU);
                    T::lit(doppler_per_symbol * angle.cos())
                })
                .collect();
            UserPaths {
                gains,
                delays_s: delays.iter().map(|&d| T::lit(d)).collect(),
                doppler,
            }
        })
        .collect();
    Ok(PathParams { users })
}

/// Paths together with the dense channel they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization<T: Real> {
    pub paths: PathParams<T>,
    /// Shape `(K, T, N, M)`.
    pub h: Array4<Cx<T>>,
}

impl<T: Real> ChannelRealization<T> {
    pub fn user(&self, k: usize) -> ndarray::ArrayView3<'_, Cx<T>> {
        self.h.index_axis(ndarray::Axis(0), k)
    }
}

/// Single-coefficient evaluation of the multipath sum at 1-based `(t, n)`.
pub fn channel_coefficient<T: Real>(cfg: &FrameConfig, user: &UserPaths<T>, m: usize, t: usize, n: usize) -> Cx<T> {
    let df = T::lit(cfg.subcarrier_spacing_hz);
    let (tt, nn) = (T::lit(t as f64), T::lit(n as f64));
    let mut acc = czero();
    for l in 0..user.path_count() {
        let phase = -T::TAU() * (df * user.delays_s[l] * nn + user.doppler[l] * tt);
        acc += user.gains[[l, m]] * Cx::from_polar(T::one(), phase);
    }
    acc
}

/// Evaluates every user's channel on the full `T × N` grid for all antennas.
pub fn evaluate_channel<T: Real>(cfg: &FrameConfig, paths: PathParams<T>) -> Result<ChannelRealization<T>> {
    if paths.users.len() != cfg.users {
        return Err(Error::DimensionMismatch(format!(
            "{} users in path set, config has {}",
            paths.users.len(),
            cfg.users
        )));
    }
    if let Some(u) = paths.users.iter().find(|u| u.gains.ncols() != cfg.antennas) {
        return Err(Error::DimensionMismatch(format!(
            "path gains have {} antennas, config has {}",
            u.gains.ncols(),
            cfg.antennas
        )));
    }
    let (n_sym, n_sc, n_ant) = (cfg.symbols, cfg.subcarriers, cfg.antennas);
    let df = T::lit(cfg.subcarrier_spacing_hz);
    let per_user: Vec<Array3<Cx<T>>> = paths
        .users
        .par_iter()
        .map(|user| {
            let mut hk = Array3::from_elem((n_sym, n_sc, n_ant), czero());
            for t in 0..n_sym {
                let tt = T::lit((t + 1) as f64);
                for n in 0..n_sc {
                    let nn = T::lit((n + 1) as f64);
                    let mut cell = hk.slice_mut(s![t, n, ..]);
                    for l in 0..user.path_count() {
                        let phase = -T::TAU() * (df * user.delays_s[l] * nn + user.doppler[l] * tt);
                        let rot = Cx::from_polar(T::one(), phase);
                        for (dst, g) in cell.iter_mut().zip(user.gains.row(l)) {
                            *dst += *g * rot;
                        }
                    }
                }
            }
            hk
        })
        .collect();
    let mut h = Array4::from_elem((cfg.users, n_sym, n_sc, n_ant), czero());
    for (k, hk) in per_user.into_iter().enumerate() {
        h.index_axis_mut(ndarray::Axis(0), k).assign(&hk);
    }
    Ok(ChannelRealization { paths, h })
}

/// Convenience: draw paths and evaluate them.
pub fn realize<T: Real>(cfg: &FrameConfig, profile: &ProfileSpec, seed: u64) -> Result<ChannelRealization<T>> {
    evaluate_channel(cfg, draw_paths(cfg, profile, seed)?)
}

/// `H_{u,v,k}`: the `(NT/(VU)) × M` channel of user `k` over sub-block `b`,
/// rows stacked frequency-fastest.
pub fn subblock_channel<T: Real>(
    cfg: &FrameConfig,
    real: &ChannelRealization<T>,
    k: usize,
    b: SubBlockIndex,
) -> Array2<Cx<T>> {
    let (t0, n0) = b.origin(cfg);
    let (bt, bn) = (cfg.block_symbols(), cfg.block_subcarriers());
    let mut out = Array2::from_elem((bt * bn, cfg.antennas), czero());
    for t in 0..bt {
        for n in 0..bn {
            out.row_mut(t * bn + n)
                .assign(&real.h.slice(s![k, t0 + t, n0 + n, ..]));
        }
    }
    out
}
