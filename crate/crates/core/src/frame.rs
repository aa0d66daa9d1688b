//! OFDM frame geometry: sub-block partition, pilot placement, pilot sequences
//! and the pilot-row selection operator.
//!
//! Indices are 1-based in config files and in [`SubBlockIndex`]; everything
//! returned as a `usize` offset is 0-based. Inside a sub-block the
//! `(T/U)·(N/V)` grid points are stacked frequency-fastest: row
//! `t·(N/V) + n` for local symbol `t` and local subcarrier `n`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ConfigError, Error, Result, Violation};
use crate::scalar::{Cx, Real};

/// Grid, partition, pilot, and user/antenna dimensions of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameConfig {
    /// `N`
    pub subcarriers: usize,
    /// `T`
    pub symbols: usize,
    /// `T_P`
    pub pilot_symbols: usize,
    /// `U`, sub-blocks along time.
    pub time_blocks: usize,
    /// `V`, sub-blocks along frequency.
    pub freq_blocks: usize,
    /// `K`
    pub users: usize,
    /// `M`
    pub antennas: usize,
    pub subcarrier_spacing_hz: f64,
    /// Global 1-based symbol indices carrying pilots, strictly increasing.
    pub pilot_positions: Vec<usize>,
    /// Seed for the pilot sequences.
    pub seed: u64,
}

impl Default for FrameConfig {
    /// 48 subcarriers at 30 kHz, 28 symbols with 8 pilots, 2×2 sub-blocks,
    /// 24 users and 64 antennas.
    fn default() -> Self {
        Self::new(48, 28, 8, 2, 2, 24, 64, 30e3)
    }
}

impl FrameConfig {
    /// Builds a config with evenly spaced pilots (see [`uniform_pilot_positions`]) and seed 1.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        subcarriers: usize,
        symbols: usize,
        pilot_symbols: usize,
        time_blocks: usize,
        freq_blocks: usize,
        users: usize,
        antennas: usize,
        subcarrier_spacing_hz: f64,
    ) -> Self {
        Self {
            subcarriers,
            symbols,
            pilot_symbols,
            time_blocks,
            freq_blocks,
            users,
            antennas,
            subcarrier_spacing_hz,
            pilot_positions: uniform_pilot_positions(symbols, pilot_symbols),
            seed: 1,
        }
    }

    /// Symbols per time sub-block, `T/U`.
    pub fn block_symbols(&self) -> usize {
        self.symbols / self.time_blocks
    }

    /// Subcarriers per frequency sub-block, `N/V`.
    pub fn block_subcarriers(&self) -> usize {
        self.subcarriers / self.freq_blocks
    }

    /// Rows of a full sub-block, `NT/(VU)`.
    pub fn block_len(&self) -> usize {
        self.block_symbols() * self.block_subcarriers()
    }

    /// Pilot symbols per time sub-block, `T_P/U`.
    pub fn block_pilot_symbols(&self) -> usize {
        self.pilot_symbols / self.time_blocks
    }

    /// Pilot observations per sub-block and antenna, `N·T_P/(VU)`.
    pub fn block_pilot_len(&self) -> usize {
        self.block_pilot_symbols() * self.block_subcarriers()
    }

    pub fn block_count(&self) -> usize {
        self.time_blocks * self.freq_blocks
    }

    /// Useful OFDM symbol duration `1/Δf` (cyclic prefix excluded).
    pub fn symbol_duration_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }

    /// Normal cyclic prefix length for this numerology: `144/2048` of the
    /// useful symbol duration (≈2.34 µs at 30 kHz).
    pub fn cyclic_prefix_s(&self) -> f64 {
        self.symbol_duration_s() * 144.0 / 2048.0
    }

    /// All sub-blocks, time-major: `(1,1), (1,2), …, (U,V)`.
    pub fn blocks(&self) -> impl Iterator<Item = SubBlockIndex> + '_ {
        let v_max = self.freq_blocks;
        (1..=self.time_blocks).flat_map(move |u| (1..=v_max).map(move |v| SubBlockIndex { u, v }))
    }

    /// Position of `b` in [`FrameConfig::blocks`] order.
    pub fn block_ordinal(&self, b: SubBlockIndex) -> usize {
        (b.u - 1) * self.freq_blocks + (b.v - 1)
    }

    /// Sub-block containing global 1-based `(symbol, subcarrier)`.
    pub fn block_of(&self, symbol: usize, subcarrier: usize) -> SubBlockIndex {
        SubBlockIndex {
            u: (symbol - 1) / self.block_symbols() + 1,
            v: (subcarrier - 1) / self.block_subcarriers() + 1,
        }
    }

    /// Local 1-based symbol indices of the pilots inside time sub-block `u`.
    pub fn local_pilot_symbols(&self, u: usize) -> Vec<usize> {
        let len = self.block_symbols();
        let start = (u - 1) * len;
        self.pilot_positions
            .iter()
            .filter(|&&p| p > start && p <= start + len)
            .map(|&p| p - start)
            .collect()
    }

    /// Checks every invariant and reports all failures at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut bad: Vec<(Violation, String)> = Vec::new();
        let dims = [
            ("N", self.subcarriers),
            ("T", self.symbols),
            ("T_P", self.pilot_symbols),
            ("U", self.time_blocks),
            ("V", self.freq_blocks),
            ("K", self.users),
            ("M", self.antennas),
        ];
        for (name, d) in dims {
            if d == 0 {
                bad.push((Violation::ZeroDimension, format!("{name} = 0")));
            }
        }
        if !bad.is_empty() {
            return Err(ConfigError { violations: bad });
        }
        if !(self.subcarrier_spacing_hz.is_finite() && self.subcarrier_spacing_hz > 0.0) {
            bad.push((
                Violation::Spacing,
                format!("delta_f_hz = {}", self.subcarrier_spacing_hz),
            ));
        }
        let mut partition_ok = true;
        for (what, num, den) in [
            ("U does not divide T", self.symbols, self.time_blocks),
            ("V does not divide N", self.subcarriers, self.freq_blocks),
            ("U does not divide T_P", self.pilot_symbols, self.time_blocks),
        ] {
            if num % den != 0 {
                partition_ok = false;
                bad.push((Violation::Partition, format!("{what} ({den} ∤ {num})")));
            }
        }
        if self.pilot_symbols > self.symbols {
            bad.push((
                Violation::PilotCount,
                format!("T_P = {} exceeds T = {}", self.pilot_symbols, self.symbols),
            ));
        }
        // Observations are counted with exact rational arithmetic so the gate
        // also fires on configs that fail the partition checks.
        let obs = self.subcarriers * self.pilot_symbols;
        let need = 3 * self.users * self.freq_blocks * self.time_blocks;
        if obs < need {
            bad.push((
                Violation::Solvability,
                format!(
                    "N·T_P/(V·U) = {} < 3K = {}",
                    obs as f64 / (self.freq_blocks * self.time_blocks) as f64,
                    3 * self.users
                ),
            ));
        }
        if self.pilot_positions.len() != self.pilot_symbols {
            bad.push((
                Violation::PilotCount,
                format!(
                    "{} pilot positions listed for T_P = {}",
                    self.pilot_positions.len(),
                    self.pilot_symbols
                ),
            ));
        }
        if self.pilot_positions.windows(2).any(|w| w[0] >= w[1]) {
            bad.push((Violation::PilotOrder, "pilot_symbols not strictly increasing".into()));
        }
        if let Some(&p) = self
            .pilot_positions
            .iter()
            .find(|&&p| p == 0 || p > self.symbols)
        {
            bad.push((Violation::PilotRange, format!("pilot symbol {p} outside [1, {}]", self.symbols)));
        }
        if partition_ok && self.pilot_positions.len() == self.pilot_symbols {
            let want = self.block_pilot_symbols();
            for u in 1..=self.time_blocks {
                let got = self.local_pilot_symbols(u).len();
                if got != want {
                    bad.push((
                        Violation::PilotCount,
                        format!("time sub-block {u} holds {got} pilots, expected {want}"),
                    ));
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { violations: bad })
        }
    }

    /// Parses the flat `key = value` format. `pilot_symbols` and `seed` are optional.
    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_key_values(text)?;
        let get = |key: &str| -> Result<&(usize, String)> {
            map.get(key).ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing key `{key}`"),
            })
        };
        let int = |key: &str| -> Result<usize> {
            let (line, raw) = get(key)?;
            raw.parse().map_err(|_| Error::Parse {
                line: *line,
                msg: format!("`{key}` is not a non-negative integer: {raw}"),
            })
        };
        let mut cfg = FrameConfig::new(
            int("N")?,
            int("T")?,
            int("T_P")?,
            int("U")?,
            int("V")?,
            int("K")?,
            int("M")?,
            {
                let (line, raw) = get("delta_f_hz")?;
                raw.parse().map_err(|_| Error::Parse {
                    line: *line,
                    msg: format!("`delta_f_hz` is not a number: {raw}"),
                })?
            },
        );
        if let Some((line, raw)) = map.get("pilot_symbols") {
            cfg.pilot_positions = raw
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| Error::Parse {
                        line: *line,
                        msg: format!("bad pilot symbol index `{s}`"),
                    })
                })
                .collect::<Result<_>>()?;
        }
        if let Some((line, raw)) = map.get("seed") {
            cfg.seed = raw.parse().map_err(|_| Error::Parse {
                line: *line,
                msg: format!("`seed` is not an unsigned integer: {raw}"),
            })?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("N", self.subcarriers),
            ("T", self.symbols),
            ("T_P", self.pilot_symbols),
            ("U", self.time_blocks),
            ("V", self.freq_blocks),
            ("K", self.users),
            ("M", self.antennas),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "delta_f_hz = {}", self.subcarrier_spacing_hz);
        let pilots: Vec<String> = self.pilot_positions.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(s, "pilot_symbols = {}", pilots.join(","));
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Reads and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Parses `key = value` lines; `#` starts a comment. Keys map to `(line, value)`.
pub(crate) fn parse_key_values(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .or_else(|| line.split_once(':'))
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
        let key = k.trim().to_string();
        if map.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(map)
}

/// Evenly spaced 1-based pilot symbols: `⌊(i + ½)·T/T_P⌋ + 1` for `i < T_P`.
///
/// When `U` divides both `T` and `T_P` every time sub-block receives exactly
/// `T_P/U` pilots.
pub fn uniform_pilot_positions(symbols: usize, pilots: usize) -> Vec<usize> {
    (0..pilots)
        .map(|i| ((2 * i + 1) * symbols) / (2 * pilots) + 1)
        .collect()
}

/// 1-based `(u, v)` sub-block coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubBlockIndex {
    pub u: usize,
    pub v: usize,
}

impl SubBlockIndex {
    pub fn new(u: usize, v: usize) -> Self {
        Self { u, v }
    }

    /// First global 0-based symbol and subcarrier of the block.
    pub fn origin(self, cfg: &FrameConfig) -> (usize, usize) {
        (
            (self.u - 1) * cfg.block_symbols(),
            (self.v - 1) * cfg.block_subcarriers(),
        )
    }

    pub fn in_bounds(self, cfg: &FrameConfig) -> bool {
        (1..=cfg.time_blocks).contains(&self.u) && (1..=cfg.freq_blocks).contains(&self.v)
    }
}

/// Rows of the full sub-block (0-based, length `NT/(VU)`) that carry pilots.
///
/// Ordered by pilot symbol then subcarrier, so gathering with this list is
/// the same as left-multiplying by the 0/1 selection matrix.
pub fn selection_pattern(cfg: &FrameConfig, b: SubBlockIndex) -> Vec<usize> {
    let width = cfg.block_subcarriers();
    cfg.local_pilot_symbols(b.u)
        .into_iter()
        .flat_map(|t| (0..width).map(move |n| (t - 1) * width + n))
        .collect()
}

/// Unit-modulus pilot symbols for every user, pilot symbol, and subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook<T: Real> {
    /// Shape `(K, T_P, N)`.
    pub sequences: Array3<Cx<T>>,
}

impl<T: Real> PilotBook<T> {
    /// Random-phase pilots drawn from `cfg.seed`.
    pub fn generate(cfg: &FrameConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let shape = (cfg.users, cfg.pilot_symbols, cfg.subcarriers);
        let sequences = Array3::from_shape_simple_fn(shape, || {
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            Cx::from_polar(T::one(), T::lit(phase))
        });
        Ok(Self { sequences })
    }

    /// Wraps explicit sequences. Unit modulus is not enforced here.
    pub fn from_sequences(cfg: &FrameConfig, sequences: Array3<Cx<T>>) -> Result<Self> {
        let want = [cfg.users, cfg.pilot_symbols, cfg.subcarriers];
        if sequences.shape() != want {
            return Err(Error::DimensionMismatch(format!(
                "pilot book shape {:?}, expected {:?}",
                sequences.shape(),
                want
            )));
        }
        Ok(Self { sequences })
    }

    pub fn ones(cfg: &FrameConfig) -> Self {
        let shape = (cfg.users, cfg.pilot_symbols, cfg.subcarriers);
        Self {
            sequences: Array3::from_elem(shape, Cx::new(T::one(), T::zero())),
        }
    }

    /// Pilot values of user `k` at the pilot rows of `b`, in [`selection_pattern`] order.
    pub fn block_pilots(&self, cfg: &FrameConfig, k: usize, b: SubBlockIndex) -> Vec<Cx<T>> {
        let per_block = cfg.block_pilot_symbols();
        let (_, n0) = b.origin(cfg);
        let p0 = (b.u - 1) * per_block;
        let mut out = Vec::with_capacity(cfg.block_pilot_len());
        for p in p0..p0 + per_block {
            for n in n0..n0 + cfg.block_subcarriers() {
                out.push(self.sequences[[k, p, n]]);
            }
        }
        out
    }

    /// Mean `|x|²` over the whole book.
    pub fn mean_power(&self) -> T {
        let count = T::lit(self.sequences.len().max(1) as f64);
        self.sequences.iter().map(|x| x.norm_sqr()).sum::<T>() / count
    }
}
