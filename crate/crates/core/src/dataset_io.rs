//! Binary files: training datasets for the network trainer, and the received
//! frames and estimates passed between command-line stages.
//!
//! Every format is little-endian with no padding. Complex values are stored
//! as interleaved `(re, im)` pairs in row-major order.
//!
//! Dataset (`DRCND1`): magic, `u32` N, T, T_P, U, V, K, M, `u32` record
//! count, then per record: input `(T_P, N, M)` and label `(T, N, M)` as
//! `f32` pairs, `f32` SNR in dB, `u32` profile-name length, UTF-8 name,
//! `u64` seed, `u32` user index.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Seek, SeekFrom, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3, Array4, ArrayView3};

use crate::channel::{ChannelRealization, PathParams, UserPaths};
use crate::error::{Error, Result};
use crate::frame::{FrameConfig, SubBlockIndex};
use crate::scalar::{Cx, Real};
use crate::system::{RxFrame, RxSubBlock};

pub const DATASET_MAGIC: &[u8; 6] = b"DRCND1";
pub const RX_MAGIC: &[u8; 6] = b"PCERX1";
pub const ESTIMATE_MAGIC: &[u8; 6] = b"PCEST1";

/// Frame dimensions carried by a dataset header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub subcarriers: usize,
    pub symbols: usize,
    pub pilot_symbols: usize,
    pub time_blocks: usize,
    pub freq_blocks: usize,
    pub users: usize,
    pub antennas: usize,
}

impl DatasetHeader {
    pub fn from_config(cfg: &FrameConfig) -> Self {
        Self {
            subcarriers: cfg.subcarriers,
            symbols: cfg.symbols,
            pilot_symbols: cfg.pilot_symbols,
            time_blocks: cfg.time_blocks,
            freq_blocks: cfg.freq_blocks,
            users: cfg.users,
            antennas: cfg.antennas,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.pilot_symbols, self.subcarriers, self.antennas]
    }

    pub fn label_shape(&self) -> [usize; 3] {
        [self.symbols, self.subcarriers, self.antennas]
    }

    fn fields(&self) -> [usize; 7] {
        [
            self.subcarriers,
            self.symbols,
            self.pilot_symbols,
            self.time_blocks,
            self.freq_blocks,
            self.users,
            self.antennas,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordMeta {
    pub profile: String,
    pub seed: u64,
    pub user: usize,
}

/// One (module-A estimate, true channel) training pair for a single user.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    /// `(T_P, N, M)`.
    pub input: Array3<Cx<f32>>,
    /// `(T, N, M)`.
    pub label: Array3<Cx<f32>>,
    pub snr_db: f32,
    pub meta: RecordMeta,
}

impl DatasetRecord {
    /// Narrows a `(T_P, N, M)` estimate and `(T, N, M)` truth to `f32`.
    pub fn from_tensors<T: Real>(
        input: ArrayView3<'_, Cx<T>>,
        label: ArrayView3<'_, Cx<T>>,
        snr_db: f64,
        meta: RecordMeta,
    ) -> Self {
        let narrow = |z: &Cx<T>| Cx::new(z.re.as_f64() as f32, z.im.as_f64() as f32);
        Self {
            input: input.map(narrow),
            label: label.map(narrow),
            snr_db: snr_db as f32,
            meta,
        }
    }
}

fn check_shape(name: &str, found: &[usize], expected: [usize; 3]) -> Result<()> {
    if found != expected {
        return Err(Error::ShapeMismatch {
            name: name.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

fn truncated(what: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::TruncatedFile(format!("ended inside {what}"))
        } else {
            Error::Io(e)
        }
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} exceeds u32")))
}

fn read_magic(r: &mut impl Read, magic: &[u8; 6]) -> Result<()> {
    let mut buf = [0u8; 6];
    r.read_exact(&mut buf).map_err(truncated("magic"))?;
    if &buf != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&buf)
        )));
    }
    Ok(())
}

fn expect_eof(r: &mut impl Read, what: &str) -> Result<()> {
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::TruncatedFile(format!("data continues past the declared {what}")));
    }
    Ok(())
}

fn read_len(r: &mut impl Read, what: &str) -> Result<usize> {
    Ok(r.read_u32::<LE>().map_err(truncated(what))? as usize)
}

fn write_c32(w: &mut impl Write, data: &Array3<Cx<f32>>) -> Result<()> {
    for z in data.iter() {
        w.write_f32::<LE>(z.re)?;
        w.write_f32::<LE>(z.im)?;
    }
    Ok(())
}

fn read_c32(r: &mut impl Read, shape: [usize; 3], what: &str) -> Result<Array3<Cx<f32>>> {
    let mut raw = vec![0f32; 2 * shape.iter().product::<usize>()];
    r.read_f32_into::<LE>(&mut raw).map_err(truncated(what))?;
    let data = raw.chunks_exact(2).map(|p| Cx::new(p[0], p[1])).collect();
    Ok(Array3::from_shape_vec(shape, data).expect("length matches shape"))
}

fn write_c64<'a>(w: &mut impl Write, data: impl IntoIterator<Item = &'a Cx<f64>>) -> Result<()> {
    for z in data {
        w.write_f64::<LE>(z.re)?;
        w.write_f64::<LE>(z.im)?;
    }
    Ok(())
}

fn read_c64(r: &mut impl Read, len: usize, what: &str) -> Result<Vec<Cx<f64>>> {
    let mut raw = vec![0f64; 2 * len];
    r.read_f64_into::<LE>(&mut raw).map_err(truncated(what))?;
    Ok(raw.chunks_exact(2).map(|p| Cx::new(p[0], p[1])).collect())
}

/// Streaming dataset writer; the record count is patched in on [`DatasetWriter::finish`].
pub struct DatasetWriter<W: Write + Seek> {
    inner: W,
    header: DatasetHeader,
    written: u32,
}

impl DatasetWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: DatasetHeader) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write + Seek> DatasetWriter<W> {
    pub fn new(mut inner: W, header: DatasetHeader) -> Result<Self> {
        inner.write_all(DATASET_MAGIC)?;
        for (v, name) in header.fields().into_iter().zip(["N", "T", "T_P", "U", "V", "K", "M"]) {
            inner.write_u32::<LE>(to_u32(v, name)?)?;
        }
        inner.write_u32::<LE>(0)?;
        Ok(Self {
            inner,
            header,
            written: 0,
        })
    }

    pub fn write(&mut self, rec: &DatasetRecord) -> Result<()> {
        check_shape("input", rec.input.shape(), self.header.input_shape())?;
        check_shape("label", rec.label.shape(), self.header.label_shape())?;
        let w = &mut self.inner;
        write_c32(w, &rec.input)?;
        write_c32(w, &rec.label)?;
        w.write_f32::<LE>(rec.snr_db)?;
        let name = rec.meta.profile.as_bytes();
        w.write_u32::<LE>(to_u32(name.len(), "profile name length")?)?;
        w.write_all(name)?;
        w.write_u64::<LE>(rec.meta.seed)?;
        w.write_u32::<LE>(to_u32(rec.meta.user, "user")?)?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written as usize
    }

    /// Writes the final record count and returns the underlying writer.
    pub fn finish(mut self) -> Result<W> {
        if self.written == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let end = self.inner.stream_position()?;
        self.inner.seek(SeekFrom::Start((DATASET_MAGIC.len() + 7 * 4) as u64))?;
        self.inner.write_u32::<LE>(self.written)?;
        self.inner.seek(SeekFrom::Start(end))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streaming dataset reader yielding one record at a time.
pub struct DatasetReader<R: Read> {
    inner: R,
    header: DatasetHeader,
    count: usize,
    read: usize,
    done: bool,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        read_magic(&mut inner, DATASET_MAGIC)?;
        let mut f = [0usize; 7];
        for v in f.iter_mut() {
            *v = read_len(&mut inner, "header")?;
        }
        let count = read_len(&mut inner, "header")?;
        let header = DatasetHeader {
            subcarriers: f[0],
            symbols: f[1],
            pilot_symbols: f[2],
            time_blocks: f[3],
            freq_blocks: f[4],
            users: f[5],
            antennas: f[6],
        };
        Ok(Self {
            inner,
            header,
            count,
            read: 0,
            done: false,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    /// Record count declared in the header.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn read_record(&mut self) -> Result<DatasetRecord> {
        let r = &mut self.inner;
        let input = read_c32(r, self.header.input_shape(), "record input")?;
        let label = read_c32(r, self.header.label_shape(), "record label")?;
        let snr_db = r.read_f32::<LE>().map_err(truncated("record snr"))?;
        let len = read_len(r, "record meta")?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated("record meta"))?;
        let profile = String::from_utf8(name).map_err(|_| Error::Format("profile name is not UTF-8".into()))?;
        let seed = r.read_u64::<LE>().map_err(truncated("record meta"))?;
        let user = read_len(r, "record meta")?;
        Ok(DatasetRecord {
            input,
            label,
            snr_db,
            meta: RecordMeta { profile, seed, user },
        })
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<DatasetRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.read == self.count {
            self.done = true;
            return expect_eof(&mut self.inner, "record count").err().map(Err);
        }
        let rec = self.read_record();
        self.read += 1;
        if rec.is_err() {
            self.done = true;
        }
        Some(rec)
    }
}

pub fn write_dataset(path: impl AsRef<Path>, header: DatasetHeader, records: &[DatasetRecord]) -> Result<()> {
    let mut w = DatasetWriter::create(path, header)?;
    for rec in records {
        w.write(rec)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<DatasetRecord>)> {
    let reader = DatasetReader::open(path)?;
    let header = *reader.header();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

fn write_config(w: &mut impl Write, cfg: &FrameConfig) -> Result<()> {
    for (v, name) in DatasetHeader::from_config(cfg)
        .fields()
        .into_iter()
        .zip(["N", "T", "T_P", "U", "V", "K", "M"])
    {
        w.write_u32::<LE>(to_u32(v, name)?)?;
    }
    w.write_f64::<LE>(cfg.subcarrier_spacing_hz)?;
    w.write_u64::<LE>(cfg.seed)?;
    for &p in &cfg.pilot_positions {
        w.write_u32::<LE>(to_u32(p, "pilot position")?)?;
    }
    Ok(())
}

fn read_config(r: &mut impl Read) -> Result<FrameConfig> {
    let mut f = [0usize; 7];
    for v in f.iter_mut() {
        *v = read_len(r, "config")?;
    }
    let spacing = r.read_f64::<LE>().map_err(truncated("config"))?;
    let seed = r.read_u64::<LE>().map_err(truncated("config"))?;
    let pilot_positions = (0..f[2]).map(|_| read_len(r, "pilot positions")).collect::<Result<Vec<_>>>()?;
    let cfg = FrameConfig {
        subcarriers: f[0],
        symbols: f[1],
        pilot_symbols: f[2],
        time_blocks: f[3],
        freq_blocks: f[4],
        users: f[5],
        antennas: f[6],
        subcarrier_spacing_hz: spacing,
        pilot_positions,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Writes received frames (pilot observations plus the generating channel).
pub fn write_rx_frames(path: impl AsRef<Path>, cfg: &FrameConfig, frames: &[RxFrame<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RX_MAGIC)?;
    write_config(&mut w, cfg)?;
    w.write_u32::<LE>(to_u32(frames.len(), "frame count")?)?;
    let rows = cfg.block_pilot_len();
    for frame in frames {
        if frame.blocks.len() != cfg.block_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} sub-blocks in frame, expected {}",
                frame.blocks.len(),
                cfg.block_count()
            )));
        }
        w.write_f64::<LE>(frame.snr_db())?;
        w.write_f64::<LE>(frame.noise_var())?;
        for (blk, expected) in frame.blocks.iter().zip(cfg.blocks()) {
            if blk.block != expected {
                return Err(Error::MissingBlock {
                    u: expected.u,
                    v: expected.v,
                });
            }
            if blk.y.dim() != (rows, cfg.antennas) {
                return Err(Error::ShapeMismatch {
                    name: "rx block".into(),
                    expected: vec![rows, cfg.antennas],
                    found: blk.y.shape().to_vec(),
                });
            }
            write_c64(&mut w, blk.y.iter())?;
        }
        check_shape(
            "channel",
            &frame.truth.h.shape()[1..],
            [cfg.symbols, cfg.subcarriers, cfg.antennas],
        )?;
        if frame.truth.h.shape()[0] != cfg.users || frame.truth.paths.users.len() != cfg.users {
            return Err(Error::DimensionMismatch(format!("channel does not hold {} users", cfg.users)));
        }
        for user in &frame.truth.paths.users {
            let l = user.path_count();
            w.write_u32::<LE>(to_u32(l, "path count")?)?;
            write_c64(&mut w, user.gains.iter())?;
            for i in 0..l {
                w.write_f64::<LE>(user.delays_s[i])?;
                w.write_f64::<LE>(user.doppler[i])?;
            }
        }
        write_c64(&mut w, frame.truth.h.iter())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rx_frames(path: impl AsRef<Path>) -> Result<(FrameConfig, Vec<RxFrame<f64>>)> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, RX_MAGIC)?;
    let cfg = read_config(&mut r)?;
    let count = read_len(&mut r, "frame count")?;
    let rows = cfg.block_pilot_len();
    let blocks: Vec<SubBlockIndex> = cfg.blocks().collect();
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let snr_db = r.read_f64::<LE>().map_err(truncated("frame"))?;
        let noise_var = r.read_f64::<LE>().map_err(truncated("frame"))?;
        let rx_blocks = blocks
            .iter()
            .map(|&b| {
                let y = read_c64(&mut r, rows * cfg.antennas, "rx block")?;
                Ok(RxSubBlock {
                    block: b,
                    y: Array2::from_shape_vec((rows, cfg.antennas), y).expect("length matches shape"),
                    snr_db,
                    noise_var,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let users = (0..cfg.users)
            .map(|_| {
                let l = read_len(&mut r, "paths")?;
                let gains = read_c64(&mut r, l * cfg.antennas, "paths")?;
                let mut delays_s = Vec::with_capacity(l);
                let mut doppler = Vec::with_capacity(l);
                for _ in 0..l {
                    delays_s.push(r.read_f64::<LE>().map_err(truncated("paths"))?);
                    doppler.push(r.read_f64::<LE>().map_err(truncated("paths"))?);
                }
                Ok(UserPaths {
                    gains: Array2::from_shape_vec((l, cfg.antennas), gains).expect("length matches shape"),
                    delays_s,
                    doppler,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let shape = (cfg.users, cfg.symbols, cfg.subcarriers, cfg.antennas);
        let h = read_c64(&mut r, shape.0 * shape.1 * shape.2 * shape.3, "channel")?;
        frames.push(RxFrame {
            blocks: rx_blocks,
            truth: ChannelRealization {
                paths: PathParams { users },
                h: Array4::from_shape_vec(shape, h).expect("length matches shape"),
            },
        });
    }
    expect_eof(&mut r, "frame count")?;
    Ok((cfg, frames))
}

/// Per-frame, per-user channel estimates with a common `(S, N, M)` shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet {
    pub frames: Vec<Vec<Array3<Cx<f64>>>>,
}

impl EstimateSet {
    /// `(users, S, N, M)` of the first estimate, or zeros when empty.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        match self.frames.first() {
            Some(f) if !f.is_empty() => {
                let (s, n, m) = f[0].dim();
                (f.len(), s, n, m)
            }
            _ => (0, 0, 0, 0),
        }
    }
}

pub fn write_estimates(path: impl AsRef<Path>, set: &EstimateSet) -> Result<()> {
    let (k, s, n, m) = set.dims();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ESTIMATE_MAGIC)?;
    for (v, name) in [(k, "users"), (s, "symbols"), (n, "subcarriers"), (m, "antennas"), (set.frames.len(), "frames")] {
        w.write_u32::<LE>(to_u32(v, name)?)?;
    }
    for frame in &set.frames {
        if frame.len() != k {
            return Err(Error::DimensionMismatch(format!("{} users in frame, expected {k}", frame.len())));
        }
        for est in frame {
            check_shape("estimate", est.shape(), [s, n, m])?;
            write_c64(&mut w, est.iter())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimates(path: impl AsRef<Path>) -> Result<EstimateSet> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, ESTIMATE_MAGIC)?;
    let mut d = [0usize; 5];
    for v in d.iter_mut() {
        *v = read_len(&mut r, "header")?;
    }
    let [k, s, n, m, count] = d;
    let frames = (0..count)
        .map(|_| {
            (0..k)
                .map(|_| {
                    let data = read_c64(&mut r, s * n * m, "estimate")?;
                    Ok(Array3::from_shape_vec((s, n, m), data).expect("length matches shape"))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    expect_eof(&mut r, "frame count")?;
    Ok(EstimateSet { frames })
}
