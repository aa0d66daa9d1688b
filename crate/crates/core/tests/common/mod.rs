//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, Array4, ArrayD, Dimension, IxDyn};
use num_complex::Complex64;
use planar_ce::FrameConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cnormal(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<Complex64> {
    Array2::from_shape_simple_fn((rows, cols), || cnormal(rng))
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-1.0..1.0))
}

/// Valid config with random block sizes and random pilot symbols per time block.
pub fn random_config(rng: &mut ChaCha8Rng) -> FrameConfig {
    let u = rng.gen_range(1..=3);
    let v = rng.gen_range(1..=3);
    let block_t = rng.gen_range(2..=6);
    let block_n = rng.gen_range(2..=6);
    let pilots_per_block = rng.gen_range(1..=block_t);
    let mut positions = Vec::new();
    for b in 0..u {
        let mut local: Vec<usize> = (1..=block_t).collect();
        while local.len() > pilots_per_block {
            let i = rng.gen_range(0..local.len());
            local.remove(i);
        }
        positions.extend(local.into_iter().map(|p| b * block_t + p));
    }
    let mut cfg = FrameConfig::new(v * block_n, u * block_t, u * pilots_per_block, u, v, 1, 1, 30e3);
    cfg.pilot_positions = positions;
    cfg
}

/// `S_{u,v}` from its entry rule: entry `((t−1)·N/V + n, (i_t−1)·N/V + n)` is one,
/// with `i_t` the local position of the `t`-th pilot symbol of time block `u`.
pub fn selection_matrix(cfg: &FrameConfig, u: usize) -> Array2<f64> {
    let width = cfg.subcarriers / cfg.freq_blocks;
    let block_t = cfg.symbols / cfg.time_blocks;
    let start = (u - 1) * block_t;
    let local: Vec<usize> = cfg
        .pilot_positions
        .iter()
        .filter(|&&p| p > start && p <= start + block_t)
        .map(|&p| p - start)
        .collect();
    let mut s = Array2::zeros((local.len() * width, block_t * width));
    for (t, &i_t) in local.iter().enumerate() {
        for n in 0..width {
            s[[t * width + n, (i_t - 1) * width + n]] = 1.0;
        }
    }
    s
}

/// Direct nested-loop dilated cross-correlation of a `(C_in, D0, D1, D2)` tensor.
pub fn naive_conv3(
    x: &Array4<f64>,
    w: &ndarray::Array5<f64>,
    bias: &[f64],
    dilation: [usize; 3],
    padding: [usize; 3],
) -> Array4<f64> {
    let (cin, d0, d1, d2) = x.dim();
    let (cout, _, k0, k1, k2) = w.dim();
    let mut y = Array4::zeros((cout, d0, d1, d2));
    for o in 0..cout {
        for i0 in 0..d0 {
            for i1 in 0..d1 {
                for i2 in 0..d2 {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        for a in 0..k0 {
                            for b in 0..k1 {
                                for e in 0..k2 {
                                    let p0 = (i0 + a * dilation[0]) as isize - padding[0] as isize;
                                    let p1 = (i1 + b * dilation[1]) as isize - padding[1] as isize;
                                    let p2 = (i2 + e * dilation[2]) as isize - padding[2] as isize;
                                    if p0 < 0 || p1 < 0 || p2 < 0 {
                                        continue;
                                    }
                                    let (p0, p1, p2) = (p0 as usize, p1 as usize, p2 as usize);
                                    if p0 >= d0 || p1 >= d1 || p2 >= d2 {
                                        continue;
                                    }
                                    acc += w[[o, c, a, b, e]] * x[[c, p0, p1, p2]];
                                }
                            }
                        }
                    }
                    y[[o, i0, i1, i2]] = acc;
                }
            }
        }
    }
    y
}

/// Direct nested-loop dilated cross-correlation of a `(C_in, D0, D1)` tensor.
pub fn naive_conv2(x: &Array3<f64>, w: &Array4<f64>, bias: &[f64], dilation: [usize; 2], padding: [usize; 2]) -> Array3<f64> {
    let (cin, d0, d1) = x.dim();
    let (cout, _, k0, k1) = w.dim();
    let mut y = Array3::zeros((cout, d0, d1));
    for o in 0..cout {
        for i0 in 0..d0 {
            for i1 in 0..d1 {
                let mut acc = bias[o];
                for c in 0..cin {
                    for a in 0..k0 {
                        for b in 0..k1 {
                            let p0 = (i0 + a * dilation[0]) as isize - padding[0] as isize;
                            let p1 = (i1 + b * dilation[1]) as isize - padding[1] as isize;
                            if p0 < 0 || p1 < 0 || p0 as usize >= d0 || p1 as usize >= d1 {
                                continue;
                            }
                            acc += w[[o, c, a, b]] * x[[c, p0 as usize, p1 as usize]];
                        }
                    }
                }
                y[[o, i0, i1]] = acc;
            }
        }
    }
    y
}

/// Kernel with `d_i − 1` zeros inserted between taps along each spatial axis.
pub fn inflate_kernel(w: &ArrayD<f64>, dilation: &[usize]) -> ArrayD<f64> {
    let shape = w.shape();
    let mut out_shape = shape[..2].to_vec();
    for (k, d) in shape[2..].iter().zip(dilation) {
        out_shape.push(d * (k - 1) + 1);
    }
    let mut out = ArrayD::zeros(IxDyn(&out_shape));
    for (idx, &v) in w.indexed_iter() {
        let mut target = idx.slice().to_vec();
        for (axis, d) in dilation.iter().enumerate() {
            target[axis + 2] *= d;
        }
        out[IxDyn(&target)] = v;
    }
    out
}

pub fn max_relative_error(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn to_dmatrix(a: &Array2<Complex64>) -> DMatrix<Complex64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Joint LMMSE of `θ` in `Y = Aθ + Z` with `θ` columns `CN(0, diag(prior))`
/// and white noise `σ²`, in information form:
/// `θ̂ = (AᴴA/σ² + diag(prior)⁻¹)⁻¹ · AᴴY/σ²`.
pub fn joint_lmmse_information_form(
    a: &Array2<Complex64>,
    y: &Array2<Complex64>,
    prior: &[f64],
    sigma2: f64,
) -> DMatrix<Complex64> {
    let a = to_dmatrix(a);
    let y = to_dmatrix(y);
    let inv_s = Complex64::new(1.0 / sigma2, 0.0);
    let mut precision = a.adjoint() * &a * inv_s;
    for (i, v) in prior.iter().enumerate() {
        precision[(i, i)] += Complex64::new(1.0 / v, 0.0);
    }
    let rhs = a.adjoint() * y * inv_s;
    precision.lu().solve(&rhs).expect("posterior precision is invertible")
}

/// Random block-planar channel tensor `(K, T, N, M)`: inside each sub-block
/// every user/antenna column is exactly `c·e1 + d·e2 + q`.
pub fn planar_channel(cfg: &FrameConfig, rng: &mut ChaCha8Rng) -> ndarray::Array4<Complex64> {
    let (bt, bn) = (cfg.symbols / cfg.time_blocks, cfg.subcarriers / cfg.freq_blocks);
    let mut h = ndarray::Array4::from_elem((cfg.users, cfg.symbols, cfg.subcarriers, cfg.antennas), Complex64::new(0.0, 0.0));
    for u in 0..cfg.time_blocks {
        for v in 0..cfg.freq_blocks {
            for k in 0..cfg.users {
                for m in 0..cfg.antennas {
                    let (c, d, q) = (cnormal(rng) * 0.1, cnormal(rng) * 0.1, cnormal(rng));
                    for t in 1..=bt {
                        for n in 1..=bn {
                            let e1 = t as f64 - bt as f64 / 2.0;
                            let e2 = n as f64 - bn as f64 / 2.0;
                            h[[k, u * bt + t - 1, v * bn + n - 1, m]] = c * e1 + d * e2 + q;
                        }
                    }
                }
            }
        }
    }
    h
}
