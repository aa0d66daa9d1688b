//! Dilated N-d cross-correlation (no kernel flip), zero padding, stride 1.

use ndarray::{Array4, ArrayD, ArrayView4, ArrayView5, IxDyn};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::ConvLayerSpec;

/// 3D convolution over a `(C_in, D0, D1, D2)` input with `(C_out, C_in, k0, k1, k2)` weights.
pub fn conv3d<T: Real>(
    input: ArrayView4<'_, T>,
    weight: ArrayView5<'_, T>,
    bias: &[T],
    dilation: [usize; 3],
    padding: [usize; 3],
) -> Result<Array4<T>> {
    let (c_in, d0, d1, d2) = input.dim();
    let (c_out, w_in, k0, k1, k2) = weight.dim();
    if w_in != c_in {
        return Err(Error::ShapeMismatch {
            name: "conv input channels".into(),
            expected: vec![w_in],
            found: vec![c_in],
        });
    }
    if bias.len() != c_out {
        return Err(Error::ShapeMismatch {
            name: "conv bias".into(),
            expected: vec![c_out],
            found: vec![bias.len()],
        });
    }
    let out_len = |d: usize, k: usize, dil: usize, pad: usize| -> Result<usize> {
        (d + 2 * pad)
            .checked_sub(dil * (k - 1))
            .ok_or_else(|| Error::ShapeMismatch {
                name: "conv spatial extent".into(),
                expected: vec![dil * (k - 1) + 1],
                found: vec![d + 2 * pad],
            })
    };
    let o0 = out_len(d0, k0, dilation[0], padding[0])?;
    let o1 = out_len(d1, k1, dilation[1], padding[1])?;
    let o2 = out_len(d2, k2, dilation[2], padding[2])?;

    let x = input.as_standard_layout();
    let x = x.as_slice().expect("standard layout");
    let w = weight.as_standard_layout();
    let w = w.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); c_out * o0 * o1 * o2];

    // Valid output range along one axis for kernel tap `j`: input index
    // `o + j·dil − pad` must land in `[0, d)`.
    let range = |j: usize, dil: usize, pad: usize, d: usize, o: usize| -> (usize, usize) {
        let shift = j * dil;
        let lo = pad.saturating_sub(shift);
        let hi = (d + pad).saturating_sub(shift).min(o);
        (lo, hi.max(lo))
    };

    for co in 0..c_out {
        let dst_base = co * o0 * o1 * o2;
        out[dst_base..dst_base + o0 * o1 * o2].fill(bias[co]);
        for ci in 0..c_in {
            let src_base = ci * d0 * d1 * d2;
            for j0 in 0..k0 {
                let (a_lo, a_hi) = range(j0, dilation[0], padding[0], d0, o0);
                for j1 in 0..k1 {
                    let (b_lo, b_hi) = range(j1, dilation[1], padding[1], d1, o1);
                    for j2 in 0..k2 {
                        let (c_lo, c_hi) = range(j2, dilation[2], padding[2], d2, o2);
                        if c_lo >= c_hi {
                            continue;
                        }
                        let wv = w[(((co * c_in + ci) * k0 + j0) * k1 + j1) * k2 + j2];
                        if wv == T::zero() {
                            continue;
                        }
                        let run = c_hi - c_lo;
                        let i2 = c_lo + j2 * dilation[2] - padding[2];
                        for a in a_lo..a_hi {
                            let i0 = a + j0 * dilation[0] - padding[0];
                            for b in b_lo..b_hi {
                                let i1 = b + j1 * dilation[1] - padding[1];
                                let dst = dst_base + (a * o1 + b) * o2 + c_lo;
                                let src = src_base + (i0 * d1 + i1) * d2 + i2;
                                for (y, &v) in out[dst..dst + run].iter_mut().zip(&x[src..src + run]) {
                                    *y += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Array4::from_shape_vec((c_out, o0, o1, o2), out).expect("shape matches buffer"))
}

/// Applies `layer` to a `(C_in, spatial…)` tensor of rank `layer.rank + 1`.
pub fn conv_nd<T: Real>(input: &ArrayD<T>, layer: &ConvLayerSpec, weight: &ArrayD<T>, bias: &[T]) -> Result<ArrayD<T>> {
    let want_in = layer.rank + 1;
    if input.ndim() != want_in || input.shape()[0] != layer.in_channels {
        let mut expected = vec![layer.in_channels];
        expected.extend(std::iter::repeat(0).take(layer.rank));
        return Err(Error::ShapeMismatch {
            name: format!("{} input", layer.name),
            expected,
            found: input.shape().to_vec(),
        });
    }
    if weight.shape() != layer.weight_shape().as_slice() {
        return Err(Error::ShapeMismatch {
            name: format!("{}.weight", layer.name),
            expected: layer.weight_shape(),
            found: weight.shape().to_vec(),
        });
    }
    let lift = |v: &[usize], fill: usize| -> [usize; 3] {
        match v.len() {
            3 => [v[0], v[1], v[2]],
            2 => [fill, v[0], v[1]],
            _ => [fill, fill, v[0]],
        }
    };
    let sh = input.shape();
    let spatial = lift(&sh[1..], 1);
    let x = input
        .view()
        .into_shape((sh[0], spatial[0], spatial[1], spatial[2]))
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let kernel = lift(&layer.kernel, 1);
    let w = weight
        .view()
        .into_shape((layer.out_channels, layer.in_channels, kernel[0], kernel[1], kernel[2]))
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let y = conv3d(x, w, bias, lift(&layer.dilation, 1), lift(&layer.padding, 0))?;
    let (c, a, b, d) = y.dim();
    let mut shape = vec![c];
    match layer.rank {
        3 => shape.extend([a, b, d]),
        2 => shape.extend([b, d]),
        _ => shape.push(d),
    }
    Ok(y.into_shape(IxDyn(&shape)).expect("same element count"))
}

/// Elementwise parametric ReLU.
pub fn prelu<T: Real>(x: &mut [T], slope: T) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v *= slope;
        }
    }
}
