//! Dilated residual 3D convolutional refinement network.
//!
//! A `(T_P, N, M)` pilot-symbol estimate passes through seven dilated 3D
//! convolutions with PReLU activations, a global skip adds the input back,
//! and a final dilated 2D convolution treats the `T_P` pilot symbols as
//! channels over the `(N, M)` plane and emits `T` output channels, one per
//! OFDM symbol. Real and imaginary parts run through the same real-valued
//! network independently.

pub mod conv;
mod weights;

pub use conv::{conv3d, conv_nd, prelu};
pub use weights::{NamedTensor, WeightBundle, WEIGHT_MAGIC};

use ndarray::{Array3, Array4, Array5, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};

/// One convolution layer; padding keeps every spatial extent unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub name: String,
    /// 2 or 3 spatial axes.
    pub rank: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<usize>,
    pub dilation: Vec<usize>,
    pub padding: Vec<usize>,
    pub has_prelu: bool,
}

impl ConvLayerSpec {
    /// Odd kernels only; padding is `dilation·(kernel − 1)/2` per axis.
    pub fn same(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: &[usize],
        dilation: &[usize],
        has_prelu: bool,
    ) -> Self {
        assert_eq!(kernel.len(), dilation.len(), "kernel and dilation rank differ");
        assert!(kernel.iter().all(|k| k % 2 == 1), "kernels must be odd");
        Self {
            name: name.into(),
            rank: kernel.len(),
            in_channels,
            out_channels,
            kernel: kernel.to_vec(),
            dilation: dilation.to_vec(),
            padding: kernel
                .iter()
                .zip(dilation)
                .map(|(k, d)| d * (k - 1) / 2)
                .collect(),
            has_prelu,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend(&self.kernel);
        s
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Real multiplications per output spatial position.
    pub fn multiplications_per_position(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel_volume()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.out_channels + usize::from(self.has_prelu)
    }
}

/// Layer stack for a frame with `symbols` OFDM symbols and `pilot_symbols` pilots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    /// The seven denoising layers.
    pub denoise: Vec<ConvLayerSpec>,
    /// Final pilot-to-frame interpolation layer.
    pub interp: ConvLayerSpec,
    /// Global skip around `denoise`.
    pub residual: bool,
    pub symbols: usize,
    pub pilot_symbols: usize,
}

/// Output channels of the seven denoising layers.
pub const DENOISE_CHANNELS: [usize; 7] = [1, 1, 1, 5, 5, 5, 1];
pub const DENOISE_DILATION: [usize; 3] = [1, 4, 4];
pub const INTERP_KERNEL: [usize; 2] = [5, 3];
pub const INTERP_DILATION: [usize; 2] = [4, 4];

impl NetworkSpec {
    pub fn new(symbols: usize, pilot_symbols: usize) -> Self {
        let mut in_ch = 1;
        let denoise = DENOISE_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &out_ch)| {
                let kernel: &[usize] = if i < 4 { &[7, 7, 5] } else { &[5, 5, 3] };
                let layer = ConvLayerSpec::same(
                    format!("drcdm.{}", i + 1),
                    in_ch,
                    out_ch,
                    kernel,
                    &DENOISE_DILATION,
                    true,
                );
                in_ch = out_ch;
                layer
            })
            .collect();
        Self {
            denoise,
            interp: ConvLayerSpec::same("interp", pilot_symbols, symbols, &INTERP_KERNEL, &INTERP_DILATION, false),
            residual: true,
            symbols,
            pilot_symbols,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayerSpec> {
        self.denoise.iter().chain(std::iter::once(&self.interp))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(ConvLayerSpec::parameter_count).sum()
    }

    /// Complex multiplications to refine one user's `(T_P, N, M)` tensor:
    /// two real passes, four real multiplications per complex one.
    pub fn complex_multiplications(&self, subcarriers: usize, antennas: usize) -> u128 {
        let positions = (self.pilot_symbols * subcarriers * antennas) as u128;
        let denoise: u128 = self
            .denoise
            .iter()
            .map(|l| l.multiplications_per_position() as u128)
            .sum::<u128>()
            * positions;
        // The interp layer produces T channels on N·M positions from T_P inputs.
        let interp = (self.interp.multiplications_per_position() * subcarriers * antennas) as u128;
        2 * (denoise + interp) / 4
    }

    /// Every tensor a matching [`WeightBundle`] must hold, in file order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for l in self.layers() {
            out.push((format!("{}.weight", l.name), l.weight_shape()));
            out.push((format!("{}.bias", l.name), vec![l.out_channels]));
            if l.has_prelu {
                out.push((format!("{}.prelu", l.name), vec![1]));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct DenoiseLayer<T: Real> {
    spec: ConvLayerSpec,
    weight: Array5<T>,
    bias: Vec<T>,
    slope: T,
}

/// Validated weights converted to the working scalar.
#[derive(Debug, Clone)]
pub struct Network<T: Real> {
    spec: NetworkSpec,
    denoise: Vec<DenoiseLayer<T>>,
    interp_weight: Array4<T>,
    interp_bias: Vec<T>,
}

impl<T: Real> Network<T> {
    pub fn new(bundle: &WeightBundle, spec: &NetworkSpec) -> Result<Self> {
        bundle.validate(spec)?;
        let tensor = |name: &str| -> Vec<T> {
            bundle
                .get(name)
                .expect("validated")
                .data
                .iter()
                .map(|&v| T::lit(v as f64))
                .collect()
        };
        let denoise = spec
            .denoise
            .iter()
            .map(|l| {
                let ws = l.weight_shape();
                let weight = Array5::from_shape_vec(
                    (ws[0], ws[1], ws[2], ws[3], ws[4]),
                    tensor(&format!("{}.weight", l.name)),
                )
                .map_err(|e| Error::WeightMismatch(e.to_string()))?;
                Ok(DenoiseLayer {
                    spec: l.clone(),
                    weight,
                    bias: tensor(&format!("{}.bias", l.name)),
                    slope: tensor(&format!("{}.prelu", l.name))[0],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ws = spec.interp.weight_shape();
        let interp_weight = Array4::from_shape_vec((ws[0], ws[1], ws[2], ws[3]), tensor("interp.weight"))
            .map_err(|e| Error::WeightMismatch(e.to_string()))?;
        Ok(Self {
            spec: spec.clone(),
            denoise,
            interp_weight,
            interp_bias: tensor("interp.bias"),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Output of the residual denoising stack for one real `(T_P, N, M)` tensor.
    pub fn denoise_real(&self, x: ArrayView3<'_, T>) -> Result<Array3<T>> {
        let (tp, n, m) = x.dim();
        let mut h: Array4<T> = x.to_owned().insert_axis(Axis(0));
        for layer in &self.denoise {
            let l = &layer.spec;
            let dil = [l.dilation[0], l.dilation[1], l.dilation[2]];
            let pad = [l.padding[0], l.padding[1], l.padding[2]];
            h = conv3d(h.view(), layer.weight.view(), &layer.bias, dil, pad)?;
            if l.has_prelu {
                prelu(h.as_slice_mut().expect("fresh array"), layer.slope);
            }
        }
        let mut out = h.index_axis_move(Axis(0), 0);
        debug_assert_eq!(out.dim(), (tp, n, m));
        if self.spec.residual {
            out += &x;
        }
        Ok(out)
    }

    /// Real forward pass `(T_P, N, M) → (T, N, M)`.
    pub fn forward_real(&self, x: ArrayView3<'_, T>) -> Result<Array3<T>> {
        let (tp, n, m) = x.dim();
        if tp != self.spec.pilot_symbols {
            return Err(Error::ShapeMismatch {
                name: "network input".into(),
                expected: vec![self.spec.pilot_symbols, n, m],
                found: vec![tp, n, m],
            });
        }
        let denoised = self.denoise_real(x)?;
        // (T_P, N, M) is read as T_P channels over an N × M plane.
        let lifted = denoised.insert_axis(Axis(1));
        let w = self.interp_weight.view().insert_axis(Axis(2));
        let l = &self.spec.interp;
        let y = conv3d(
            lifted.view(),
            w,
            &self.interp_bias,
            [1, l.dilation[0], l.dilation[1]],
            [0, l.padding[0], l.padding[1]],
        )?;
        Ok(y.index_axis_move(Axis(1), 0))
    }

    /// Complex forward pass: real and imaginary parts share the weights.
    pub fn forward(&self, input: ArrayView3<'_, Cx<T>>) -> Result<Array3<Cx<T>>> {
        let re = self.forward_real(input.mapv(|z| z.re).view())?;
        let im = self.forward_real(input.mapv(|z| z.im).view())?;
        Ok(ndarray::Zip::from(&re).and(&im).map_collect(|&a, &b| Cx::new(a, b)))
    }
}
