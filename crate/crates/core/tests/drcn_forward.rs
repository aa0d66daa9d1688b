mod common;

use ndarray::{Array3, ArrayD, IxDyn};
use num_complex::Complex64;
use planar_ce::drcn::{conv_nd, prelu, ConvLayerSpec, Network, NetworkSpec, WeightBundle};
use planar_ce::{Error, Network64};
use rand::Rng;

use common::*;

fn random_input(seed: u64, shape: (usize, usize, usize)) -> Array3<Complex64> {
    let mut r = rng(seed);
    Array3::from_shape_simple_fn(shape, || cnormal(&mut r))
}

#[test]
fn unit_kernel_is_identity() {
    let layer = ConvLayerSpec::same("id", 1, 1, &[1, 1, 1], &[1, 1, 1], false);
    let x = random_tensor(&mut rng(1), &[1, 3, 4, 5]);
    let w = ArrayD::from_elem(IxDyn(&[1, 1, 1, 1, 1]), 1.0);
    assert_eq!(conv_nd(&x, &layer, &w, &[0.0]).unwrap(), x);
}

#[test]
fn naive_oracle_on_reference_shape() {
    let mut r = rng(2);
    let layer = ConvLayerSpec::same("ref", 2, 3, &[3, 3, 3], &[1, 2, 2], false);
    let x = random_tensor(&mut r, &[2, 5, 6, 4]);
    let w = random_tensor(&mut r, &layer.weight_shape());
    let bias = [0.1, -0.2, 0.3];
    let y = conv_nd(&x, &layer, &w, &bias).unwrap();
    let oracle = naive_conv3(
        &x.clone().into_dimensionality().unwrap(),
        &w.clone().into_dimensionality().unwrap(),
        &bias,
        [1, 2, 2],
        [1, 2, 2],
    );
    assert_eq!(y.shape(), &[3, 5, 6, 4]);
    assert!(max_relative_error(&y, &oracle.into_dyn()) <= 1e-5);
}

#[test]
fn every_layer_preserves_spatial_size() {
    let spec = NetworkSpec::new(14, 4);
    let mut r = rng(3);
    for layer in &spec.denoise {
        let shape = [layer.in_channels, 4, r.gen_range(5..12), r.gen_range(3..9)];
        let x = random_tensor(&mut r, &shape);
        let w = random_tensor(&mut r, &layer.weight_shape());
        let y = conv_nd(&x, layer, &w, &vec![0.0; layer.out_channels]).unwrap();
        assert_eq!(&y.shape()[1..], &shape[1..], "{}", layer.name);
    }
}

#[test]
fn channel_mismatch_is_rejected() {
    let layer = ConvLayerSpec::same("l", 2, 1, &[3, 3], &[1, 1], false);
    let x = random_tensor(&mut rng(4), &[3, 4, 4]);
    let w = ArrayD::zeros(IxDyn(&layer.weight_shape()));
    assert!(matches!(conv_nd(&x, &layer, &w, &[0.0]), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn prelu_examples() {
    let mut relu = [-1.0, 2.0];
    prelu(&mut relu, 0.0);
    assert_eq!(relu, [0.0, 2.0]);
    let mut same = [-1.5, 2.0];
    prelu(&mut same, 1.0);
    assert_eq!(same, [-1.5, 2.0]);
    let mut leaky = [-4.0, 4.0];
    prelu(&mut leaky, 0.25);
    assert_eq!(leaky, [-1.0, 4.0]);
}

#[test]
fn zero_network_is_residual_identity_then_zero() {
    let spec = NetworkSpec::new(14, 4);
    let net = Network64::new(&WeightBundle::zeros(&spec), &spec).unwrap();
    let x = random_input(5, (4, 12, 3));
    let re = x.mapv(|z| z.re);
    assert_eq!(net.denoise_real(re.view()).unwrap(), re);
    let y = net.forward(x.view()).unwrap();
    assert_eq!(y.dim(), (14, 12, 3));
    assert!(y.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
}

#[test]
fn paper_shape_maps_eight_pilots_to_twenty_eight_symbols() {
    let spec = NetworkSpec::new(28, 8);
    let net = Network64::new(&WeightBundle::random(&spec, 6, 0.05), &spec).unwrap();
    let y = net.forward(random_input(6, (8, 48, 64)).view()).unwrap();
    assert_eq!(y.dim(), (28, 48, 64));
    assert!(y.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
}

#[test]
fn unit_slopes_make_the_network_affine() {
    let spec = NetworkSpec::new(14, 4);
    let mut bundle = WeightBundle::random(&spec, 7, 0.1);
    for layer in &spec.denoise {
        bundle.get_mut(&format!("{}.prelu", layer.name)).unwrap().data[0] = 1.0;
    }
    let net = Network64::new(&bundle, &spec).unwrap();
    let x = random_input(8, (4, 10, 3));
    let zero = Array3::from_elem(x.raw_dim(), Complex64::new(0.0, 0.0));
    let alpha = 2.5;
    let f0 = net.forward(zero.view()).unwrap();
    let fx = net.forward(x.view()).unwrap();
    let fax = net.forward(x.mapv(|z| z * alpha).view()).unwrap();
    let lhs = &fax - &f0;
    let rhs = (&fx - &f0).mapv(|z| z * alpha);
    let scale = rhs.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let err = lhs.iter().zip(rhs.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
    assert!(err <= 1e-6 * scale, "{err} vs {scale}");
}

#[test]
fn forward_is_deterministic() {
    let spec = NetworkSpec::new(14, 4);
    let net = Network::<f32>::new(&WeightBundle::random(&spec, 9, 0.1), &spec).unwrap();
    let x = random_input(10, (4, 8, 2)).mapv(|z| num_complex::Complex32::new(z.re as f32, z.im as f32));
    let a = net.forward(x.view()).unwrap();
    let b = net.forward(x.view()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn wrong_pilot_count_input_is_rejected() {
    let spec = NetworkSpec::new(14, 4);
    let net = Network64::new(&WeightBundle::zeros(&spec), &spec).unwrap();
    let x = random_input(11, (3, 8, 2));
    assert!(matches!(net.forward(x.view()), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn weights_saved_for_eight_pilots_do_not_load_for_four() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    WeightBundle::random(&NetworkSpec::new(28, 8), 12, 0.1).save(&path).unwrap();
    match WeightBundle::load_for(&path, &NetworkSpec::new(28, 4)) {
        Err(Error::ShapeMismatch { name, .. }) => assert_eq!(name, "interp.weight"),
        other => panic!("expected ShapeMismatch, got {other:?}"),
    }
}
