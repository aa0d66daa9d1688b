mod common;

use nalgebra::DMatrix;
use ndarray::{s, Array3};
use num_complex::Complex64;
use planar_ce::baselines::interp_time_linear;
use planar_ce::bpcm::{build_regressors, covariance, lmmse_posteriors, PriorSpec, PriorTable};
use planar_ce::channel::{ChannelRealization, PathParams};
use planar_ce::evaluation::nmse;
use planar_ce::frame::{FrameConfig, PilotBook, SubBlockIndex};
use planar_ce::system::synthesize_rx;
use planar_ce::BpcmEstimator;
use proptest::prelude::*;

use common::*;

fn small_config(users: usize, antennas: usize, seed: u64) -> FrameConfig {
    let mut cfg = FrameConfig::new(12, 8, 4, 2, 2, users, antennas, 30e3);
    cfg.seed = seed;
    cfg
}

fn max_norm(a: impl Iterator<Item = Complex64>) -> f64 {
    a.fold(0.0, |m, z| m.max(z.norm()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nmse_is_scale_invariant(seed in any::<u64>(), exponent in -20i32..20, alpha in 0.01f64..100.0) {
        let mut r = rng(seed);
        let h = random_matrix(&mut r, 6, 5);
        let e = random_matrix(&mut r, 6, 5);
        let base = nmse(e.view(), h.view()).unwrap().linear();
        let pow2 = 2f64.powi(exponent);
        let exact = nmse(e.mapv(|z| z * pow2).view(), h.mapv(|z| z * pow2).view()).unwrap().linear();
        prop_assert_eq!(exact, base);
        let general = nmse(e.mapv(|z| z * alpha).view(), h.mapv(|z| z * alpha).view()).unwrap().linear();
        prop_assert!((general - base).abs() <= 1e-12 * base);
    }

    #[test]
    fn lmmse_posteriors_are_linear_in_observation(seed in any::<u64>(), users in 1usize..=2, alpha in -3.0f64..3.0) {
        let cfg = small_config(users, 3, seed);
        let pilots = PilotBook::<f64>::generate(&cfg).unwrap();
        let reg = build_regressors(&cfg, &pilots, SubBlockIndex::new(2, 1));
        let prior = PriorSpec::new(0.3, 0.2, 1.0, 0.05);
        let mut r = rng(seed ^ 1);
        let y1 = random_matrix(&mut r, reg.rows(), 3);
        let y2 = random_matrix(&mut r, reg.rows(), 3);
        let combined = lmmse_posteriors((y1.mapv(|z| z * alpha) + &y2).view(), &reg, &prior).unwrap();
        let p1 = lmmse_posteriors(y1.view(), &reg, &prior).unwrap();
        let p2 = lmmse_posteriors(y2.view(), &reg, &prior).unwrap();
        for (c, (a, b)) in [(&combined.c, (&p1.c, &p2.c)), (&combined.d, (&p1.d, &p2.d)), (&combined.q, (&p1.q, &p2.q))] {
            let expected = a.mapv(|z| z * alpha) + b;
            let scale = max_norm(expected.iter().copied()).max(1.0);
            let err = max_norm(c.iter().zip(expected.iter()).map(|(x, y)| x - y));
            prop_assert!(err <= 1e-12 * scale, "{} vs scale {}", err, scale);
        }
    }

    #[test]
    fn covariance_is_hermitian_with_noise_floor(seed in any::<u64>(), users in 1usize..=2, s2 in 0.001f64..2.0) {
        let cfg = small_config(users, 1, seed);
        let pilots = PilotBook::<f64>::generate(&cfg).unwrap();
        let reg = build_regressors(&cfg, &pilots, SubBlockIndex::new(1, 2));
        let sigma = covariance(&reg, &PriorSpec::new(0.7, 0.4, 1.3, s2));
        let n = sigma.nrows();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(sigma[[i, j]], sigma[[j, i]].conj());
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| sigma[[i, j]]);
        let min = m.symmetric_eigenvalues().iter().fold(f64::INFINITY, |a, &b| a.min(b));
        prop_assert!(min >= s2 * (1.0 - 1e-9), "{} < {}", min, s2);
    }

    #[test]
    fn sub_blocks_tile_the_grid(u in 1usize..4, v in 1usize..4, bt in 1usize..5, bn in 1usize..5) {
        let cfg = FrameConfig::new(v * bn, u * bt, u, u, v, 1, 1, 30e3);
        let mut hits = vec![0usize; cfg.symbols * cfg.subcarriers];
        for b in cfg.blocks() {
            let (t0, n0) = b.origin(&cfg);
            for t in t0..t0 + bt {
                for n in n0..n0 + bn {
                    hits[t * cfg.subcarriers + n] += 1;
                    prop_assert_eq!(cfg.block_of(t + 1, n + 1), b);
                }
            }
        }
        prop_assert!(hits.iter().all(|&h| h == 1));
    }

    #[test]
    fn pilot_book_regenerates_identically(seed in any::<u64>()) {
        let cfg = small_config(2, 1, seed);
        prop_assert_eq!(PilotBook::<f64>::generate(&cfg).unwrap(), PilotBook::<f64>::generate(&cfg).unwrap());
    }

    #[test]
    fn interpolation_is_exact_for_linear_time_variation(seed in any::<u64>()) {
        let cfg = FrameConfig::new(4, 28, 8, 2, 2, 1, 2, 30e3);
        let mut r = rng(seed);
        let (a, b) = (random_matrix(&mut r, 4, 2), random_matrix(&mut r, 4, 2));
        let full = Array3::from_shape_fn((28, 4, 2), |(t, n, m)| a[[n, m]] * (t + 1) as f64 + b[[n, m]]);
        let mut pilots = Array3::from_elem((8, 4, 2), Complex64::new(0.0, 0.0));
        for (i, &p) in cfg.pilot_positions.iter().enumerate() {
            pilots.slice_mut(s![i, .., ..]).assign(&full.slice(s![p - 1, .., ..]));
        }
        let out = interp_time_linear(pilots.view(), &cfg.pilot_positions, 28).unwrap();
        let (first, last) = (cfg.pilot_positions[0], cfg.pilot_positions[7]);
        for t in first..=last {
            let err = max_norm(out.slice(s![t - 1, .., ..]).iter().zip(full.slice(s![t - 1, .., ..]).iter()).map(|(x, y)| x - y));
            prop_assert!(err <= 1e-12 * 30.0);
        }
    }
}

#[test]
fn recovery_improves_as_priors_grow() {
    let cfg = small_config(2, 2, 5);
    let pilots = PilotBook::<f64>::generate(&cfg).unwrap();
    let real = ChannelRealization {
        paths: PathParams { users: Vec::new() },
        h: planar_channel(&cfg, &mut rng(5)),
    };
    let rx = synthesize_rx(&cfg, &pilots, &real, f64::INFINITY, 0).unwrap();
    let mut previous = f64::INFINITY;
    for v in [1.0, 1e2, 1e4, 1e6] {
        let mut priors = PriorTable::uniform(&cfg, v, v, v, 1.0);
        for b in &mut priors.blocks {
            b.pinned_sigma2_z = Some(1e-6);
        }
        let est = BpcmEstimator::new(&cfg, &pilots, priors).unwrap().estimate(&rx).unwrap();
        let mut total = planar_ce::evaluation::Nmse::default();
        for (k, e) in est.iter().enumerate() {
            let mut truth = Array3::from_elem(e.raw_dim(), Complex64::new(0.0, 0.0));
            for (i, &p) in cfg.pilot_positions.iter().enumerate() {
                truth.slice_mut(s![i, .., ..]).assign(&real.h.slice(s![k, p - 1, .., ..]));
            }
            total.merge(nmse(e.view(), truth.view()).unwrap());
        }
        let db = total.db();
        assert!(db <= previous + 1e-9, "prior {v}: {db} dB after {previous} dB");
        previous = db;
    }
}
