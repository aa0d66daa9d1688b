//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::time::{Duration, Instant};

use ndarray::{s, Array2, Array4, Array5, ArrayD, Ix3, Ix4};
use num_complex::Complex64;
use planar_ce::bpcm::{build_regressors, lmmse_posteriors, PriorSpec, PriorTable};
use planar_ce::channel::{draw_paths, realize, ChannelRealization, PathParams, ProfileSpec};
use planar_ce::drcn::{conv_nd, ConvLayerSpec};
use planar_ce::evaluation::{complexity_lbpce, complexity_table, run_sweep, EstimatorKind, NmseCell, SweepConfig};
use planar_ce::evaluation::nmse;
use planar_ce::frame::{selection_pattern, FrameConfig, PilotBook, SubBlockIndex};
use planar_ce::system::synthesize_rx;
use planar_ce::{BpcmEstimator, Error};
use rand::Rng;

use common::*;

type Outcome = Result<String, String>;

fn lmmse_oracle_equivalence() -> Outcome {
    let mut rng = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let cfg = loop {
            let users = rng.gen_range(1..=4);
            let (u, v) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
            let block_n = rng.gen_range(2..=8);
            let per_block = rng.gen_range(1..=4);
            let block_t = per_block + rng.gen_range(0..=3);
            let p = block_n * per_block;
            if p < 3 * users || p > 24 {
                continue;
            }
            let mut cfg = FrameConfig::new(v * block_n, u * block_t, u * per_block, u, v, users, rng.gen_range(1..=4), 30e3);
            cfg.seed = rng.gen();
            break cfg;
        };
        let pilots = PilotBook::<f64>::generate(&cfg).map_err(|e| e.to_string())?;
        let b = SubBlockIndex::new(rng.gen_range(1..=cfg.time_blocks), rng.gen_range(1..=cfg.freq_blocks));
        let reg = build_regressors(&cfg, &pilots, b);
        let y = random_matrix(&mut rng, reg.rows(), cfg.antennas);
        let prior = PriorSpec::new(
            rng.gen_range(0.01..2.0),
            rng.gen_range(0.01..2.0),
            rng.gen_range(0.1..2.0),
            rng.gen_range(0.01..1.0),
        );
        let post = lmmse_posteriors(y.view(), &reg, &prior).map_err(|e| e.to_string())?;
        let k = cfg.users;
        let mut variances = vec![prior.v_c; k];
        variances.extend(vec![prior.v_d; k]);
        variances.extend(vec![prior.v_q; k]);
        let joint = joint_lmmse_information_form(&reg.stacked(), &y, &variances, prior.sigma2_z);
        let scale = joint.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        for (part, mat) in [&post.c, &post.d, &post.q].into_iter().enumerate() {
            for ((i, j), z) in mat.indexed_iter() {
                worst = worst.max((z - joint[(part * k + i, j)]).norm() / scale);
            }
        }
    }
    let detail = format!("50 instances, max relative error {worst:.2e} (tol 1e-9)");
    if worst <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn planar_exact_recovery() -> Outcome {
    let mut rng = rng(12);
    let mut configs = vec![FrameConfig::new(48, 28, 8, 2, 2, 4, 4, 30e3)];
    while configs.len() < 10 {
        let users = rng.gen_range(1..=4);
        let mut cfg = FrameConfig::new(
            rng.gen_range(1..=2) * 12,
            14,
            rng.gen_range(2..=3) * 2,
            2,
            rng.gen_range(1..=2),
            users,
            rng.gen_range(1..=4),
            30e3,
        );
        cfg.subcarriers = cfg.freq_blocks * 12;
        cfg.seed = rng.gen();
        if cfg.validate().is_ok() {
            configs.push(cfg);
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for cfg in &configs {
        let pilots = PilotBook::<f64>::generate(cfg).map_err(|e| e.to_string())?;
        let real = ChannelRealization {
            paths: PathParams { users: Vec::new() },
            h: planar_channel(cfg, &mut rng),
        };
        let rx = synthesize_rx(cfg, &pilots, &real, f64::INFINITY, 0).map_err(|e| e.to_string())?;
        let mut priors = PriorTable::uniform(cfg, 1e6, 1e6, 1e6, 1.0);
        for b in &mut priors.blocks {
            b.pinned_sigma2_z = Some(1e-6);
        }
        let est = BpcmEstimator::new(cfg, &pilots, priors)
            .and_then(|e| e.estimate(&rx))
            .map_err(|e| e.to_string())?;
        for (k, e) in est.iter().enumerate() {
            let mut truth = ndarray::Array3::from_elem(e.raw_dim(), Complex64::new(0.0, 0.0));
            for (i, &p) in cfg.pilot_positions.iter().enumerate() {
                truth.slice_mut(s![i, .., ..]).assign(&real.h.slice(s![k, p - 1, .., ..]));
            }
            let db = nmse(e.view(), truth.view()).map_err(|e| e.to_string())?.db();
            worst = worst.max(db);
        }
    }
    let detail = format!("{} configs, worst NMSE {worst:.1} dB (limit -80 dB)", configs.len());
    if worst <= -80.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn selection_operator_equivalence() -> Outcome {
    let mut rng = rng(13);
    let mut checked = 0;
    for _ in 0..20 {
        let cfg = random_config(&mut rng);
        cfg.validate().map_err(|e| e.to_string())?;
        for b in cfg.blocks() {
            let s_mat = selection_matrix(&cfg, b.u);
            let x = random_matrix(&mut rng, s_mat.ncols(), 3);
            let mut product = Array2::from_elem((s_mat.nrows(), 3), Complex64::new(0.0, 0.0));
            for i in 0..s_mat.nrows() {
                for j in 0..3 {
                    for l in 0..s_mat.ncols() {
                        product[[i, j]] += x[[l, j]] * s_mat[[i, l]];
                    }
                }
            }
            let rows = selection_pattern(&cfg, b);
            let gathered = x.select(ndarray::Axis(0), &rows);
            if gathered != product {
                return Err(format!("mismatch for block ({}, {}) of {:?}", b.u, b.v, cfg.pilot_positions));
            }
            checked += 1;
        }
    }
    Ok(format!("20 configs, {checked} sub-blocks, exact equality"))
}

fn random_layer(rng: &mut rand_chacha::ChaCha8Rng, rank: usize) -> ConvLayerSpec {
    let kernel: Vec<usize> = (0..rank).map(|_| 2 * rng.gen_range(0..=2) + 1).collect();
    let dilation: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=3)).collect();
    ConvLayerSpec::same("layer", rng.gen_range(1..=3), rng.gen_range(1..=3), &kernel, &dilation, false)
}

fn convolution_oracles() -> Outcome {
    let mut rng = rng(14);
    let (mut naive_err, mut inflate_err) = (0.0f64, 0.0f64);
    for rank in [2, 3] {
        for _ in 0..20 {
            let layer = random_layer(&mut rng, rank);
            let mut shape = vec![layer.in_channels];
            shape.extend((0..rank).map(|_| rng.gen_range(3..=7)));
            let x = random_tensor(&mut rng, &shape);
            let w = random_tensor(&mut rng, &layer.weight_shape());
            let bias: Vec<f64> = (0..layer.out_channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = conv_nd(&x, &layer, &w, &bias).map_err(|e| e.to_string())?;
            let oracle: ArrayD<f64> = if rank == 3 {
                let x4 = x.clone().into_dimensionality::<Ix4>().unwrap();
                let w5: Array5<f64> = w.clone().into_dimensionality().unwrap();
                let d = [layer.dilation[0], layer.dilation[1], layer.dilation[2]];
                let p = [layer.padding[0], layer.padding[1], layer.padding[2]];
                naive_conv3(&x4, &w5, &bias, d, p).into_dyn()
            } else {
                let x3 = x.clone().into_dimensionality::<Ix3>().unwrap();
                let w4: Array4<f64> = w.clone().into_dimensionality().unwrap();
                let d = [layer.dilation[0], layer.dilation[1]];
                let p = [layer.padding[0], layer.padding[1]];
                naive_conv2(&x3, &w4, &bias, d, p).into_dyn()
            };
            naive_err = naive_err.max(max_relative_error(&y, &oracle));

            let inflated = inflate_kernel(&w, &layer.dilation);
            let dense = ConvLayerSpec::same(
                "inflated",
                layer.in_channels,
                layer.out_channels,
                &inflated.shape()[2..],
                &vec![1; rank],
                false,
            );
            let y_dense = conv_nd(&x, &dense, &inflated, &bias).map_err(|e| e.to_string())?;
            inflate_err = inflate_err.max(max_relative_error(&y, &y_dense));
        }
    }
    let detail = format!(
        "20 instances per rank: naive oracle {naive_err:.2e} (tol 1e-5), zero-inflated kernel {inflate_err:.2e} (tol 1e-6)"
    );
    if naive_err <= 1e-5 && inflate_err <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn complexity_formula() -> Outcome {
    let cfg = FrameConfig::default();
    let c = complexity_lbpce(&cfg).map_err(|e| e.to_string())?;
    let table = complexity_table(&cfg, [cfg.users]).map_err(|e| e.to_string())?;
    let detail = format!("module A {}, module B {}, total {}", c.module_a, c.module_b, c.total());
    let table_ok = table.iter().any(|r| r.estimator == "lbpce" && r.multiplications == 3_981_312 + 1_918_402_560);
    if c.module_a == 3_981_312 && c.module_b == 1_918_402_560 && table_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn estimator_ordering() -> Outcome {
    let cfg = FrameConfig::new(48, 28, 8, 2, 2, 4, 8, 30e3);
    let profile = ProfileSpec::cdl_b().with_speed_kmh(100.0);
    let sc = SweepConfig::<f64>::new(cfg, profile, vec![EstimatorKind::Bpcm, EstimatorKind::Ls], vec![10.0], 100);
    let report = run_sweep(&sc).map_err(|e| e.to_string())?;
    let db = |k| match &report.row(k, 10.0).expect("row present").nmse {
        NmseCell::Db(v) => Ok(*v),
        NmseCell::Failed(m) => Err(m.clone()),
    };
    let (bpcm, ls) = (db(EstimatorKind::Bpcm)?, db(EstimatorKind::Ls)?);
    let detail = format!("module A {bpcm:.2} dB, LS {ls:.2} dB, margin {:.2} dB over 100 frames", ls - bpcm);
    if bpcm < ls {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn solvability_gate() -> Outcome {
    let cfg = FrameConfig {
        users: 33,
        ..FrameConfig::default()
    };
    let is_solvability = |r: Result<(), Error>| matches!(r, Err(Error::Config(c)) if c.has(planar_ce::Violation::Solvability));
    let pilots = PilotBook::<f64>::ones(&cfg);
    let profile = ProfileSpec::cdl_b();
    let checks = [
        ("validate", is_solvability(cfg.validate().map_err(Error::from))),
        ("pilot generation", is_solvability(PilotBook::<f64>::generate(&cfg).map(|_| ()))),
        ("path drawing", is_solvability(draw_paths::<f64>(&cfg, &profile, 1).map(|_| ()))),
        ("realization", is_solvability(realize::<f64>(&cfg, &profile, 1).map(|_| ()))),
        (
            "estimator",
            is_solvability(BpcmEstimator::new(&cfg, &pilots, PriorTable::uniform(&cfg, 1.0, 1.0, 1.0, 1.0)).map(|_| ())),
        ),
        (
            "sweep",
            is_solvability(
                run_sweep(&SweepConfig::<f64>::new(cfg.clone(), profile.clone(), vec![EstimatorKind::Ls], vec![10.0], 1))
                    .map(|_| ()),
            ),
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        Ok("K=33 at N=48, T_P=8, U=V=2 rejected with SOLVABILITY by every entry point".into())
    } else {
        Err(format!("not rejected by: {}", failed.join(", ")))
    }
}

fn sweep_determinism() -> Outcome {
    let cfg = FrameConfig::new(24, 14, 4, 2, 2, 2, 4, 30e3);
    let sc = SweepConfig::<f64>::new(
        cfg,
        ProfileSpec::cdl_b(),
        vec![EstimatorKind::Bpcm, EstimatorKind::Ls, EstimatorKind::Lmmse1d, EstimatorKind::Lmmse2x1d],
        vec![4.0, 10.0, 16.0],
        8,
    );
    let a = run_sweep(&sc).map_err(|e| e.to_string())?.to_csv();
    let b = run_sweep(&sc).map_err(|e| e.to_string())?.to_csv();
    if a.as_bytes() == b.as_bytes() {
        Ok(format!("two runs, {} CSV bytes, identical", a.len()))
    } else {
        Err("CSV differs between runs".into())
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 8] = [
        ("lmmse_oracle_equivalence", lmmse_oracle_equivalence, Duration::from_secs(10)),
        ("planar_exact_recovery", planar_exact_recovery, Duration::from_secs(5)),
        ("selection_operator_equivalence", selection_operator_equivalence, Duration::MAX),
        ("convolution_oracles", convolution_oracles, Duration::MAX),
        ("complexity_formula", complexity_formula, Duration::MAX),
        ("estimator_ordering", estimator_ordering, Duration::from_secs(120)),
        ("solvability_gate", solvability_gate, Duration::MAX),
        ("sweep_determinism", sweep_determinism, Duration::MAX),
    ];
    let mut failures = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if elapsed <= budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over time budget {budget:?}")),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failures += 1;
        }
        println!("[{status}] {name}: {detail} ({:.2} s)", elapsed.as_secs_f64());
    }
    println!("acceptance: {} passed, {failures} failed", 8 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
