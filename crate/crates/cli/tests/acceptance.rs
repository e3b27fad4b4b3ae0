//! Acceptance gate. Each test verifies one guaranteed property end to end
//! and prints exactly one pass/fail line for it. Tolerances are written out
//! here as literals so a library change cannot silently relax them.

use std::path::Path;
use std::time::Instant;

use kd_dlgan_cli::runner::{run_experiment, RunOptions};
use kd_dlgan_core::agkd::{sample_gate, GateConfig};
use kd_dlgan_core::cgkd::{build_correlation, cgkd_total, CorrelationSource};
use kd_dlgan_core::config::TrainConfig;
use kd_dlgan_core::engine::EngineState;
use kd_dlgan_core::gradcheck::{run_checks, CheckModule};
use kd_dlgan_core::mat::Mat;
use kd_dlgan_core::metrics::{
    feature_stats, frechet_distance, inception_style_score, FeatureStats,
};
use kd_dlgan_core::rng::{StreamRng, STREAM_GATE};

/// Runs one acceptance check and prints its single result line.
fn gate(name: &str, body: impl FnOnce() -> Result<String, String>) {
    match body() {
        Ok(detail) => println!("{}: PASS ({})", name, detail),
        Err(why) => {
            println!("{}: FAIL ({})", name, why);
            panic!("{}: {}", name, why);
        }
    }
}

fn ensure(cond: bool, why: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why)
    }
}

fn err_str<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

#[test]
fn a1_gradient_oracles_agree_with_finite_differences() {
    gate("acceptance 1/9 gradients vs central differences", || {
        const TOL: f64 = 1e-4;
        const BUDGET_SECS: f64 = 60.0;
        let start = Instant::now();
        let reports = run_checks(CheckModule::All, 2024).map_err(err_str)?;
        let elapsed = start.elapsed().as_secs_f64();
        ensure(
            reports.len() == 4,
            format!("expected 4 module reports, got {}", reports.len()),
        )?;
        let mut worst = 0.0f64;
        for r in &reports {
            worst = worst.max(r.report.max_rel_error);
            ensure(
                r.report.max_rel_error < TOL,
                format!(
                    "{} max relative error {:.3e} >= {:e}",
                    r.name, r.report.max_rel_error, TOL
                ),
            )?;
        }
        ensure(
            elapsed < BUDGET_SECS,
            format!("took {:.1}s, budget {}s", elapsed, BUDGET_SECS),
        )?;
        Ok(format!(
            "worst relative error {:.3e} across 4 modules in {:.2}s",
            worst, elapsed
        ))
    });
}

/// Inner products against each text row, then plain row normalization.
/// Scalar loops only; shares nothing with the library implementation.
fn scalar_loop_correlation(features: &Mat, texts: &Mat) -> Vec<Vec<f64>> {
    let (b, m) = (features.rows(), features.cols());
    let k = texts.rows();
    let mut rows = Vec::with_capacity(b);
    for i in 0..b {
        let mut row = vec![0.0; k];
        for (j, slot) in row.iter_mut().enumerate() {
            let mut dot = 0.0;
            for d in 0..m {
                dot += features.get(i, d) * texts.get(j, d);
            }
            *slot = dot;
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut row {
            *v /= norm;
        }
        rows.push(row);
    }
    rows
}

#[test]
fn a2_correlation_losses_match_a_scalar_loop_oracle() {
    gate(
        "acceptance 2/9 correlation losses vs scalar-loop oracle",
        || {
            const TOL: f64 = 1e-8;
            let mut stream = StreamRng::new(7, "acceptance:cgkd-oracle");
            let mut worst = 0.0f64;
            let mut cases = 0;
            for b in [2usize, 3, 4] {
                for k in [2usize, 3] {
                    for m in [2usize, 5] {
                        let t = stream.normal_mat(b, m);
                        let s = stream.normal_mat(b, m);
                        let x = stream.normal_mat(k, m);
                        let out = cgkd_total(&t, &s, &x).map_err(err_str)?;

                        let ct = scalar_loop_correlation(&t, &x);
                        let cs = scalar_loop_correlation(&s, &x);
                        let mut l_pd = 0.0;
                        for i in 0..b {
                            for j in 0..b {
                                if i != j {
                                    let dot: f64 =
                                        ct[i].iter().zip(&ct[j]).map(|(u, v)| u * v).sum();
                                    let nu = ct[i].iter().map(|v| v * v).sum::<f64>().sqrt();
                                    let nv = ct[j].iter().map(|v| v * v).sum::<f64>().sqrt();
                                    l_pd += (dot / (nu * nv)).clamp(-1.0, 1.0);
                                }
                            }
                        }
                        let mut l_kd = 0.0;
                        for i in 0..b {
                            for j in 0..k {
                                l_kd += (ct[i][j] - cs[i][j]).abs();
                            }
                        }
                        l_kd /= (b * k) as f64;

                        for (name, got, want) in [
                            ("diversity term", out.l_pd, l_pd),
                            ("distillation term", out.l_kd, l_kd),
                            ("total", out.l_total, l_pd + l_kd),
                        ] {
                            let err = (got - want).abs();
                            worst = worst.max(err);
                            ensure(
                                err <= TOL,
                                format!("B={} K={} M={}: {} differs by {:.3e}", b, k, m, name, err),
                            )?;
                        }
                        cases += 1;
                    }
                }
            }
            Ok(format!("{} instances, worst gap {:.3e}", cases, worst))
        },
    );
}

#[test]
fn a3_aggregation_gate_opens_at_its_configured_rate() {
    gate("acceptance 3/9 aggregation gate frequency", || {
        const DRAWS: usize = 10_000;
        let mut stream = StreamRng::new(2024, STREAM_GATE);
        let mut open = 0usize;
        for _ in 0..DRAWS {
            if sample_gate(&mut GateConfig {
                p: 0.7,
                stream: &mut stream,
            }) {
                open += 1;
            }
        }
        let rate = open as f64 / DRAWS as f64;
        ensure(
            (0.68..=0.72).contains(&rate),
            format!("p=0.7 open rate {}", rate),
        )?;

        let mut stream = StreamRng::new(2024, STREAM_GATE);
        for i in 0..DRAWS {
            ensure(
                !sample_gate(&mut GateConfig {
                    p: 0.0,
                    stream: &mut stream,
                }),
                format!("p=0 opened on draw {}", i),
            )?;
        }
        let mut stream = StreamRng::new(2024, STREAM_GATE);
        for i in 0..DRAWS {
            ensure(
                sample_gate(&mut GateConfig {
                    p: 1.0,
                    stream: &mut stream,
                }),
                format!("p=1 stayed closed on draw {}", i),
            )?;
        }
        Ok(format!(
            "open rate {:.4} at p=0.7; p=0 never and p=1 always over {} draws",
            rate, DRAWS
        ))
    });
}

fn scaled(m: &Mat, alpha: f64) -> Mat {
    Mat::from_vec(
        m.rows(),
        m.cols(),
        m.data().iter().map(|v| v * alpha).collect(),
    )
    .unwrap()
}

fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn a4_correlations_are_invariant_to_feature_scale() {
    gate("acceptance 4/9 correlation scale invariance", || {
        const TOL: f64 = 1e-6;
        let mut stream = StreamRng::new(5, "acceptance:scale");
        let t = stream.normal_mat(4, 6);
        let s = stream.normal_mat(4, 6);
        let x = stream.normal_mat(3, 6);
        let base_ct = build_correlation(&t, &x, CorrelationSource::Teacher).map_err(err_str)?;
        let base_cs = build_correlation(&s, &x, CorrelationSource::Student).map_err(err_str)?;
        let base = cgkd_total(&t, &s, &x).map_err(err_str)?;
        let mut worst = 0.0f64;
        for alpha in [0.1, 10.0] {
            for scale_teacher in [true, false] {
                let (ts, ss) = if scale_teacher {
                    (scaled(&t, alpha), s.clone())
                } else {
                    (t.clone(), scaled(&s, alpha))
                };
                let ct = build_correlation(&ts, &x, CorrelationSource::Teacher).map_err(err_str)?;
                let cs = build_correlation(&ss, &x, CorrelationSource::Student).map_err(err_str)?;
                let out = cgkd_total(&ts, &ss, &x).map_err(err_str)?;
                for (name, diff) in [
                    (
                        "teacher correlations",
                        max_abs_diff(&ct.data, &base_ct.data),
                    ),
                    (
                        "student correlations",
                        max_abs_diff(&cs.data, &base_cs.data),
                    ),
                    ("diversity term", (out.l_pd - base.l_pd).abs()),
                    ("distillation term", (out.l_kd - base.l_kd).abs()),
                ] {
                    worst = worst.max(diff);
                    ensure(
                        diff < TOL,
                        format!(
                            "alpha={} on {}: {} moved by {:.3e}",
                            alpha,
                            if scale_teacher {
                                "teacher features"
                            } else {
                                "student features"
                            },
                            name,
                            diff
                        ),
                    )?;
                }
            }
        }
        Ok(format!("largest movement {:.3e}", worst))
    });
}

fn stats_1d(mean: f64, sigma: f64) -> FeatureStats {
    FeatureStats {
        mean: vec![mean],
        cov: Mat::from_vec(1, 1, vec![sigma * sigma]).unwrap(),
        count: 2,
    }
}

#[test]
fn a5_distribution_distance_matches_gaussian_oracles() {
    gate("acceptance 5/9 distribution distance oracles", || {
        const TOL: f64 = 1e-6;
        let mut stream = StreamRng::new(11, "acceptance:frechet");
        let feats = stream.normal_mat(24, 4);
        let stats = feature_stats(&feats).map_err(err_str)?;
        let d0 = frechet_distance(&stats, &stats).map_err(err_str)?;
        ensure(d0.abs() <= TOL, format!("identical stats gave {:.3e}", d0))?;

        // Closed form for two 1-D Gaussians. Variances stay >= 1 and within
        // 1 of each other so the covariance stabilizer's shift of the square
        // roots stays far below the tolerance.
        let mut worst = d0.abs();
        for (m1, s1, m2, s2) in [
            (0.0, 1.0, 1.0, 2.0),
            (0.5, 2.0, -0.25, 3.0),
            (2.0, 1.5, -1.0, 1.5),
        ] {
            let want = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
            let got = frechet_distance(&stats_1d(m1, s1), &stats_1d(m2, s2)).map_err(err_str)?;
            let err: f64 = (got - want).abs();
            worst = worst.max(err);
            ensure(
                err <= TOL,
                format!(
                    "1-D case ({},{}) vs ({},{}): got {}, want {}",
                    m1, s1, m2, s2, got, want
                ),
            )?;
        }

        // With diagonal covariances the distance separates per coordinate.
        let mean_a = [0.0, 1.0, -2.0];
        let mean_b = [1.0, -1.0, 0.0];
        let var_a = [1.0, 2.25, 4.0];
        let var_b = [2.25, 1.0, 9.0];
        let diag = |v: &[f64]| {
            let mut m = Mat::zeros(v.len(), v.len());
            for (i, &x) in v.iter().enumerate() {
                m.set(i, i, x);
            }
            m
        };
        let a = FeatureStats {
            mean: mean_a.to_vec(),
            cov: diag(&var_a),
            count: 2,
        };
        let b = FeatureStats {
            mean: mean_b.to_vec(),
            cov: diag(&var_b),
            count: 2,
        };
        let full = frechet_distance(&a, &b).map_err(err_str)?;
        let mut sum = 0.0;
        for i in 0..3 {
            sum += frechet_distance(
                &FeatureStats {
                    mean: vec![mean_a[i]],
                    cov: Mat::from_vec(1, 1, vec![var_a[i]]).unwrap(),
                    count: 2,
                },
                &FeatureStats {
                    mean: vec![mean_b[i]],
                    cov: Mat::from_vec(1, 1, vec![var_b[i]]).unwrap(),
                    count: 2,
                },
            )
            .map_err(err_str)?;
        }
        let err = (full - sum).abs();
        worst = worst.max(err);
        ensure(
            err <= TOL,
            format!("diagonal case: full {} vs coordinate sum {}", full, sum),
        )?;
        Ok(format!("worst gap {:.3e}", worst))
    });
}

#[test]
fn a6_class_prediction_score_matches_known_values() {
    gate("acceptance 6/9 class-prediction score oracles", || {
        let (n, k) = (10usize, 5usize);
        let uniform = Mat::from_vec(n, k, vec![1.0 / k as f64; n * k]).unwrap();
        let s_uniform = inception_style_score(&uniform).map_err(err_str)?;
        ensure(
            (s_uniform - 1.0).abs() <= 1e-6,
            format!("uniform rows scored {}", s_uniform),
        )?;

        let (n, c) = (40usize, 4usize);
        let mut data = vec![0.0; n * c];
        for r in 0..n {
            data[r * c + (r % c)] = 1.0;
        }
        let onehot = Mat::from_vec(n, c, data).unwrap();
        let s_onehot = inception_style_score(&onehot).map_err(err_str)?;
        ensure(
            (s_onehot - c as f64).abs() <= 0.01 * c as f64,
            format!("{} one-hot classes scored {}", c, s_onehot),
        )?;
        Ok(format!(
            "uniform score {:.8}; {} one-hot classes score {:.6}",
            s_uniform, c, s_onehot
        ))
    });
}

#[test]
fn a7_zero_kd_weights_reduce_to_the_baseline_bitwise() {
    gate(
        "acceptance 7/9 zero KD weights equal the KD-free baseline",
        || {
            const STEPS: usize = 100;
            let mut zeroed = TrainConfig::default();
            zeroed.master_seed = 33;
            zeroed.batch_size = 8;
            zeroed.loss.w_agkd = 0.0;
            zeroed.loss.w_cgkd = 0.0;
            zeroed.loss.w_pd = 0.0;
            let mut disabled = TrainConfig::default();
            disabled.master_seed = 33;
            disabled.batch_size = 8;
            disabled.agkd.enabled = false;
            disabled.cgkd.enabled = false;

            let (mut a, _) = EngineState::from_config(zeroed).map_err(err_str)?;
            let (mut b, _) = EngineState::from_config(disabled).map_err(err_str)?;
            for step in 0..STEPS {
                let (ia, la) = a.draw_real_batch();
                let (ib, lb) = b.draw_real_batch();
                let ma = a.train_step(&ia, &la).map_err(err_str)?;
                let mb = b.train_step(&ib, &lb).map_err(err_str)?;
                for key in ["d_loss", "g_loss"] {
                    let (x, y) = (ma.components[key], mb.components[key]);
                    ensure(
                        x.to_bits() == y.to_bits(),
                        format!("step {}: {} diverged, {} vs {}", step, key, x, y),
                    )?;
                }
            }
            Ok(format!(
                "d_loss and g_loss bitwise equal across {} steps",
                STEPS
            ))
        },
    );
}

/// The 8-mode, 800-sample configuration with the correlation KD's diversity
/// term rebalanced: the ordered pair sum grows like B*(B-1), so at batch 32
/// its raw magnitude dwarfs the other objectives and 0.03 restores balance.
fn desk_config(seed: u64, cgkd_on: bool) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.master_seed = seed;
    c.cgkd.pd_weight = 0.03;
    c.cgkd.enabled = cgkd_on;
    c
}

struct DeskRun {
    fid_start: f64,
    fid_end: f64,
    coverage: f64,
}

/// Evaluates, trains to the configured horizon checking every component is
/// finite, then evaluates again.
fn desk_run(cfg: TrainConfig) -> Result<DeskRun, String> {
    let steps = cfg.steps;
    let (mut state, _) = EngineState::from_config(cfg).map_err(err_str)?;
    let (eval_start, _) = state.evaluate().map_err(err_str)?;
    for _ in 0..steps {
        let (imgs, labels) = state.draw_real_batch();
        let m = state.train_step(&imgs, &labels).map_err(err_str)?;
        for (name, v) in &m.components {
            if !v.is_finite() {
                return Err(format!("non-finite {} at step {}", name, m.step));
            }
        }
    }
    let (eval_end, _) = state.evaluate().map_err(err_str)?;
    Ok(DeskRun {
        fid_start: eval_start["teacher_fid"],
        fid_end: eval_end["teacher_fid"],
        coverage: eval_end["mode_coverage"],
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn a8_desk_scale_training_improves_and_kd_preserves_coverage() {
    gate("acceptance 8/9 desk-scale smoke and direction", || {
        let seeds = [1u64, 2, 3, 4, 5];
        let mut drops = 0usize;
        let mut cov_on = Vec::new();
        let mut cov_off = Vec::new();
        for &seed in &seeds {
            let on = desk_run(desk_config(seed, true))?;
            let off = desk_run(desk_config(seed, false))?;
            drops += (on.fid_end < on.fid_start) as usize;
            cov_on.push(on.coverage);
            cov_off.push(off.coverage);
        }
        ensure(
            drops >= 4,
            format!("teacher-feature distance fell in only {}/5 seeds", drops),
        )?;
        let (m_on, m_off) = (median(cov_on), median(cov_off));
        ensure(
            m_on >= m_off,
            format!(
                "median mode coverage {} with correlation KD vs {} without",
                m_on, m_off
            ),
        )?;
        Ok(format!(
            "all 10 runs finite; distance fell in {}/5 seeds; median coverage {:.3} with vs {:.3} without",
            drops, m_on, m_off
        ))
    });
}

fn repro_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.run_name = "repro".to_string();
    c.master_seed = 11;
    c.steps = 10;
    c.batch_size = 4;
    c.eval_every = 5;
    c.checkpoint_every = 5;
    c.sample_grid_every = 5;
    c.eval_samples = 8;
    c.eval_pairs = 8;
    c.model.image_size = 4;
    c.model.latent_dim = 4;
    c.model.hidden_dim = 8;
    c.model.feature_dim_f = 6;
    c.teacher.feature_dim = 4;
    c.teacher.hidden_dim = 8;
    c.data.num_modes = 2;
    c.data.samples_per_mode = 8;
    c
}

#[test]
fn a9_identical_seeds_and_resume_reproduce_metrics_exactly() {
    gate("acceptance 9/9 reproducibility and resume", || {
        let read = |dir: &Path| std::fs::read(dir.join("metrics.csv")).map_err(err_str);
        let run = |root: &Path, opts: RunOptions| {
            run_experiment(
                repro_config(),
                &RunOptions {
                    output_root: Some(root.to_path_buf()),
                    ..opts
                },
            )
            .map_err(err_str)
        };
        let root_a = tempfile::tempdir().map_err(err_str)?;
        let root_b = tempfile::tempdir().map_err(err_str)?;
        let root_c = tempfile::tempdir().map_err(err_str)?;

        let a = run(root_a.path(), RunOptions::default())?;
        let b = run(root_b.path(), RunOptions::default())?;
        let bytes = read(&a.dir)?;
        ensure(
            bytes == read(&b.dir)?,
            "two identical runs wrote different metrics".to_string(),
        )?;

        let cut = run(
            root_c.path(),
            RunOptions {
                stop_after: Some(5),
                ..Default::default()
            },
        )?;
        ensure(
            cut.interrupted,
            "the partial run did not stop early".to_string(),
        )?;
        let resumed = run(
            root_c.path(),
            RunOptions {
                resume: Some(cut.dir.join("ckpt_000005.kdck")),
                ..Default::default()
            },
        )?;
        ensure(
            resumed.dir == cut.dir,
            "resume moved to a different directory".to_string(),
        )?;
        ensure(
            read(&resumed.dir)? == bytes,
            "resumed metrics differ from the uninterrupted run".to_string(),
        )?;
        Ok("repeated and resumed runs wrote identical metric bytes".to_string())
    });
}
