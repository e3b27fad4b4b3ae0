//! Finite-difference verification of every analytic gradient path: each loss
//! family on its own inputs, plus a sampled parameter-level pass through the
//! fully composed discriminator and generator objectives.
//!
//! Inputs are resampled until every absolute-value and hinge term sits a safe
//! margin away from its kink, so the central-difference oracle is valid.

use crate::adversarial::{
    d_adv_loss, d_adv_on_tape, g_adv_loss, g_adv_on_tape, DAdvKind, DiscriminatorScores, GAdvKind,
    ScoreKind,
};
use crate::agkd::{agkd_agg_loss, agkd_kd_loss, agkd_on_tape, AgkdInputs};
use crate::autodiff::{Tape, Var};
use crate::cgkd::{
    build_correlation, cgkd_on_tape, cgkd_total, CgkdTapeOptions, CorrelationSource,
};
use crate::data::{
    apply_augment_tape, apply_augment_value, sample_augment, AugmentDraw, AugmentPolicy,
};
use crate::error::{KdError, Result};
use crate::mat::Mat;
use crate::models::{init_params, Discriminator, Generator, ModelDims, ParamSet, TapeBinding};
use crate::numerics::{finite_diff_gradient, row_l2_normalize, GradCheckReport, FD_STEP};
use crate::rng::StreamRng;
use crate::teacher::{TeacherHub, TeacherModel, TeacherRequest};

/// Relative-error bound for the isolated loss families.
pub const LOSS_TOLERANCE: f64 = 1e-4;

/// Relative-error bound for the composed parameter-level pass, which chains
/// many more operations between the probe and the loss.
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Minimum distance every L1 or hinge argument must keep from its kink so a
/// finite-difference probe of `FD_STEP` cannot cross it.
const KINK_MARGIN: f64 = 5e-3;

/// Which gradient families to verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckModule {
    /// Every family plus the composed parameter-level pass.
    All,
    Agkd,
    Cgkd,
    Adv,
}

impl CheckModule {
    pub fn parse(s: &str) -> Result<CheckModule> {
        match s {
            "all" => Ok(CheckModule::All),
            "agkd" => Ok(CheckModule::Agkd),
            "cgkd" => Ok(CheckModule::Cgkd),
            "adv" => Ok(CheckModule::Adv),
            other => Err(KdError::invalid(format!(
                "unknown gradient-check module {:?}; expected all, agkd, cgkd or adv",
                other
            ))),
        }
    }
}

/// One family's verification outcome with the tolerance it is judged by.
#[derive(Debug, Clone)]
pub struct ModuleReport {
    pub name: String,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl ModuleReport {
    pub fn passed(&self) -> bool {
        self.report.passed(self.tolerance)
    }
}

/// Runs the selected family checks with deterministic inputs derived from
/// `seed`.
pub fn run_checks(module: CheckModule, seed: u64) -> Result<Vec<ModuleReport>> {
    let mut out = Vec::new();
    let mut push = |name: &str, tolerance: f64, report: GradCheckReport| {
        out.push(ModuleReport {
            name: name.to_string(),
            tolerance,
            report,
        });
    };
    match module {
        CheckModule::All => {
            push("agkd", LOSS_TOLERANCE, check_agkd(seed)?);
            push("cgkd", LOSS_TOLERANCE, check_cgkd(seed)?);
            push("adv", LOSS_TOLERANCE, check_adv(seed)?);
            push("models", MODEL_TOLERANCE, check_models(seed)?);
        }
        CheckModule::Agkd => push("agkd", LOSS_TOLERANCE, check_agkd(seed)?),
        CheckModule::Cgkd => push("cgkd", LOSS_TOLERANCE, check_cgkd(seed)?),
        CheckModule::Adv => push("adv", LOSS_TOLERANCE, check_adv(seed)?),
    }
    Ok(out)
}

fn clears_kinks(pairs: &[(&Mat, &Mat)]) -> bool {
    pairs.iter().all(|(a, b)| {
        a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| (x - y).abs() >= KINK_MARGIN)
    })
}

/// Feature mimicry and aggregation under both gate states, differentiated
/// through all four input batches.
pub fn check_agkd(seed: u64) -> Result<GradCheckReport> {
    let mut rng = StreamRng::new(seed, "gradcheck:agkd");
    let (b, m) = (4, 5);
    let (tr, tf, sr, sf) = loop {
        let tr = rng.normal_mat(b, m);
        let tf = rng.normal_mat(b, m);
        let sr = rng.normal_mat(b, m);
        let sf = rng.normal_mat(b, m);
        if clears_kinks(&[(&tr, &sr), (&tf, &sf), (&tr, &sf), (&tf, &sr)]) {
            break (tr, tf, sr, sf);
        }
    };

    let mut report = GradCheckReport::new();
    for gate_open in [false, true] {
        let mut tape = Tape::new();
        let vtr = tape.param(tr.clone());
        let vtf = tape.param(tf.clone());
        let vsr = tape.param(sr.clone());
        let vsf = tape.param(sf.clone());
        let vars = agkd_on_tape(&mut tape, vtr, vtf, vsr, vsf, gate_open);
        let grads = tape.backward(vars.l_total);

        let gate_tag = if gate_open { "open" } else { "closed" };
        let inputs = [
            ("teacher_real", vtr, &tr),
            ("teacher_fake", vtf, &tf),
            ("student_real", vsr, &sr),
            ("student_fake", vsf, &sf),
        ];
        for (name, var, base) in inputs {
            let analytic = grads
                .get(var)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; base.len()]);
            let numeric = finite_diff_gradient(
                |theta| {
                    let probe = Mat::from_vec(b, m, theta.to_vec()).unwrap();
                    let pick = |n: &str, dflt: &Mat| {
                        if n == name {
                            probe.clone()
                        } else {
                            dflt.clone()
                        }
                    };
                    let (ptr, ptf, psr, psf) = (
                        pick("teacher_real", &tr),
                        pick("teacher_fake", &tf),
                        pick("student_real", &sr),
                        pick("student_fake", &sf),
                    );
                    let inputs = AgkdInputs {
                        teacher_real: &ptr,
                        teacher_fake: &ptf,
                        student_real: &psr,
                        student_fake: &psf,
                    };
                    let kd = agkd_kd_loss(&inputs).unwrap();
                    if gate_open {
                        kd + agkd_agg_loss(&inputs).unwrap()
                    } else {
                        kd
                    }
                },
                base.data(),
                FD_STEP,
            )?;
            report.record(&format!("agkd:{}:{}", gate_tag, name), &analytic, &numeric);
        }
    }
    Ok(report)
}

/// Correlation diversity plus distillation, differentiated through both
/// feature batches.
pub fn check_cgkd(seed: u64) -> Result<GradCheckReport> {
    let mut rng = StreamRng::new(seed, "gradcheck:cgkd");
    let (b, k, m) = (4, 3, 5);
    let texts = row_l2_normalize(&rng.normal_mat(k, m))?;
    let (tf, sf) = loop {
        let tf = rng.normal_mat(b, m);
        let sf = rng.normal_mat(b, m);
        let ct = build_correlation(&tf, &texts, CorrelationSource::Teacher)?;
        let cs = build_correlation(&sf, &texts, CorrelationSource::Student)?;
        if clears_kinks(&[(&ct.data, &cs.data)]) {
            break (tf, sf);
        }
    };

    let mut tape = Tape::new();
    let vtf = tape.param(tf.clone());
    let vsf = tape.param(sf.clone());
    let vtx = tape.constant(texts.clone());
    let vars = cgkd_on_tape(&mut tape, vtf, vsf, vtx, CgkdTapeOptions::default());
    let grads = tape.backward(vars.l_total);

    let mut report = GradCheckReport::new();
    for (name, var, base, is_teacher) in [
        ("teacher_fake", vtf, &tf, true),
        ("student_fake", vsf, &sf, false),
    ] {
        let analytic = grads
            .get(var)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; base.len()]);
        let numeric = finite_diff_gradient(
            |theta| {
                let probe = Mat::from_vec(b, m, theta.to_vec()).unwrap();
                let (a, s) = if is_teacher {
                    (&probe, &sf)
                } else {
                    (&tf, &probe)
                };
                cgkd_total(a, s, &texts).unwrap().l_total
            },
            base.data(),
            FD_STEP,
        )?;
        report.record(&format!("cgkd:{}", name), &analytic, &numeric);
    }
    Ok(report)
}

/// Both discriminator losses and all three generator variants on logit
/// columns. Hinge logits are resampled away from the unit margins.
pub fn check_adv(seed: u64) -> Result<GradCheckReport> {
    let mut rng = StreamRng::new(seed, "gradcheck:adv");
    let n = 6;
    let smooth_real = rng.normal_mat(n, 1);
    let smooth_fake = rng.normal_mat(n, 1);
    let (hinge_real, hinge_fake) = loop {
        let r = rng.normal_mat(n, 1);
        let f = rng.normal_mat(n, 1);
        let r_clear = r.data().iter().all(|&s| (1.0 - s).abs() >= KINK_MARGIN);
        let f_clear = f.data().iter().all(|&s| (1.0 + s).abs() >= KINK_MARGIN);
        if r_clear && f_clear {
            break (r, f);
        }
    };

    let mut report = GradCheckReport::new();
    for kind in [DAdvKind::Logistic, DAdvKind::Hinge] {
        let (real, fake) = match kind {
            DAdvKind::Logistic => (&smooth_real, &smooth_fake),
            DAdvKind::Hinge => (&hinge_real, &hinge_fake),
        };
        let mut tape = Tape::new();
        let vr = tape.param(real.clone());
        let vf = tape.param(fake.clone());
        let loss = d_adv_on_tape(&mut tape, vr, vf, kind);
        let grads = tape.backward(loss);
        let tag = match kind {
            DAdvKind::Logistic => "d_logistic",
            DAdvKind::Hinge => "d_hinge",
        };
        for (side, var, base, other, base_is_real) in [
            ("real", vr, real, fake, true),
            ("fake", vf, fake, real, false),
        ] {
            let analytic = grads
                .get(var)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; base.len()]);
            let numeric = finite_diff_gradient(
                |theta| {
                    let (r, f) = if base_is_real {
                        (theta.to_vec(), other.data().to_vec())
                    } else {
                        (other.data().to_vec(), theta.to_vec())
                    };
                    d_adv_loss(
                        &DiscriminatorScores {
                            real: r,
                            fake: f,
                            kind: ScoreKind::Logits,
                        },
                        kind,
                    )
                    .unwrap()
                },
                base.data(),
                FD_STEP,
            )?;
            report.record(&format!("adv:{}:{}", tag, side), &analytic, &numeric);
        }
    }

    for (kind, tag) in [
        (GAdvKind::LogisticSaturating, "g_saturating"),
        (GAdvKind::LogisticNonSaturating, "g_non_saturating"),
        (GAdvKind::Hinge, "g_hinge"),
    ] {
        let mut tape = Tape::new();
        let vf = tape.param(smooth_fake.clone());
        let loss = g_adv_on_tape(&mut tape, vf, kind);
        let grads = tape.backward(loss);
        let analytic = grads
            .get(vf)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; smooth_fake.len()]);
        let numeric = finite_diff_gradient(
            |theta| g_adv_loss(theta, ScoreKind::Logits, kind).unwrap(),
            smooth_fake.data(),
            FD_STEP,
        )?;
        report.record(&format!("adv:{}:fake", tag), &analytic, &numeric);
    }
    Ok(report)
}

/// Fixed scene for the composed pass: tiny dense networks, a frozen teacher,
/// one latent batch, one augmented real batch.
struct ComposedFixture {
    dims: ModelDims,
    generator: Generator,
    discriminator: Discriminator,
    teacher: Box<dyn TeacherModel>,
    texts: Mat,
    z: Mat,
    real_aug: Mat,
    teacher_real: Mat,
    /// Student projection of the base-parameter fake batch. The generator
    /// objective stop-grads this tensor, so the difference oracle must hold
    /// it at its base value; otherwise the probe would differentiate the very
    /// path the stop severs.
    student_proj_base: Mat,
    draw: AugmentDraw,
}

impl ComposedFixture {
    fn build(seed: u64) -> Result<ComposedFixture> {
        let dims = ModelDims {
            image_size: 4,
            channels: 1,
            latent_dim: 4,
            conditional: false,
            num_classes: 2,
            feature_dim_f: 6,
            teacher_dim: 4,
            hidden_dim: 8,
            conv_base: 16,
        };
        let (generator, discriminator) = init_params(&dims, seed)?;
        let teacher = TeacherHub::new().build(&TeacherRequest {
            kind: "mock".to_string(),
            feature_dim: dims.teacher_dim,
            hidden_dim: 8,
            seed: seed.wrapping_add(101),
            input_shape: (dims.channels, dims.image_size, dims.image_size),
            checkpoint_path: None,
        })?;
        let texts = teacher.encode_texts(&[
            "a photo of a alpha".to_string(),
            "a photo of a beta".to_string(),
        ])?;
        let mut rng = StreamRng::new(seed, "gradcheck:models");
        let z = rng.normal_mat(3, dims.latent_dim);
        let real = rng.normal_mat(3, dims.image_len()).map(|x| x.tanh());
        let draw = sample_augment(AugmentPolicy::Basic, dims.image_size, &mut rng)
            .expect("basic policy always draws");
        let real_aug = apply_augment_value(&real, &draw, dims.img_shape());
        let teacher_real = teacher.encode_images_value(&real_aug)?;
        let fake_base = generator.generate_value(&z, None)?;
        let fake_base = apply_augment_value(&fake_base, &draw, dims.img_shape());
        let student_proj_base = discriminator
            .discriminate_value(&fake_base, None)?
            .projected;
        Ok(ComposedFixture {
            dims,
            generator,
            discriminator,
            teacher,
            texts,
            z,
            real_aug,
            teacher_real,
            student_proj_base,
            draw,
        })
    }

    /// Discriminator objective: logistic adversarial + gated-open mimicry +
    /// correlation distillation, exactly as one training step assembles it.
    /// Returns the graph with the trainable side's binding and the smallest
    /// kink margin across all L1 terms.
    fn d_graph(&self, gp: &ParamSet, dp: &ParamSet) -> (Tape, TapeBinding, Var, f64) {
        let gen = Generator {
            dims: self.dims.clone(),
            params: gp.clone(),
        };
        let disc = Discriminator {
            dims: self.dims.clone(),
            params: dp.clone(),
        };
        let mut tape = Tape::new();
        let gb = gen.params.bind(&mut tape, false);
        let db = disc.params.bind(&mut tape, true);
        let zv = tape.constant(self.z.clone());
        let fake = gen.forward(&mut tape, &gb, zv, None);
        let fake = apply_augment_tape(&mut tape, fake, &self.draw, self.dims.img_shape());
        let realv = tape.constant(self.real_aug.clone());
        let d_real = disc.forward(&mut tape, &db, realv, None);
        let d_fake = disc.forward(&mut tape, &db, fake, None);
        let adv = d_adv_on_tape(&mut tape, d_real.scores, d_fake.scores, DAdvKind::Logistic);
        let tf = self.teacher.encode_images(&mut tape, fake);
        let tr = tape.constant(self.teacher_real.clone());
        let agkd = agkd_on_tape(&mut tape, tr, tf, d_real.projected, d_fake.projected, true);
        let mut loss = tape.add(adv, agkd.l_total);
        let txt = tape.constant(self.texts.clone());
        let cgkd = cgkd_on_tape(
            &mut tape,
            tf,
            d_fake.projected,
            txt,
            CgkdTapeOptions::default(),
        );
        loss = tape.add(loss, cgkd.l_kd);

        let margin = [
            (tr, d_real.projected),
            (tf, d_fake.projected),
            (tr, d_fake.projected),
            (tf, d_real.projected),
            (cgkd.c_t, cgkd.c_s),
        ]
        .iter()
        .map(|&(a, b)| min_abs_diff(tape.value(a), tape.value(b)))
        .fold(f64::INFINITY, f64::min);
        (tape, db, loss, margin)
    }

    /// Generator objective: non-saturating adversarial + correlation
    /// diversity + the distillation term routed through the teacher path.
    ///
    /// A training step stop-grads the live student projection here; that is
    /// gradient-identical to feeding its base value as a constant, and the
    /// constant form keeps the finite-difference probe from differentiating
    /// the severed path when it recomputes the graph at perturbed parameters.
    fn g_graph(&self, gp: &ParamSet, dp: &ParamSet) -> (Tape, TapeBinding, Var, f64) {
        let gen = Generator {
            dims: self.dims.clone(),
            params: gp.clone(),
        };
        let disc = Discriminator {
            dims: self.dims.clone(),
            params: dp.clone(),
        };
        let mut tape = Tape::new();
        let gb = gen.params.bind(&mut tape, true);
        let db = disc.params.bind(&mut tape, false);
        let zv = tape.constant(self.z.clone());
        let fake = gen.forward(&mut tape, &gb, zv, None);
        let fake = apply_augment_tape(&mut tape, fake, &self.draw, self.dims.img_shape());
        let d_fake = disc.forward(&mut tape, &db, fake, None);
        let adv = g_adv_on_tape(&mut tape, d_fake.scores, GAdvKind::LogisticNonSaturating);
        let tf = self.teacher.encode_images(&mut tape, fake);
        let txt = tape.constant(self.texts.clone());
        let sf = tape.constant(self.student_proj_base.clone());
        let cgkd = cgkd_on_tape(&mut tape, tf, sf, txt, CgkdTapeOptions::default());
        let mut loss = tape.add(adv, cgkd.l_pd);
        loss = tape.add(loss, cgkd.l_kd);

        let margin = min_abs_diff(tape.value(cgkd.c_t), tape.value(cgkd.c_s));
        (tape, gb, loss, margin)
    }
}

fn min_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Seeded sample of (parameter entry, coordinate) probes.
fn sample_coords(rng: &mut StreamRng, params: &ParamSet, count: usize) -> Vec<(usize, usize)> {
    (0..count)
        .map(|_| {
            let e = rng.below(params.entries().len());
            let c = rng.below(params.entries()[e].1.len());
            (e, c)
        })
        .collect()
}

/// Parameter-level verification through the full composed objectives: each
/// network's gradient is spot-checked at sampled coordinates against a
/// central difference of the whole forward recomputation.
pub fn check_models(seed: u64) -> Result<GradCheckReport> {
    let mut fixture = None;
    for attempt in 0..50 {
        let f = ComposedFixture::build(seed.wrapping_add(attempt))?;
        let (_, _, _, dm) = f.d_graph(&f.generator.params, &f.discriminator.params);
        let (_, _, _, gm) = f.g_graph(&f.generator.params, &f.discriminator.params);
        if dm >= KINK_MARGIN && gm >= KINK_MARGIN {
            fixture = Some(f);
            break;
        }
    }
    let fixture = fixture
        .ok_or_else(|| KdError::degenerate("no kink-free composed fixture found in 50 attempts"))?;

    let mut rng = StreamRng::new(seed, "gradcheck:models:coords");
    let mut report = GradCheckReport::new();
    let gp = fixture.generator.params.clone();
    let dp = fixture.discriminator.params.clone();

    for (net, params) in [("d", &dp), ("g", &gp)] {
        let coords = sample_coords(&mut rng, params, 10);
        let (tape, binding, loss, _) = if net == "d" {
            fixture.d_graph(&gp, &dp)
        } else {
            fixture.g_graph(&gp, &dp)
        };
        let grads = tape.backward(loss);
        for (e, c) in coords {
            let name = params.entries()[e].0.clone();
            let analytic = grads
                .get(binding.var(&name))
                .map(|g| g.data()[c])
                .unwrap_or(0.0);
            let probe = |delta: f64| -> f64 {
                let mut p = params.clone();
                p.entries_mut()[e].1.data_mut()[c] += delta;
                let (tape, _, loss, _) = if net == "d" {
                    fixture.d_graph(&gp, &p)
                } else {
                    fixture.g_graph(&p, &dp)
                };
                tape.value(loss).get(0, 0)
            };
            let numeric = (probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP);
            report.record(
                &format!("models:{}:{}[{}]", net, name, c),
                &[analytic],
                &[numeric],
            );
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_family_passes_its_tolerance() {
        let reports = run_checks(CheckModule::All, 0).unwrap();
        let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["agkd", "cgkd", "adv", "models"]);
        for r in &reports {
            assert!(
                r.passed(),
                "{} failed: max rel error {} over tolerance {}",
                r.name,
                r.report.max_rel_error,
                r.tolerance
            );
            assert!(!r.report.per_parameter_errors.is_empty());
        }
    }

    #[test]
    fn module_selection_parses_and_rejects() {
        assert_eq!(CheckModule::parse("all").unwrap(), CheckModule::All);
        assert_eq!(CheckModule::parse("agkd").unwrap(), CheckModule::Agkd);
        assert_eq!(CheckModule::parse("cgkd").unwrap(), CheckModule::Cgkd);
        assert_eq!(CheckModule::parse("adv").unwrap(), CheckModule::Adv);
        assert!(CheckModule::parse("ADV").is_err());
        assert!(CheckModule::parse("models ").is_err());
    }

    #[test]
    fn single_module_runs_produce_one_report() {
        let reports = run_checks(CheckModule::Cgkd, 3).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].name, "cgkd");
        assert!(reports[0].passed());
    }

    #[test]
    fn checks_are_deterministic_in_the_seed() {
        let a = run_checks(CheckModule::Adv, 9).unwrap();
        let b = run_checks(CheckModule::Adv, 9).unwrap();
        assert_eq!(
            a[0].report.max_rel_error.to_bits(),
            b[0].report.max_rel_error.to_bits()
        );
    }
}
