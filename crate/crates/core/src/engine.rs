//! Alternating-update training engine.
//!
//! One training step runs `d_steps_per_g_step` discriminator updates and one
//! generator update. Stochastic draws are split over named streams so every
//! switchable term consumes randomness only while active: disabling a module
//! leaves all other draws, and therefore the adversarial trajectory,
//! bit-identical.
//!
//! Per step: the aggregation gate is sampled once, one augmentation transform
//! is drawn and shared by the real and fake batches, and the teacher encoding
//! of the real batch is computed once and reused.

use std::collections::BTreeMap;

use crate::adversarial::{d_adv_on_tape, g_adv_on_tape};
use crate::agkd::{agkd_on_tape, sample_gate, GateConfig};
use crate::autodiff::{Gradients, Tape, Var};
use crate::cgkd::{cgkd_on_tape, CgkdTapeOptions};
use crate::config::{DataFormat, OptimConfig, TrainConfig};
use crate::data::{
    apply_augment_tape, apply_augment_value, load_subset, make_synthetic_modes, mode_templates,
    sample_augment, AugmentDraw, AugmentPolicy, Dataset, SyntheticModesSpec,
};
use crate::error::{KdError, Result};
use crate::mat::Mat;
use crate::metrics::{
    feature_stats, frechet_distance, inception_style_score, mode_coverage, perceptual_diversity,
    template_softmax_probs,
};
use crate::models::{init_params, Discriminator, Generator, ParamSet};
use crate::rng::{
    StreamHub, STREAM_AUGMENT, STREAM_BATCH, STREAM_EVAL, STREAM_GATE, STREAM_GRID, STREAM_NOISE,
};
use crate::teacher::{texts_from_labels, PromptTemplate, TeacherHub, TeacherModel, TeacherRequest};

/// Adaptive-moment optimizer state for one parameter set; slot order mirrors
/// the parameter entry order.
pub struct Adam {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Adam {
        let zeros: Vec<Mat> = params
            .entries()
            .iter()
            .map(|(_, p)| Mat::zeros(p.rows(), p.cols()))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn slots(&self) -> (&[Mat], &[Mat]) {
        (&self.m, &self.v)
    }

    /// Rebuilds optimizer state (checkpoint restore); slot shapes must match
    /// the parameter set.
    pub fn from_parts(params: &ParamSet, m: Vec<Mat>, v: Vec<Mat>, t: u64) -> Result<Adam> {
        if m.len() != params.entries().len() || v.len() != params.entries().len() {
            return Err(KdError::invalid("optimizer state entry count mismatch"));
        }
        for (i, (name, p)) in params.entries().iter().enumerate() {
            if !p.same_shape(&m[i]) || !p.same_shape(&v[i]) {
                return Err(KdError::shape(format!(
                    "optimizer slot shape mismatch for {}",
                    name
                )));
            }
        }
        Ok(Adam { m, v, t })
    }

    /// One update over all parameters; entries without a gradient are left
    /// untouched. The step counter advances once per call.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Mat>], cfg: &OptimConfig) {
        assert_eq!(grads.len(), self.m.len(), "gradient list length mismatch");
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let theta = &mut params.entries_mut()[i].1;
            for j in 0..g.len() {
                let gj = g.data()[j];
                let mj = cfg.beta1 * m.data()[j] + (1.0 - cfg.beta1) * gj;
                let vj = cfg.beta2 * v.data()[j] + (1.0 - cfg.beta2) * gj * gj;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                let update = cfg.lr * (mj / bc1) / ((vj / bc2).sqrt() + cfg.eps);
                theta.data_mut()[j] -= update;
            }
        }
    }
}

/// Everything a run owns: data, networks, teacher, optimizer and streams.
pub struct EngineState {
    pub config: TrainConfig,
    pub dataset: Dataset,
    /// Noise-free mode prototypes when the dataset is synthetic.
    pub templates: Option<Mat>,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub teacher: Box<dyn TeacherModel>,
    /// Encoded class prompts [K x M].
    pub text_features: Mat,
    pub hub: StreamHub,
    pub adam_g: Adam,
    pub adam_d: Adam,
    /// Completed training steps.
    pub step: u64,
}

/// Loss components and diagnostics of one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub components: BTreeMap<String, f64>,
}

/// Builds the in-memory dataset described by the config. Only the synthetic
/// format is constructed here; file-backed formats are read by the binary and
/// passed to [`EngineState::new`] directly.
pub fn dataset_from_config(cfg: &TrainConfig) -> Result<(Dataset, Option<Mat>)> {
    match cfg.data.format {
        DataFormat::SyntheticModes => {
            let spec = SyntheticModesSpec {
                num_modes: cfg.data.num_modes,
                samples_per_mode: cfg.data.samples_per_mode,
                image_size: cfg.model.image_size,
                jitter: cfg.data.jitter,
                seed: cfg.data.subset_seed,
            };
            let mut ds = make_synthetic_modes(&spec)?;
            override_class_names(&mut ds, cfg)?;
            let templates = mode_templates(cfg.data.num_modes, cfg.model.image_size)?;
            Ok((ds, Some(templates)))
        }
        DataFormat::ImageFolder | DataFormat::PackedBinary => Err(KdError::invalid(
            "file-backed datasets are loaded by the command-line binary, not from config alone",
        )),
    }
}

/// Replaces dataset class names with the configured override.
pub fn override_class_names(ds: &mut Dataset, cfg: &TrainConfig) -> Result<()> {
    if let Some(names) = &cfg.data.class_names {
        if names.len() != ds.class_names.len() {
            return Err(KdError::invalid(format!(
                "data.class_names has {} entries for {} classes",
                names.len(),
                ds.class_names.len()
            )));
        }
        ds.class_names = names.clone();
    }
    Ok(())
}

impl EngineState {
    /// Validates the config against the full dataset, applies the stratified
    /// subset, builds both networks, the teacher and the text features.
    /// Returns the state plus any subsetting warnings.
    pub fn new(
        config: TrainConfig,
        full_dataset: Dataset,
        templates: Option<Mat>,
    ) -> Result<(EngineState, Vec<String>)> {
        config.validate()?;
        full_dataset.validate()?;
        if full_dataset.image_size != config.model.image_size
            || full_dataset.channels != config.model.channels
        {
            return Err(KdError::invalid(format!(
                "dataset is {}x{}x{} but model expects {}x{}x{}",
                full_dataset.channels,
                full_dataset.image_size,
                full_dataset.image_size,
                config.model.channels,
                config.model.image_size,
                config.model.image_size
            )));
        }
        let (dataset, warnings) =
            load_subset(&full_dataset, config.data.fraction, config.data.subset_seed)?;
        let num_classes = dataset.num_classes();
        if config.model.conditional && num_classes < 2 {
            return Err(KdError::invalid(
                "conditional training needs at least 2 classes",
            ));
        }
        if config.cgkd.enabled && num_classes < 2 {
            return Err(KdError::invalid(
                "correlation distillation needs at least 2 classes for its text axis",
            ));
        }
        let dims = config.model_dims(num_classes);
        dims.validate()?;
        if dataset.len() < config.batch_size {
            return Err(KdError::degenerate(format!(
                "subset of {} samples is smaller than batch_size {}",
                dataset.len(),
                config.batch_size
            )));
        }

        let teacher = TeacherHub::new().build(&TeacherRequest {
            kind: config.teacher.kind.clone(),
            feature_dim: config.teacher.feature_dim,
            hidden_dim: config.teacher.hidden_dim,
            seed: config.teacher.seed,
            input_shape: (
                config.model.channels,
                config.model.image_size,
                config.model.image_size,
            ),
            checkpoint_path: config.teacher.checkpoint_path.clone(),
        })?;
        if teacher.feature_dim() != config.teacher.feature_dim {
            return Err(KdError::invalid(format!(
                "teacher reports feature dim {} but config says {}",
                teacher.feature_dim(),
                config.teacher.feature_dim
            )));
        }
        // Early shape probe: a mismatched teacher must fail at build time,
        // not in the middle of a training step.
        teacher.encode_images_value(&Mat::zeros(1, dims.image_len()))?;

        let template = PromptTemplate::new(&config.teacher.prompt_template)?;
        let texts = texts_from_labels(&dataset.class_names, &template)?;
        let text_features = teacher.encode_texts(&texts)?;

        let (generator, discriminator) = init_params(&dims, config.master_seed)?;
        let adam_g = Adam::new(&generator.params);
        let adam_d = Adam::new(&discriminator.params);
        let hub = StreamHub::new(config.master_seed);
        Ok((
            EngineState {
                config,
                dataset,
                templates,
                generator,
                discriminator,
                teacher,
                text_features,
                hub,
                adam_g,
                adam_d,
                step: 0,
            },
            warnings,
        ))
    }

    /// Convenience constructor for config-described (synthetic) datasets.
    pub fn from_config(config: TrainConfig) -> Result<(EngineState, Vec<String>)> {
        let (ds, templates) = dataset_from_config(&config)?;
        EngineState::new(config, ds, templates)
    }

    pub fn draw_real_batch(&mut self) -> (Mat, Vec<usize>) {
        self.dataset
            .draw_batch(self.config.batch_size, self.hub.stream(STREAM_BATCH))
    }

    fn active_flags(&self) -> ActiveTerms {
        let c = &self.config;
        let agkd = c.agkd.enabled && c.effective_w_agkd() != 0.0;
        let cgkd_kd = c.cgkd.enabled && c.effective_w_cgkd() != 0.0;
        let cgkd_pd = c.cgkd.enabled && c.effective_w_pd() != 0.0;
        ActiveTerms {
            agkd,
            cgkd_kd,
            cgkd_pd,
            cgkd_kd_to_g: cgkd_kd && c.loss.route_kd_to_g,
        }
    }

    /// One full training step on the given real batch. On success the step
    /// counter advances; a non-finite loss or gradient aborts with the
    /// component map collected so far and leaves parameters untouched by the
    /// failing update.
    pub fn train_step(&mut self, real_images: &Mat, real_labels: &[usize]) -> Result<StepMetrics> {
        let cfg = self.config.clone();
        let active = self.active_flags();
        let dims = self.generator.dims.clone();
        let shape = dims.img_shape();
        let policy: AugmentPolicy = cfg.data.augment.into();
        let labels: Option<&[usize]> = if dims.conditional {
            Some(real_labels)
        } else {
            None
        };
        let cgkd_opts = CgkdTapeOptions {
            ordered_pairs: cfg.cgkd.ordered_pairs,
            stop_teacher_grad_in_kd: cfg.cgkd.stop_teacher_grad_in_kd,
        };
        let mut components: BTreeMap<String, f64> = BTreeMap::new();

        // Per-step draws, in a frozen order: augmentation, then gate.
        let draw = sample_augment(policy, dims.image_size, self.hub.stream(STREAM_AUGMENT));
        let gate_open = if active.agkd {
            let mut gc = GateConfig {
                p: cfg.agkd.p,
                stream: self.hub.stream(STREAM_GATE),
            };
            Some(sample_gate(&mut gc))
        } else {
            None
        };

        let real_step = match &draw {
            Some(d) => apply_augment_value(real_images, d, shape),
            None => real_images.clone(),
        };
        // The teacher is frozen, so its view of the one real batch of this
        // step is computed once and reused across discriminator updates.
        let teacher_real: Option<Mat> = if active.agkd {
            Some(self.teacher.encode_images_value(&real_step)?)
        } else {
            None
        };

        for _ in 0..cfg.d_steps_per_g_step {
            let z = self
                .hub
                .stream(STREAM_NOISE)
                .normal_mat(cfg.batch_size, dims.latent_dim);
            let mut tape = Tape::new();
            let g_bind = self.generator.params.bind(&mut tape, false);
            let d_bind = self.discriminator.params.bind(&mut tape, true);
            let zv = tape.constant(z);
            let fake = self.generator.forward(&mut tape, &g_bind, zv, labels);
            let fake = maybe_augment(&mut tape, fake, &draw, shape);
            let realv = tape.constant(real_step.clone());
            let d_real = self
                .discriminator
                .forward(&mut tape, &d_bind, realv, labels);
            let d_fake = self.discriminator.forward(&mut tape, &d_bind, fake, labels);
            let adv_d = d_adv_on_tape(&mut tape, d_real.scores, d_fake.scores, cfg.adv.kind);
            let mut d_loss = adv_d;

            let teacher_fake = if active.agkd || active.cgkd_kd {
                Some(self.teacher.encode_images(&mut tape, fake))
            } else {
                None
            };
            if active.agkd {
                let tr = tape.constant(
                    teacher_real
                        .clone()
                        .expect("teacher_real set when agkd active"),
                );
                let vars = agkd_on_tape(
                    &mut tape,
                    tr,
                    teacher_fake.expect("teacher_fake set when agkd active"),
                    d_real.projected,
                    d_fake.projected,
                    gate_open.expect("gate sampled when agkd active"),
                );
                let weighted = tape.scale(vars.l_total, cfg.effective_w_agkd());
                d_loss = tape.add(d_loss, weighted);
                components.insert("l_agkd_kd".into(), tape.value(vars.l_kd).get(0, 0));
                components.insert("l_agkd_agg".into(), tape.value(vars.l_agg_raw).get(0, 0));
                components.insert("l_agkd".into(), tape.value(vars.l_total).get(0, 0));
                components.insert("gate_open".into(), if vars.gate_open { 1.0 } else { 0.0 });
            }
            if active.cgkd_kd {
                let txt = tape.constant(self.text_features.clone());
                let vars = cgkd_on_tape(
                    &mut tape,
                    teacher_fake.expect("teacher_fake set when cgkd active"),
                    d_fake.projected,
                    txt,
                    cgkd_opts,
                );
                let weighted = tape.scale(vars.l_kd, cfg.effective_w_cgkd());
                d_loss = tape.add(d_loss, weighted);
                components.insert("l_cgkd_kd".into(), tape.value(vars.l_kd).get(0, 0));
            }

            components.insert("l_d".into(), tape.value(adv_d).get(0, 0));
            components.insert("d_loss".into(), tape.value(d_loss).get(0, 0));
            check_finite(&components, self.step + 1, "discriminator loss")?;

            let grads = tape.backward(d_loss);
            let (d_grads, norm) = collect_grads(&self.discriminator.params, &d_bind, &grads);
            components.insert("grad_norm_d".into(), norm);
            check_finite(&components, self.step + 1, "discriminator gradient")?;
            self.adam_d
                .step(&mut self.discriminator.params, &d_grads, &cfg.optim.d);
        }

        {
            let z = self
                .hub
                .stream(STREAM_NOISE)
                .normal_mat(cfg.batch_size, dims.latent_dim);
            let mut tape = Tape::new();
            let g_bind = self.generator.params.bind(&mut tape, true);
            let d_bind = self.discriminator.params.bind(&mut tape, false);
            let zv = tape.constant(z);
            let fake = self.generator.forward(&mut tape, &g_bind, zv, labels);
            let fake = maybe_augment(&mut tape, fake, &draw, shape);
            let d_fake = self.discriminator.forward(&mut tape, &d_bind, fake, labels);
            let adv_g = g_adv_on_tape(&mut tape, d_fake.scores, cfg.adv.g_variant);
            let mut g_loss = adv_g;

            if active.cgkd_pd || active.cgkd_kd_to_g {
                let tf = self.teacher.encode_images(&mut tape, fake);
                let txt = tape.constant(self.text_features.clone());
                // The student correlation must not pull the generator; the
                // distillation gradient reaches G through the teacher path.
                let sf = tape.stop_grad(d_fake.projected);
                let vars = cgkd_on_tape(&mut tape, tf, sf, txt, cgkd_opts);
                if active.cgkd_pd {
                    let weighted = tape.scale(vars.l_pd, cfg.effective_w_pd());
                    g_loss = tape.add(g_loss, weighted);
                    components.insert("l_cgkd_pd".into(), tape.value(vars.l_pd).get(0, 0));
                }
                if active.cgkd_kd_to_g {
                    let weighted = tape.scale(vars.l_kd, cfg.effective_w_cgkd());
                    g_loss = tape.add(g_loss, weighted);
                    components.insert("l_cgkd_kd_g".into(), tape.value(vars.l_kd).get(0, 0));
                }
            }

            components.insert("l_g".into(), tape.value(adv_g).get(0, 0));
            components.insert("g_loss".into(), tape.value(g_loss).get(0, 0));
            check_finite(&components, self.step + 1, "generator loss")?;

            let grads = tape.backward(g_loss);
            let (g_grads, norm) = collect_grads(&self.generator.params, &g_bind, &grads);
            components.insert("grad_norm_g".into(), norm);
            check_finite(&components, self.step + 1, "generator gradient")?;
            self.adam_g
                .step(&mut self.generator.params, &g_grads, &cfg.optim.g);
        }

        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            components,
        })
    }

    /// Generates evaluation samples and scores them against the real subset.
    /// Returns metric rows plus non-fatal warnings.
    pub fn evaluate(&mut self) -> Result<(BTreeMap<String, f64>, Vec<String>)> {
        let n = self.config.eval_samples;
        let dims = self.generator.dims.clone();
        let z = self.hub.stream(STREAM_EVAL).normal_mat(n, dims.latent_dim);
        let labels: Option<Vec<usize>> = if dims.conditional {
            let stream = self.hub.stream(STREAM_EVAL);
            Some((0..n).map(|_| stream.below(dims.num_classes)).collect())
        } else {
            None
        };
        let generated = self.generator.generate_value(&z, labels.as_deref())?;

        let gen_feats = self.teacher.encode_images_value(&generated)?;
        let real_feats = self.teacher.encode_images_value(&self.dataset.images)?;
        let mut warnings = Vec::new();
        let m = self.teacher.feature_dim();
        if self.dataset.len() < m || n < m {
            warnings.push(format!(
                "feature statistics over {} real / {} generated samples in dimension {}; \
                 distance estimates are unreliable below one sample per dimension",
                self.dataset.len(),
                n,
                m
            ));
        }
        let stats_real = feature_stats(&real_feats)?;
        let stats_gen = feature_stats(&gen_feats)?;

        let mut rows = BTreeMap::new();
        rows.insert(
            "teacher_fid".to_string(),
            frechet_distance(&stats_real, &stats_gen)?,
        );
        rows.insert(
            "diversity".to_string(),
            perceptual_diversity(
                &gen_feats,
                self.config.eval_pairs,
                self.hub.stream(STREAM_EVAL),
            )?,
        );
        if let Some(templates) = &self.templates {
            let probs = template_softmax_probs(&generated, templates)?;
            rows.insert("is_style".to_string(), inception_style_score(&probs)?);
            let cov = mode_coverage(&generated, templates)?;
            rows.insert("mode_coverage".to_string(), cov.fraction());
            rows.insert("modes_covered".to_string(), cov.covered as f64);
        }
        for (name, v) in &rows {
            if !v.is_finite() {
                return Err(KdError::numeric(format!(
                    "evaluation metric {} is {}",
                    name, v
                )));
            }
        }
        Ok((rows, warnings))
    }

    /// Fixed-count sample sheet drawn from the dedicated grid stream. In
    /// conditional mode the labels cycle through the classes so every sheet
    /// shows all of them.
    pub fn sample_grid_images(&mut self, count: usize) -> Result<Mat> {
        let dims = self.generator.dims.clone();
        let z = self
            .hub
            .stream(STREAM_GRID)
            .normal_mat(count, dims.latent_dim);
        let labels: Option<Vec<usize>> = dims
            .conditional
            .then(|| (0..count).map(|i| i % dims.num_classes).collect());
        self.generator.generate_value(&z, labels.as_deref())
    }
}

struct ActiveTerms {
    agkd: bool,
    cgkd_kd: bool,
    cgkd_pd: bool,
    cgkd_kd_to_g: bool,
}

fn maybe_augment(
    tape: &mut Tape,
    images: Var,
    draw: &Option<AugmentDraw>,
    shape: crate::autodiff::ImgShape,
) -> Var {
    match draw {
        Some(d) => apply_augment_tape(tape, images, d, shape),
        None => images,
    }
}

fn check_finite(components: &BTreeMap<String, f64>, step: u64, what: &str) -> Result<()> {
    if components.values().all(|v| v.is_finite()) {
        return Ok(());
    }
    Err(KdError::numeric(format!(
        "non-finite {} at step {}; components: {:?}",
        what, step, components
    )))
}

/// Pulls gradients for every parameter in entry order and returns them with
/// the global gradient L2 norm.
fn collect_grads(
    params: &ParamSet,
    binding: &crate::models::TapeBinding,
    grads: &Gradients,
) -> (Vec<Option<Mat>>, f64) {
    let mut out = Vec::with_capacity(params.entries().len());
    let mut sq = 0.0;
    for (name, _) in params.entries() {
        let g = grads.get(binding.var(name)).cloned();
        if let Some(g) = &g {
            sq += g.data().iter().map(|x| x * x).sum::<f64>();
        }
        out.push(g);
    }
    (out, sq.sqrt())
}
