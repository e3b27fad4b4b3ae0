//! Desk-scale generator/discriminator pairs.
//!
//! Two architectures share one interface: a dense pair for small smoke-test
//! images and a three-block convolutional pair for 32x32 images. The
//! discriminator exposes its pre-score features ("last layer features") and a
//! trainable linear projection of them into the teacher dimension, row
//! normalized to mirror the teacher boundary.
//!
//! All activations are tanh: bounded outputs for the generator contract and
//! smooth gradients for the finite-difference checks.

use std::collections::BTreeMap;

use crate::autodiff::{ConvShape, ImgShape, Tape, Var};
use crate::error::{KdError, Result};
use crate::mat::Mat;
use crate::rng::{StreamRng, STREAM_INIT_D, STREAM_INIT_G};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Dense,
    Conv,
}

/// Shared shape parameters for one generator/discriminator pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub image_size: usize,
    pub channels: usize,
    pub latent_dim: usize,
    pub conditional: bool,
    /// Number of classes; required at least 2 in conditional mode.
    pub num_classes: usize,
    /// Discriminator feature width F (pre-projection).
    pub feature_dim_f: usize,
    /// Teacher feature dimension M the projection maps into.
    pub teacher_dim: usize,
    /// Hidden width of the dense architecture.
    pub hidden_dim: usize,
    /// Channel base of the convolutional architecture.
    pub conv_base: usize,
}

impl ModelDims {
    /// 32x32 images use the convolutional pair; smaller sizes the dense pair.
    pub fn arch(&self) -> Arch {
        if self.image_size >= 16 {
            Arch::Conv
        } else {
            Arch::Dense
        }
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.image_size * self.image_size
    }

    pub fn img_shape(&self) -> ImgShape {
        ImgShape {
            c: self.channels,
            h: self.image_size,
            w: self.image_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.arch() {
            Arch::Dense => {
                if !(2..=16).contains(&self.image_size) {
                    return Err(KdError::invalid(format!(
                        "model: dense image_size {} outside 2..=16",
                        self.image_size
                    )));
                }
            }
            Arch::Conv => {
                if self.image_size != 32 {
                    return Err(KdError::invalid(format!(
                        "model: convolutional pair supports image_size 32, got {}",
                        self.image_size
                    )));
                }
                if self.conv_base == 0 {
                    return Err(KdError::invalid("model: conv_base must be positive"));
                }
            }
        }
        if self.channels == 0
            || self.latent_dim == 0
            || self.feature_dim_f == 0
            || self.hidden_dim == 0
        {
            return Err(KdError::invalid(
                "model: channels, latent_dim, feature_dim_F and hidden_dim must be positive",
            ));
        }
        if self.teacher_dim < 2 {
            return Err(KdError::invalid(
                "model: teacher feature dimension must be at least 2",
            ));
        }
        if self.conditional && self.num_classes < 2 {
            return Err(KdError::invalid(
                "model: conditional mode needs at least 2 classes",
            ));
        }
        Ok(())
    }

    fn g_input_dim(&self) -> usize {
        self.latent_dim
            + if self.conditional {
                self.num_classes
            } else {
                0
            }
    }

    fn d_input_cols_dense(&self) -> usize {
        self.image_len()
            + if self.conditional {
                self.num_classes
            } else {
                0
            }
    }

    fn d_input_channels_conv(&self) -> usize {
        self.channels
            + if self.conditional {
                self.num_classes
            } else {
                0
            }
    }
}

/// Ordered, named parameter matrices of one network.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Mat)>,
}

impl ParamSet {
    fn new() -> ParamSet {
        ParamSet {
            entries: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, m: Mat) {
        debug_assert!(self.get(name).is_none(), "duplicate parameter {}", name);
        self.entries.push((name.to_string(), m));
    }

    pub fn entries(&self) -> &[(String, Mat)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, Mat)] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    pub fn set(&mut self, name: &str, m: Mat) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some((_, slot)) => *slot = m,
            None => self.entries.push((name.to_string(), m)),
        }
    }

    /// Total scalar count across all matrices.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    /// Order-sensitive hash over names and raw element bytes.
    pub fn hash_bits(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for (name, m) in &self.entries {
            for b in name.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            h ^= m.hash_bits();
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    /// Inserts every parameter into the tape, as trainable leaves or
    /// constants, and returns the name-to-var binding.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> TapeBinding {
        let mut vars = BTreeMap::new();
        for (name, m) in &self.entries {
            let v = if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            };
            vars.insert(name.clone(), v);
        }
        TapeBinding { vars }
    }
}

/// Name-to-var map of one network's parameters on a tape.
pub struct TapeBinding {
    vars: BTreeMap<String, Var>,
}

impl TapeBinding {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {}", name))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// One-hot label rows, the conditioning input both networks consume.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Mat> {
    let mut m = Mat::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(KdError::invalid(format!(
                "label {} at index {} outside 0..{}",
                l, i, num_classes
            )));
        }
        m.set(i, l, 1.0);
    }
    Ok(m)
}

fn check_labels(dims: &ModelDims, batch: usize, labels: Option<&[usize]>) -> Result<()> {
    match (dims.conditional, labels) {
        (true, None) => Err(KdError::invalid("conditional model requires labels")),
        (false, Some(_)) => Err(KdError::invalid(
            "unconditional model does not accept labels",
        )),
        (true, Some(l)) if l.len() != batch => Err(KdError::invalid(format!(
            "labels length {} does not match batch {}",
            l.len(),
            batch
        ))),
        (true, Some(l)) => {
            if let Some(&bad) = l.iter().find(|&&x| x >= dims.num_classes) {
                return Err(KdError::invalid(format!(
                    "label {} outside 0..{}",
                    bad, dims.num_classes
                )));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn linear(tape: &mut Tape, x: Var, binding: &TapeBinding, name: &str) -> Var {
    let w = binding.var(&format!("{}.w", name));
    let b = binding.var(&format!("{}.b", name));
    let y = tape.matmul(x, w);
    tape.add_row_vec(y, b)
}

pub struct Generator {
    pub dims: ModelDims,
    pub params: ParamSet,
}

impl Generator {
    /// Maps latent rows (plus one-hot labels in conditional mode) to images
    /// in [-1, 1], recorded on the tape.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        z: Var,
        labels: Option<&[usize]>,
    ) -> Var {
        let batch = tape.value(z).rows();
        check_labels(&self.dims, batch, labels).expect("generator forward: label/mode mismatch");
        let input = match labels {
            Some(l) => {
                let oh = one_hot(l, self.dims.num_classes).expect("generator forward: bad labels");
                let oh = tape.constant(oh);
                tape.concat_cols(z, oh)
            }
            None => z,
        };
        match self.dims.arch() {
            Arch::Dense => {
                let h = linear(tape, input, binding, "fc1");
                let h = tape.tanh(h);
                let h = linear(tape, h, binding, "fc2");
                let h = tape.tanh(h);
                let out = linear(tape, h, binding, "fc3");
                tape.tanh(out)
            }
            Arch::Conv => {
                let base = self.dims.conv_base;
                let h = linear(tape, input, binding, "fc");
                let h = tape.tanh(h);
                // Rows are already channel-major 4x4 maps of 4*base channels.
                let mut x = h;
                let mut shape = ImgShape {
                    c: base * 4,
                    h: 4,
                    w: 4,
                };
                for (i, cout) in [base * 2, base, self.dims.channels].iter().enumerate() {
                    x = tape.upsample2x(x, shape);
                    shape = ImgShape {
                        c: shape.c,
                        h: shape.h * 2,
                        w: shape.w * 2,
                    };
                    let conv = ConvShape {
                        cin: shape.c,
                        h: shape.h,
                        w: shape.w,
                        cout: *cout,
                        kh: 3,
                        kw: 3,
                        stride: 1,
                        pad: 1,
                    };
                    let w = binding.var(&format!("conv{}.w", i + 1));
                    let b = binding.var(&format!("conv{}.b", i + 1));
                    x = tape.conv2d(x, w, b, conv);
                    x = tape.tanh(x);
                    shape = ImgShape {
                        c: *cout,
                        h: shape.h,
                        w: shape.w,
                    };
                }
                x
            }
        }
    }

    /// Value-level generation through a scratch tape.
    pub fn generate_value(&self, z: &Mat, labels: Option<&[usize]>) -> Result<Mat> {
        if z.cols() != self.dims.latent_dim {
            return Err(KdError::invalid(format!(
                "generate: latent dim {} expected {}",
                z.cols(),
                self.dims.latent_dim
            )));
        }
        check_labels(&self.dims, z.rows(), labels)?;
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let out = self.forward(&mut tape, &binding, zv, labels);
        Ok(tape.value(out).clone())
    }
}

/// Tape nodes of one discriminator pass.
pub struct DiscOutVars {
    /// Logit column [B x 1].
    pub scores: Var,
    /// Pre-score features [B x F].
    pub features: Var,
    /// Row-normalized projection into the teacher dimension [B x M].
    pub projected: Var,
}

/// Value-level discriminator outputs.
pub struct DiscriminatorOutput {
    pub scores: Vec<f64>,
    pub features: Mat,
    pub projected: Mat,
}

pub struct Discriminator {
    pub dims: ModelDims,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        images: Var,
        labels: Option<&[usize]>,
    ) -> DiscOutVars {
        let batch = tape.value(images).rows();
        check_labels(&self.dims, batch, labels)
            .expect("discriminator forward: label/mode mismatch");
        assert_eq!(
            tape.value(images).cols(),
            self.dims.image_len(),
            "discriminator forward: image layout mismatch"
        );
        let features = match self.dims.arch() {
            Arch::Dense => {
                let input = match labels {
                    Some(l) => {
                        let oh = one_hot(l, self.dims.num_classes).expect("bad labels");
                        let oh = tape.constant(oh);
                        tape.concat_cols(images, oh)
                    }
                    None => images,
                };
                let h = linear(tape, input, binding, "fc1");
                let h = tape.tanh(h);
                let f = linear(tape, h, binding, "fc2");
                tape.tanh(f)
            }
            Arch::Conv => {
                let base = self.dims.conv_base;
                let size = self.dims.image_size;
                let input = match labels {
                    Some(l) => {
                        let planes =
                            label_planes(l, self.dims.num_classes, size).expect("bad labels");
                        let planes = tape.constant(planes);
                        tape.concat_cols(images, planes)
                    }
                    None => images,
                };
                let mut x = input;
                let mut cin = self.dims.d_input_channels_conv();
                let mut hw = size;
                for (i, cout) in [base, base * 2, base * 4].iter().enumerate() {
                    let conv = ConvShape {
                        cin,
                        h: hw,
                        w: hw,
                        cout: *cout,
                        kh: 3,
                        kw: 3,
                        stride: 2,
                        pad: 1,
                    };
                    let w = binding.var(&format!("conv{}.w", i + 1));
                    let b = binding.var(&format!("conv{}.b", i + 1));
                    x = tape.conv2d(x, w, b, conv);
                    x = tape.tanh(x);
                    cin = *cout;
                    hw /= 2;
                }
                let f = linear(tape, x, binding, "fc");
                tape.tanh(f)
            }
        };
        let scores = linear(tape, features, binding, "score");
        let proj_w = binding.var("proj.w");
        let projected = tape.matmul(features, proj_w);
        let projected = tape.row_normalize(projected);
        DiscOutVars {
            scores,
            features,
            projected,
        }
    }

    pub fn discriminate_value(
        &self,
        images: &Mat,
        labels: Option<&[usize]>,
    ) -> Result<DiscriminatorOutput> {
        if images.cols() != self.dims.image_len() {
            return Err(KdError::invalid(format!(
                "discriminate: image length {} expected {}",
                images.cols(),
                self.dims.image_len()
            )));
        }
        check_labels(&self.dims, images.rows(), labels)?;
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape, false);
        let iv = tape.constant(images.clone());
        let out = self.forward(&mut tape, &binding, iv, labels);
        Ok(DiscriminatorOutput {
            scores: tape.value(out.scores).data().to_vec(),
            features: tape.value(out.features).clone(),
            projected: tape.value(out.projected).clone(),
        })
    }
}

/// Expands one-hot labels into constant full-resolution channel planes for
/// the convolutional discriminator.
fn label_planes(labels: &[usize], num_classes: usize, size: usize) -> Result<Mat> {
    let oh = one_hot(labels, num_classes)?;
    let plane = size * size;
    let mut m = Mat::zeros(labels.len(), num_classes * plane);
    for b in 0..labels.len() {
        for k in 0..num_classes {
            let v = oh.get(b, k);
            if v != 0.0 {
                let row = m.row_mut(b);
                for p in 0..plane {
                    row[k * plane + p] = v;
                }
            }
        }
    }
    Ok(m)
}

fn glorot(rng: &mut StreamRng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Mat {
    let scale = (2.0 / (fan_in + fan_out) as f64).sqrt();
    rng.normal_mat(rows, cols).scale(scale)
}

/// Builds both networks with deterministic, seed-derived initialization.
pub fn init_params(dims: &ModelDims, seed: u64) -> Result<(Generator, Discriminator)> {
    dims.validate()?;
    let mut g_rng = StreamRng::new(seed, STREAM_INIT_G);
    let mut d_rng = StreamRng::new(seed, STREAM_INIT_D);

    let mut g = ParamSet::new();
    let mut d = ParamSet::new();
    match dims.arch() {
        Arch::Dense => {
            let (zin, h, img) = (dims.g_input_dim(), dims.hidden_dim, dims.image_len());
            g.push("fc1.w", glorot(&mut g_rng, zin, h, zin, h));
            g.push("fc1.b", Mat::zeros(1, h));
            g.push("fc2.w", glorot(&mut g_rng, h, h, h, h));
            g.push("fc2.b", Mat::zeros(1, h));
            g.push("fc3.w", glorot(&mut g_rng, h, img, h, img));
            g.push("fc3.b", Mat::zeros(1, img));

            let din = dims.d_input_cols_dense();
            let f = dims.feature_dim_f;
            d.push("fc1.w", glorot(&mut d_rng, din, h, din, h));
            d.push("fc1.b", Mat::zeros(1, h));
            d.push("fc2.w", glorot(&mut d_rng, h, f, h, f));
            d.push("fc2.b", Mat::zeros(1, f));
        }
        Arch::Conv => {
            let base = dims.conv_base;
            let zin = dims.g_input_dim();
            let fc_out = base * 4 * 16;
            g.push("fc.w", glorot(&mut g_rng, zin, fc_out, zin, fc_out));
            g.push("fc.b", Mat::zeros(1, fc_out));
            let chain = [
                (base * 4, base * 2),
                (base * 2, base),
                (base, dims.channels),
            ];
            for (i, (cin, cout)) in chain.iter().enumerate() {
                let k = cin * 9;
                g.push(
                    &format!("conv{}.w", i + 1),
                    glorot(&mut g_rng, *cout, k, k, cout * 9),
                );
                g.push(&format!("conv{}.b", i + 1), Mat::zeros(1, *cout));
            }

            let dcin = dims.d_input_channels_conv();
            let chain = [(dcin, base), (base, base * 2), (base * 2, base * 4)];
            for (i, (cin, cout)) in chain.iter().enumerate() {
                let k = cin * 9;
                d.push(
                    &format!("conv{}.w", i + 1),
                    glorot(&mut d_rng, *cout, k, k, cout * 9),
                );
                d.push(&format!("conv{}.b", i + 1), Mat::zeros(1, *cout));
            }
            let flat = base * 4 * 16;
            let f = dims.feature_dim_f;
            d.push("fc.w", glorot(&mut d_rng, flat, f, flat, f));
            d.push("fc.b", Mat::zeros(1, f));
        }
    }
    let f = dims.feature_dim_f;
    d.push("score.w", glorot(&mut d_rng, f, 1, f, 1));
    d.push("score.b", Mat::zeros(1, 1));
    d.push(
        "proj.w",
        glorot(&mut d_rng, f, dims.teacher_dim, f, dims.teacher_dim),
    );

    Ok((
        Generator {
            dims: dims.clone(),
            params: g,
        },
        Discriminator {
            dims: dims.clone(),
            params: d,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_gradient;

    fn dense_dims() -> ModelDims {
        ModelDims {
            image_size: 8,
            channels: 1,
            latent_dim: 6,
            conditional: false,
            num_classes: 0,
            feature_dim_f: 10,
            teacher_dim: 7,
            hidden_dim: 12,
            conv_base: 2,
        }
    }

    fn conv_dims() -> ModelDims {
        ModelDims {
            image_size: 32,
            channels: 3,
            latent_dim: 4,
            conditional: false,
            num_classes: 0,
            feature_dim_f: 6,
            teacher_dim: 5,
            hidden_dim: 8,
            conv_base: 2,
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let (g1, d1) = init_params(&dense_dims(), 3).unwrap();
        let (g2, d2) = init_params(&dense_dims(), 3).unwrap();
        assert_eq!(g1.params.hash_bits(), g2.params.hash_bits());
        assert_eq!(d1.params.hash_bits(), d2.params.hash_bits());

        let (g3, d3) = init_params(&dense_dims(), 4).unwrap();
        assert_ne!(g1.params.hash_bits(), g3.params.hash_bits());
        assert_ne!(d1.params.hash_bits(), d3.params.hash_bits());
    }

    #[test]
    fn dense_parameter_count_matches_the_layer_arithmetic() {
        let dims = dense_dims();
        let (g, d) = init_params(&dims, 1).unwrap();
        let (z, h, img, f, m) = (6, 12, 64, 10, 7);
        let g_expect = (z * h + h) + (h * h + h) + (h * img + img);
        let d_expect = (img * h + h) + (h * f + f) + (f + 1) + f * m;
        assert_eq!(g.params.num_scalars(), g_expect);
        assert_eq!(d.params.num_scalars(), d_expect);
    }

    #[test]
    fn conv_parameter_count_matches_the_layer_arithmetic() {
        let dims = conv_dims();
        let (g, d) = init_params(&dims, 1).unwrap();
        let base = 2;
        let fc = 4 * base * 4 * 16 + base * 4 * 16;
        let convs_g = (base * 2) * (base * 4 * 9)
            + base * 2
            + base * (base * 2 * 9)
            + base
            + 3 * (base * 9)
            + 3;
        assert_eq!(g.params.num_scalars(), fc + convs_g);

        let convs_d = base * (3 * 9)
            + base
            + (base * 2) * (base * 9)
            + base * 2
            + (base * 4) * (base * 2 * 9)
            + base * 4;
        let (f, m) = (6, 5);
        let d_expect = convs_d + (base * 4 * 16 * f + f) + (f + 1) + f * m;
        assert_eq!(d.params.num_scalars(), d_expect);
    }

    #[test]
    fn generated_images_stay_in_range() {
        let (g, _) = init_params(&dense_dims(), 5).unwrap();
        let mut rng = StreamRng::new(1, "test");
        let z = rng.normal_mat(1000, 6);
        let imgs = g.generate_value(&z, None).unwrap();
        assert!(imgs.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn generation_is_deterministic() {
        let (g, _) = init_params(&dense_dims(), 5).unwrap();
        let mut rng = StreamRng::new(2, "test");
        let z = rng.normal_mat(3, 6);
        let a = g.generate_value(&z, None).unwrap();
        let b = g.generate_value(&z, None).unwrap();
        assert_eq!(a.hash_bits(), b.hash_bits());
    }

    #[test]
    fn generator_gradient_matches_finite_differences_on_a_parameter() {
        let dims = dense_dims();
        let (g, _) = init_params(&dims, 6).unwrap();
        let mut rng = StreamRng::new(3, "test");
        let z = rng.normal_mat(2, 6);

        let mut tape = Tape::new();
        let binding = g.params.bind(&mut tape, true);
        let zv = tape.constant(z.clone());
        let imgs = g.forward(&mut tape, &binding, zv, None);
        let loss = tape.mean(imgs);
        let grads = tape.backward(loss);
        let analytic = grads.get(binding.var("fc2.w")).unwrap().clone();

        let base = g.params.get("fc2.w").unwrap().clone();
        // Check three spread-out coordinates to keep the test fast.
        for idx in [0usize, 37, base.len() - 1] {
            let numeric = finite_diff_gradient(
                |t| {
                    let mut gp = Generator {
                        dims: dims.clone(),
                        params: g.params.clone(),
                    };
                    let mut m = base.clone();
                    m.data_mut()[idx] = t[0];
                    gp.params.set("fc2.w", m);
                    gp.generate_value(&z, None).unwrap().mean()
                },
                &[base.data()[idx]],
                1e-5,
            )
            .unwrap();
            let a = analytic.data()[idx];
            let rel = (a - numeric[0]).abs() / a.abs().max(numeric[0].abs()).max(1e-3);
            assert!(
                rel < 1e-4,
                "coord {}: analytic {} numeric {}",
                idx,
                a,
                numeric[0]
            );
        }
    }

    #[test]
    fn projected_rows_are_unit_norm_and_scores_deterministic() {
        let (_, d) = init_params(&dense_dims(), 7).unwrap();
        let mut rng = StreamRng::new(4, "test");
        let imgs = rng.normal_mat(5, 64).map(f64::tanh);
        let out1 = d.discriminate_value(&imgs, None).unwrap();
        let out2 = d.discriminate_value(&imgs, None).unwrap();
        assert_eq!(out1.scores, out2.scores);
        for r in 0..out1.projected.rows() {
            let n: f64 = out1
                .projected
                .row(r)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!((n - 1.0).abs() < 1e-6, "row {} norm {}", r, n);
        }
    }

    #[test]
    fn projection_weights_change_projected_but_not_scores() {
        let dims = dense_dims();
        let (_, mut d) = init_params(&dims, 8).unwrap();
        let mut rng = StreamRng::new(5, "test");
        let imgs = rng.normal_mat(3, 64).map(f64::tanh);
        let before = d.discriminate_value(&imgs, None).unwrap();

        let perturbed = d.params.get("proj.w").unwrap().map(|v| v + 0.25);
        d.params.set("proj.w", perturbed);
        let after = d.discriminate_value(&imgs, None).unwrap();

        assert_eq!(before.scores, after.scores);
        assert_ne!(before.projected.hash_bits(), after.projected.hash_bits());
    }

    #[test]
    fn label_mode_mismatches_are_rejected() {
        let mut dims = dense_dims();
        let (g_unc, d_unc) = init_params(&dims, 9).unwrap();
        dims.conditional = true;
        dims.num_classes = 4;
        let (g_cond, d_cond) = init_params(&dims, 9).unwrap();

        let mut rng = StreamRng::new(6, "test");
        let z = rng.normal_mat(2, 6);
        let imgs = rng.normal_mat(2, 64).map(f64::tanh);

        assert!(g_unc.generate_value(&z, Some(&[0, 1])).is_err());
        assert!(g_cond.generate_value(&z, None).is_err());
        assert!(g_cond.generate_value(&z, Some(&[0])).is_err());
        assert!(g_cond.generate_value(&z, Some(&[0, 9])).is_err());
        assert!(g_cond.generate_value(&z, Some(&[0, 3])).is_ok());

        assert!(d_unc.discriminate_value(&imgs, Some(&[0, 1])).is_err());
        assert!(d_cond.discriminate_value(&imgs, None).is_err());
        assert!(d_cond.discriminate_value(&imgs, Some(&[1, 2])).is_ok());
    }

    #[test]
    fn changing_a_label_changes_the_generated_image() {
        let mut dims = dense_dims();
        dims.conditional = true;
        dims.num_classes = 4;
        let (g, _) = init_params(&dims, 10).unwrap();
        let mut rng = StreamRng::new(7, "test");
        let z = rng.normal_mat(1, 6);
        let a = g.generate_value(&z, Some(&[0])).unwrap();
        let b = g.generate_value(&z, Some(&[3])).unwrap();
        let diff: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn conv_pair_shapes_and_ranges() {
        let dims = conv_dims();
        let (g, d) = init_params(&dims, 11).unwrap();
        let mut rng = StreamRng::new(8, "test");
        let z = rng.normal_mat(2, 4);
        let imgs = g.generate_value(&z, None).unwrap();
        assert_eq!(imgs.rows(), 2);
        assert_eq!(imgs.cols(), 3 * 32 * 32);
        assert!(imgs.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));

        let out = d.discriminate_value(&imgs, None).unwrap();
        assert_eq!(out.scores.len(), 2);
        assert_eq!(out.features.cols(), 6);
        assert_eq!(out.projected.cols(), 5);
        for r in 0..out.projected.rows() {
            let n: f64 = out
                .projected
                .row(r)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_generator_gradient_spot_check() {
        let dims = conv_dims();
        let (g, _) = init_params(&dims, 12).unwrap();
        let mut rng = StreamRng::new(9, "test");
        let z = rng.normal_mat(1, 4);

        let mut tape = Tape::new();
        let binding = g.params.bind(&mut tape, true);
        let zv = tape.constant(z.clone());
        let imgs = g.forward(&mut tape, &binding, zv, None);
        let loss = tape.mean(imgs);
        let grads = tape.backward(loss);
        let analytic = grads.get(binding.var("conv2.w")).unwrap().clone();

        let base = g.params.get("conv2.w").unwrap().clone();
        for idx in [0usize, base.len() / 2] {
            let numeric = finite_diff_gradient(
                |t| {
                    let mut gp = Generator {
                        dims: dims.clone(),
                        params: g.params.clone(),
                    };
                    let mut m = base.clone();
                    m.data_mut()[idx] = t[0];
                    gp.params.set("conv2.w", m);
                    gp.generate_value(&z, None).unwrap().mean()
                },
                &[base.data()[idx]],
                1e-5,
            )
            .unwrap();
            let a = analytic.data()[idx];
            let rel = (a - numeric[0]).abs() / a.abs().max(numeric[0].abs()).max(1e-3);
            assert!(rel < 1e-4, "coord {}: {} vs {}", idx, a, numeric[0]);
        }
    }

    #[test]
    fn validation_rejects_bad_dims() {
        let mut dims = dense_dims();
        dims.teacher_dim = 1;
        assert!(init_params(&dims, 1).is_err());

        let mut dims = conv_dims();
        dims.image_size = 24;
        assert!(dims.validate().is_err());

        let mut dims = dense_dims();
        dims.conditional = true;
        dims.num_classes = 1;
        assert!(dims.validate().is_err());
    }
}
