//! Frozen teacher abstraction: an image encoder producing [BxM] features and
//! a text encoder producing [KxM] label embeddings.
//!
//! All features leaving a teacher are row-L2-normalized, so downstream L1
//! matching and correlations are scale-free. Teachers are immutable after
//! construction; training must never change their outputs.

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::error::{KdError, Result};
use crate::mat::Mat;
use crate::numerics::{cosine, row_l2_normalize};
use crate::rng::StreamRng;

/// A frozen feature teacher.
///
/// `encode_images` records the encoder on the caller's tape with the teacher's
/// weights as constants: gradients flow through the image input (needed when
/// generated images pass through the teacher) but never into the teacher.
pub trait TeacherModel {
    /// Feature dimension M.
    fn feature_dim(&self) -> usize;

    /// Expected image layout (channels, height, width).
    fn input_shape(&self) -> (usize, usize, usize);

    /// Encodes a [B x C*H*W] image batch into row-normalized [B x M] features
    /// on the tape.
    fn encode_images(&self, tape: &mut Tape, images: Var) -> Var;

    /// Value-only convenience wrapper around `encode_images`.
    fn encode_images_value(&self, images: &Mat) -> Result<Mat> {
        let mut tape = Tape::new();
        let v = tape.constant(images.clone());
        let out = self.encode_images(&mut tape, v);
        Ok(tape.value(out).clone())
    }

    /// Encodes K distinct texts into a row-normalized [K x M] matrix.
    fn encode_texts(&self, texts: &[String]) -> Result<Mat>;
}

/// Construction parameters for the deterministic mock teacher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockTeacherSpec {
    pub seed: u64,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// (channels, height, width)
    pub input_shape: (usize, usize, usize),
}

/// Two-layer random projection: flatten -> linear -> tanh -> linear, then
/// row normalization at the boundary. Weights are a pure function of the
/// spec's seed, so the same spec always yields the same teacher.
pub struct MockTeacher {
    spec: MockTeacherSpec,
    w1: Mat,
    b1: Mat,
    w2: Mat,
    b2: Mat,
}

/// Builds the mock teacher, validating its dimensions.
pub fn build_mock_teacher(spec: &MockTeacherSpec) -> Result<MockTeacher> {
    if spec.feature_dim < 2 {
        return Err(KdError::invalid(format!(
            "mock teacher: feature_dim {} must be at least 2",
            spec.feature_dim
        )));
    }
    if spec.hidden_dim == 0 {
        return Err(KdError::invalid(
            "mock teacher: hidden_dim must be positive",
        ));
    }
    let (c, h, w) = spec.input_shape;
    let d = c * h * w;
    if d == 0 {
        return Err(KdError::invalid("mock teacher: empty input shape"));
    }
    let mut rng = StreamRng::new(spec.seed, "teacher:init");
    let s1 = (2.0 / (d + spec.hidden_dim) as f64).sqrt();
    let s2 = (2.0 / (spec.hidden_dim + spec.feature_dim) as f64).sqrt();
    Ok(MockTeacher {
        spec: spec.clone(),
        w1: rng.normal_mat(d, spec.hidden_dim).scale(s1),
        b1: rng.normal_mat(1, spec.hidden_dim).scale(0.1),
        w2: rng.normal_mat(spec.hidden_dim, spec.feature_dim).scale(s2),
        b2: rng.normal_mat(1, spec.feature_dim).scale(0.1),
    })
}

impl TeacherModel for MockTeacher {
    fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.spec.input_shape
    }

    fn encode_images(&self, tape: &mut Tape, images: Var) -> Var {
        let w1 = tape.constant(self.w1.clone());
        let b1 = tape.constant(self.b1.clone());
        let w2 = tape.constant(self.w2.clone());
        let b2 = tape.constant(self.b2.clone());
        let h = tape.matmul(images, w1);
        let h = tape.add_row_vec(h, b1);
        let h = tape.tanh(h);
        let f = tape.matmul(h, w2);
        let f = tape.add_row_vec(f, b2);
        tape.row_normalize(f)
    }

    fn encode_texts(&self, texts: &[String]) -> Result<Mat> {
        if texts.is_empty() {
            return Err(KdError::degenerate("encode_texts: no texts"));
        }
        let m = self.spec.feature_dim;
        let mut rows = Vec::with_capacity(texts.len());
        for text in texts {
            // Each distinct text gets a fixed seeded direction; the stream
            // label folds the text in so the mapping is content-addressed.
            let mut rng = StreamRng::new(self.spec.seed, &format!("teacher:text:{}", text));
            rows.push(rng.fill_normal(m));
        }
        let mat = Mat::from_rows(&rows)?;
        let normed = row_l2_normalize(&mat)
            .map_err(|e| KdError::degenerate(format!("encode_texts: {}", e)))?;
        for i in 0..texts.len() {
            for j in (i + 1)..texts.len() {
                if texts[i] == texts[j] {
                    return Err(KdError::invalid(format!(
                        "encode_texts: duplicate text '{}'",
                        texts[i]
                    )));
                }
                let c = cosine(normed.row(i), normed.row(j))?;
                if c >= 0.99 {
                    return Err(KdError::degenerate(format!(
                        "encode_texts: texts '{}' and '{}' collapsed (cosine {:.4})",
                        texts[i], texts[j], c
                    )));
                }
            }
        }
        Ok(normed)
    }
}

/// Prompt with exactly one `{label}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    template: String,
}

pub const DEFAULT_PROMPT: &str = "a photo of a {label}";

impl PromptTemplate {
    pub fn new(template: &str) -> Result<PromptTemplate> {
        let count = template.matches("{label}").count();
        if count != 1 {
            return Err(KdError::invalid(format!(
                "prompt template must contain exactly one {{label}} placeholder, found {}: '{}'",
                count, template
            )));
        }
        Ok(PromptTemplate {
            template: template.to_string(),
        })
    }

    pub fn render(&self, label: &str) -> String {
        self.template.replace("{label}", label)
    }

    pub fn as_str(&self) -> &str {
        &self.template
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(DEFAULT_PROMPT).expect("default template is valid")
    }
}

/// Renders one prompt per class label, preserving order.
pub fn texts_from_labels(labels: &[String], tpl: &PromptTemplate) -> Result<Vec<String>> {
    if labels.is_empty() {
        return Err(KdError::invalid("texts_from_labels: no labels"));
    }
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(KdError::invalid(format!(
                "texts_from_labels: duplicate label '{}'",
                l
            )));
        }
    }
    Ok(labels.iter().map(|l| tpl.render(l)).collect())
}

/// True iff two consecutive encodes of the probe are bit-identical.
pub fn freeze_check(teacher: &dyn TeacherModel, probe: &Mat) -> bool {
    let a = match teacher.encode_images_value(probe) {
        Ok(v) => v,
        Err(_) => return false,
    };
    let b = match teacher.encode_images_value(probe) {
        Ok(v) => v,
        Err(_) => return false,
    };
    a.hash_bits() == b.hash_bits()
}

/// Teacher construction request, mirroring the `teacher.*` config keys.
#[derive(Debug, Clone)]
pub struct TeacherRequest {
    pub kind: String,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub input_shape: (usize, usize, usize),
    pub checkpoint_path: Option<String>,
}

pub type TeacherFactory = fn(&TeacherRequest) -> Result<Box<dyn TeacherModel>>;

/// Registry resolving `teacher.kind` strings to constructors. The mock
/// teacher ships built in; external adapters register a factory under their
/// own kind and must satisfy [`TeacherModel`] plus [`freeze_check`].
pub struct TeacherHub {
    factories: BTreeMap<String, TeacherFactory>,
}

fn mock_factory(req: &TeacherRequest) -> Result<Box<dyn TeacherModel>> {
    let spec = MockTeacherSpec {
        seed: req.seed,
        feature_dim: req.feature_dim,
        hidden_dim: req.hidden_dim,
        input_shape: req.input_shape,
    };
    Ok(Box::new(build_mock_teacher(&spec)?))
}

impl TeacherHub {
    pub fn new() -> TeacherHub {
        let mut factories: BTreeMap<String, TeacherFactory> = BTreeMap::new();
        factories.insert("mock".to_string(), mock_factory);
        TeacherHub { factories }
    }

    pub fn register(&mut self, kind: &str, factory: TeacherFactory) {
        self.factories.insert(kind.to_string(), factory);
    }

    pub fn build(&self, req: &TeacherRequest) -> Result<Box<dyn TeacherModel>> {
        match self.factories.get(&req.kind) {
            Some(f) => f(req),
            None => Err(KdError::invalid(format!(
                "no teacher adapter registered for teacher.kind='{}' (available: {})",
                req.kind,
                self.factories
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            ))),
        }
    }
}

impl Default for TeacherHub {
    fn default() -> Self {
        TeacherHub::new()
    }
}
