//! Correlated generative distillation: image-text correlation matrices, the
//! pairwise diversity penalty on teacher correlations, and L1 distillation
//! from teacher to student correlations.

use crate::autodiff::{Tape, Var};
use crate::error::{KdError, Result};
use crate::mat::Mat;
use crate::numerics::{cosine, l1_mean, row_l2_normalize};

/// Which network produced the features behind a correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationSource {
    Teacher,
    Student,
}

/// Row-normalized [B x K] image-text correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub data: Mat,
    pub source: CorrelationSource,
}

/// Inner products of image features [B x M] against text embeddings [K x M],
/// row-normalized so each image's correlation vector has unit length and
/// cosine between rows reduces to their dot product.
pub fn build_correlation(
    features: &Mat,
    texts: &Mat,
    source: CorrelationSource,
) -> Result<CorrelationMatrix> {
    if features.cols() != texts.cols() {
        return Err(KdError::invalid(format!(
            "build_correlation: feature dim {} vs text dim {}",
            features.cols(),
            texts.cols()
        )));
    }
    if texts.rows() < 1 {
        return Err(KdError::invalid("build_correlation: no texts"));
    }
    let raw = features.matmul_nt(texts)?;
    let data = row_l2_normalize(&raw).map_err(|e| {
        KdError::degenerate(format!("build_correlation: zero correlation row ({})", e))
    })?;
    Ok(CorrelationMatrix { data, source })
}

/// Sum of cosine similarities over all ordered row pairs (i, j), i != j.
/// Minimizing it pushes the batch's correlation vectors apart.
pub fn pairwise_diversity_loss(c: &CorrelationMatrix) -> Result<f64> {
    let b = c.data.rows();
    if b < 2 {
        return Err(KdError::invalid(format!(
            "pairwise_diversity_loss: needs at least 2 rows, got {}",
            b
        )));
    }
    if c.data.cols() < 2 {
        return Err(KdError::invalid(format!(
            "pairwise_diversity_loss: needs at least 2 texts, got {}",
            c.data.cols()
        )));
    }
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i != j {
                total += cosine(c.data.row(i), c.data.row(j))?;
            }
        }
    }
    Ok(total)
}

/// Mean absolute difference between teacher and student correlations.
pub fn correlation_kd_loss(ct: &CorrelationMatrix, cs: &CorrelationMatrix) -> Result<f64> {
    if ct.source != CorrelationSource::Teacher || cs.source != CorrelationSource::Student {
        return Err(KdError::invalid(
            "correlation_kd_loss: expects (teacher, student) correlation matrices in that order",
        ));
    }
    l1_mean(&ct.data, &cs.data)
}

/// Loss pieces for one application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgkdOutput {
    pub l_pd: f64,
    pub l_kd: f64,
    pub l_total: f64,
}

/// Full loss on generated samples: diversity over teacher correlations plus
/// distillation from teacher to student correlations.
pub fn cgkd_total(teacher_fake: &Mat, student_fake: &Mat, texts: &Mat) -> Result<CgkdOutput> {
    if teacher_fake.rows() != student_fake.rows() {
        return Err(KdError::invalid(format!(
            "cgkd_total: batch {} vs {}",
            teacher_fake.rows(),
            student_fake.rows()
        )));
    }
    if teacher_fake.rows() < 2 {
        return Err(KdError::invalid(
            "cgkd_total: batch size must be at least 2",
        ));
    }
    if texts.rows() < 2 {
        return Err(KdError::invalid("cgkd_total: need at least 2 texts"));
    }
    let ct = build_correlation(teacher_fake, texts, CorrelationSource::Teacher)?;
    let cs = build_correlation(student_fake, texts, CorrelationSource::Student)?;
    let l_pd = pairwise_diversity_loss(&ct)?;
    let l_kd = correlation_kd_loss(&ct, &cs)?;
    Ok(CgkdOutput {
        l_pd,
        l_kd,
        l_total: l_pd + l_kd,
    })
}

/// Tape-level loss nodes mirroring [`cgkd_total`].
pub struct CgkdVars {
    pub c_t: Var,
    pub c_s: Var,
    pub l_pd: Var,
    pub l_kd: Var,
    pub l_total: Var,
}

/// Options threaded through from configuration.
#[derive(Debug, Clone, Copy)]
pub struct CgkdTapeOptions {
    /// Count each unordered pair twice (the literal double sum) or once.
    pub ordered_pairs: bool,
    /// Sever the teacher-correlation path inside the distillation term.
    pub stop_teacher_grad_in_kd: bool,
}

impl Default for CgkdTapeOptions {
    fn default() -> Self {
        CgkdTapeOptions {
            ordered_pairs: true,
            stop_teacher_grad_in_kd: false,
        }
    }
}

fn correlation_on_tape(tape: &mut Tape, features: Var, texts: Var) -> Var {
    let raw = tape.matmul_nt(features, texts);
    tape.row_normalize(raw)
}

/// Builds C_T, C_S, and both losses on the tape.
///
/// The pairwise sum uses the identity sum_{i != j} cos(c_i, c_j) =
/// sum(Cn Cn^T) - B for unit rows, realized with an off-diagonal mask so the
/// gradient is exactly that of the literal double sum.
pub fn cgkd_on_tape(
    tape: &mut Tape,
    teacher_fake: Var,
    student_fake: Var,
    texts: Var,
    options: CgkdTapeOptions,
) -> CgkdVars {
    let c_t = correlation_on_tape(tape, teacher_fake, texts);
    let c_s = correlation_on_tape(tape, student_fake, texts);

    let b = tape.value(c_t).rows();
    let gram = tape.matmul_nt(c_t, c_t);
    let mut mask = Mat::filled(b, b, 1.0);
    for i in 0..b {
        mask.set(i, i, 0.0);
    }
    let mask = tape.constant(mask);
    let off_diag = tape.mul_elem(gram, mask);
    let mut l_pd = tape.sum(off_diag);
    if !options.ordered_pairs {
        l_pd = tape.scale(l_pd, 0.5);
    }

    let ct_for_kd = if options.stop_teacher_grad_in_kd {
        tape.stop_grad(c_t)
    } else {
        c_t
    };
    let l_kd = crate::agkd::l1_mean_on_tape(tape, ct_for_kd, c_s);
    let l_total = tape.add(l_pd, l_kd);
    CgkdVars {
        c_t,
        c_s,
        l_pd,
        l_kd,
        l_total,
    }
}
