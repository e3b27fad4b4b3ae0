//! Evaluation metrics over feature batches and generated images.
//!
//! Everything here is closed-form linear algebra on f64; the only iterative
//! piece is a cyclic Jacobi eigensolver for the symmetric matrix square
//! roots inside the distribution distance.

use crate::error::{KdError, Result};
use crate::mat::Mat;
use crate::numerics::cosine;
use crate::rng::StreamRng;

/// Ridge added to covariance diagonals before any square root.
pub const COV_STABILIZER: f64 = 1e-6;

/// Sample mean and unbiased covariance of row features.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub cov: Mat,
    pub count: usize,
}

pub fn feature_stats(features: &Mat) -> Result<FeatureStats> {
    let (n, d) = (features.rows(), features.cols());
    if n < 2 {
        return Err(KdError::degenerate(format!(
            "feature statistics need at least 2 rows, got {}",
            n
        )));
    }
    if !features.all_finite() {
        return Err(KdError::numeric("feature statistics on non-finite input"));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = Mat::zeros(d, d);
    for r in 0..n {
        let row = features.row(r);
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                let v = cov.get(i, j) + di * (row[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok(FeatureStats {
        mean,
        cov,
        count: n,
    })
}

fn trace(m: &Mat) -> f64 {
    (0..m.rows()).map(|i| m.get(i, i)).sum()
}

fn symmetrize(m: &Mat) -> Mat {
    let mut out = m.clone();
    for i in 0..m.rows() {
        for j in 0..i {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and the matrix whose columns are the matching eigenvectors.
pub fn jacobi_eigh(sym: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = sym.rows();
    if n != sym.cols() {
        return Err(KdError::shape(format!(
            "eigendecomposition of {}x{}",
            sym.rows(),
            sym.cols()
        )));
    }
    if !sym.all_finite() {
        return Err(KdError::numeric("eigendecomposition of non-finite matrix"));
    }
    let mut a = symmetrize(sym);
    let mut v = Mat::identity(n);
    let scale: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        s += a.get(i, j) * a.get(i, j);
                    }
                }
            }
            s.sqrt()
        };
        if off <= 1e-14 * scale {
            let eig = (0..n).map(|i| a.get(i, i)).collect();
            return Ok((eig, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Err(KdError::numeric(format!(
        "eigendecomposition did not converge in {} sweeps (matrix scale {:.3e})",
        MAX_SWEEPS, scale
    )))
}

/// Symmetric positive-semidefinite square root; slightly negative
/// eigenvalues from rounding are clamped to zero.
fn psd_sqrt(sym: &Mat) -> Result<Mat> {
    let (eig, vecs) = jacobi_eigh(sym)?;
    let n = eig.len();
    let mut scaled = vecs.clone();
    for j in 0..n {
        let root = eig[j].max(0.0).sqrt();
        for i in 0..n {
            scaled.set(i, j, scaled.get(i, j) * root);
        }
    }
    scaled.matmul_nt(&vecs)
}

fn stabilized(cov: &Mat) -> Mat {
    let mut out = symmetrize(cov);
    for i in 0..out.rows() {
        let v = out.get(i, i) + COV_STABILIZER;
        out.set(i, i, v);
    }
    out
}

/// Squared-mean-difference-plus-covariance distance between two feature
/// distributions: |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2),
/// computed on ridge-stabilized covariances.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(KdError::shape(format!(
            "distribution distance between dims {} and {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let sa = stabilized(&a.cov);
    let sb = stabilized(&b.cov);
    let root_a = psd_sqrt(&sa)?;
    let inner = symmetrize(&root_a.matmul(&sb)?.matmul(&root_a)?);
    let cross = psd_sqrt(&inner)?;
    let dmu2: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let d = dmu2 + trace(&sa) + trace(&sb) - 2.0 * trace(&cross);
    if !d.is_finite() {
        return Err(KdError::numeric("distribution distance is not finite"));
    }
    if d < -1e-6 {
        return Err(KdError::numeric(format!(
            "distribution distance {} is negative beyond rounding",
            d
        )));
    }
    Ok(d.max(0.0))
}

/// Exponentiated mean KL between per-sample class distributions and their
/// marginal. Rows must be probability vectors; zero entries contribute
/// nothing to the divergence.
pub fn inception_style_score(probs: &Mat) -> Result<f64> {
    let (n, k) = (probs.rows(), probs.cols());
    if n == 0 || k == 0 {
        return Err(KdError::degenerate(
            "score needs a non-empty probability matrix",
        ));
    }
    let mut marginal = vec![0.0; k];
    for r in 0..n {
        let mut sum = 0.0;
        for (j, &p) in probs.row(r).iter().enumerate() {
            if !(p.is_finite() && p >= 0.0) {
                return Err(KdError::invalid(format!(
                    "probability {} at row {} column {} invalid",
                    p, r, j
                )));
            }
            sum += p;
            marginal[j] += p;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(KdError::invalid(format!(
                "row {} sums to {}, not 1",
                r, sum
            )));
        }
    }
    for m in &mut marginal {
        *m /= n as f64;
    }
    let mut mean_kl = 0.0;
    for r in 0..n {
        for (j, &p) in probs.row(r).iter().enumerate() {
            if p > 0.0 {
                mean_kl += p * (p.ln() - marginal[j].ln());
            }
        }
    }
    mean_kl /= n as f64;
    Ok(mean_kl.exp())
}

/// Mean cosine dissimilarity over randomly drawn distinct row pairs.
pub fn perceptual_diversity(
    features: &Mat,
    num_pairs: usize,
    stream: &mut StreamRng,
) -> Result<f64> {
    if features.rows() < 2 {
        return Err(KdError::degenerate(format!(
            "diversity needs at least 2 rows, got {}",
            features.rows()
        )));
    }
    if num_pairs == 0 {
        return Err(KdError::invalid("diversity over zero pairs"));
    }
    let mut total = 0.0;
    for _ in 0..num_pairs {
        let i = stream.below(features.rows());
        let mut j = stream.below(features.rows() - 1);
        if j >= i {
            j += 1;
        }
        total += 1.0 - cosine(features.row(i), features.row(j))?;
    }
    Ok(total / num_pairs as f64)
}

/// Nearest-template assignment counts and the derived coverage fraction.
#[derive(Debug, Clone)]
pub struct ModeCoverage {
    /// Samples assigned to each template row.
    pub per_mode: Vec<usize>,
    /// Modes holding at least one percent of the samples.
    pub covered: usize,
    pub total_samples: usize,
}

impl ModeCoverage {
    pub fn fraction(&self) -> f64 {
        self.covered as f64 / self.per_mode.len() as f64
    }
}

/// Assigns every image to its nearest template (squared L2, ties to the
/// lower index) and counts modes that hold at least 1% of the samples. The
/// threshold compares count * 100 >= total in integers, so no float rounding
/// can flip it.
pub fn mode_coverage(images: &Mat, templates: &Mat) -> Result<ModeCoverage> {
    if images.rows() == 0 {
        return Err(KdError::degenerate("coverage of zero samples"));
    }
    if templates.rows() == 0 {
        return Err(KdError::degenerate("coverage against zero templates"));
    }
    if images.cols() != templates.cols() {
        return Err(KdError::shape(format!(
            "images of length {} against templates of length {}",
            images.cols(),
            templates.cols()
        )));
    }
    let mut per_mode = vec![0usize; templates.rows()];
    for r in 0..images.rows() {
        per_mode[nearest_template(images.row(r), templates)] += 1;
    }
    let total = images.rows();
    let covered = per_mode.iter().filter(|&&c| c * 100 >= total).count();
    Ok(ModeCoverage {
        per_mode,
        covered,
        total_samples: total,
    })
}

fn nearest_template(img: &[f64], templates: &Mat) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for k in 0..templates.rows() {
        let d: f64 = img
            .iter()
            .zip(templates.row(k))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Stand-in classifier for the synthetic dataset: softmax over negative half
/// squared distances to the templates. Rows sum to 1 by construction.
pub fn template_softmax_probs(images: &Mat, templates: &Mat) -> Result<Mat> {
    if images.cols() != templates.cols() {
        return Err(KdError::shape(format!(
            "images of length {} against templates of length {}",
            images.cols(),
            templates.cols()
        )));
    }
    let k = templates.rows();
    let mut probs = Mat::zeros(images.rows(), k);
    for r in 0..images.rows() {
        let img = images.row(r);
        let logits: Vec<f64> = (0..k)
            .map(|t| {
                let d: f64 = img
                    .iter()
                    .zip(templates.row(t))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                -0.5 * d
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            probs.set(r, j, e / sum);
        }
    }
    Ok(probs)
}
