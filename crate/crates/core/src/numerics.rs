//! Shared numeric primitives: reductions, norms, cosine similarity, and the
//! finite-difference gradient oracle every loss in this crate is checked
//! against.

use std::collections::BTreeMap;

use crate::error::{KdError, Result};
use crate::mat::Mat;

/// Guard on every norm before division.
pub const EPS_NORM: f64 = 1e-12;

/// Default finite-difference step at 64-bit precision.
pub const FD_STEP: f64 = 1e-5;

/// Floor for the denominator of relative gradient errors, so near-zero
/// gradients are compared absolutely at the floor's scale instead of
/// amplifying rounding noise.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// Mean absolute difference over all elements. Symmetric, nonnegative, zero
/// exactly when the arguments are identical.
pub fn l1_mean(a: &Mat, b: &Mat) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(KdError::invalid(format!(
            "l1_mean: shape {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = a.len();
    if n == 0 {
        return Err(KdError::degenerate("l1_mean: empty matrices"));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Scales every row to unit L2 norm. Rows at or below [`EPS_NORM`] are
/// rejected rather than silently inflated.
pub fn row_l2_normalize(m: &Mat) -> Result<Mat> {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let norm = row_norm(m.row(r));
        if norm <= EPS_NORM {
            return Err(KdError::degenerate(format!(
                "row_l2_normalize: row {} has near-zero norm {:e}",
                r, norm
            )));
        }
        for v in out.row_mut(r) {
            *v /= norm;
        }
    }
    Ok(out)
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity, clamped into [-1, 1] against rounding drift.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(KdError::invalid(format!(
            "cosine: length {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nu = row_norm(u);
    let nv = row_norm(v);
    if nu <= EPS_NORM || nv <= EPS_NORM {
        return Err(KdError::degenerate(format!(
            "cosine: zero vector (norms {:e}, {:e})",
            nu, nv
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Central-difference gradient of `f` at `theta`.
///
/// Each coordinate is perturbed by `h` in both directions; a non-finite
/// function value aborts with the offending coordinate.
pub fn finite_diff_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if h <= 0.0 {
        return Err(KdError::invalid(format!(
            "finite_diff_gradient: step {} must be positive",
            h
        )));
    }
    let mut scratch = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        scratch[i] = theta[i] + h;
        let up = f(&scratch);
        scratch[i] = theta[i] - h;
        let down = f(&scratch);
        scratch[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(KdError::numeric(format!(
                "finite_diff_gradient: non-finite value near coordinate {}",
                i
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Outcome of comparing analytic gradients against the finite-difference
/// oracle across one or more named parameter blocks.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub per_parameter_errors: BTreeMap<String, f64>,
}

impl GradCheckReport {
    pub fn new() -> GradCheckReport {
        GradCheckReport::default()
    }

    /// Records one block's comparison. The relative error denominator is
    /// floored at [`REL_ERROR_FLOOR`] so exact-zero gradients do not divide
    /// by zero.
    pub fn record(&mut self, name: &str, analytic: &[f64], numeric: &[f64]) {
        assert_eq!(
            analytic.len(),
            numeric.len(),
            "gradient length mismatch for {}",
            name
        );
        let mut worst_rel: f64 = 0.0;
        for (&a, &n) in analytic.iter().zip(numeric) {
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(REL_ERROR_FLOOR);
            self.max_abs_error = self.max_abs_error.max(abs);
            worst_rel = worst_rel.max(rel);
        }
        self.max_rel_error = self.max_rel_error.max(worst_rel);
        let entry = self
            .per_parameter_errors
            .entry(name.to_string())
            .or_insert(0.0);
        *entry = entry.max(worst_rel);
    }

    /// Folds another report into this one.
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        for (k, v) in &other.per_parameter_errors {
            let entry = self.per_parameter_errors.entry(k.clone()).or_insert(0.0);
            *entry = entry.max(*v);
        }
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    #[test]
    fn l1_mean_identity_is_zero() {
        let a = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(l1_mean(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn l1_mean_hand_values() {
        let a = Mat::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Mat::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(l1_mean(&a, &b).unwrap(), 0.5);

        let a = Mat::from_rows(&[vec![2.0, -2.0]]).unwrap();
        let b = Mat::from_rows(&[vec![-1.0, 1.0]]).unwrap();
        assert_eq!(l1_mean(&a, &b).unwrap(), 3.0);
    }

    #[test]
    fn l1_mean_is_symmetric_on_random_inputs() {
        let mut rng = StreamRng::new(1, "test");
        for _ in 0..20 {
            let a = rng.normal_mat(3, 4);
            let b = rng.normal_mat(3, 4);
            assert_eq!(l1_mean(&a, &b).unwrap(), l1_mean(&b, &a).unwrap());
        }
    }

    #[test]
    fn l1_mean_rejects_shape_mismatch() {
        let a = Mat::zeros(2, 2);
        let b = Mat::zeros(2, 3);
        let err = l1_mean(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x2") && msg.contains("2x3"), "{}", msg);
    }

    #[test]
    fn row_l2_normalize_three_four_five() {
        let m = Mat::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let n = row_l2_normalize(&m).unwrap();
        assert!((n.get(0, 0) - 0.6).abs() < 1e-12);
        assert!((n.get(0, 1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn row_l2_normalize_keeps_identity_rows() {
        let m = Mat::identity(3);
        assert_eq!(row_l2_normalize(&m).unwrap(), m);
    }

    #[test]
    fn row_l2_normalize_rejects_zero_row_with_index() {
        let m = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let err = row_l2_normalize(&m).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{}", err);
    }

    #[test]
    fn row_l2_normalize_is_idempotent() {
        let mut rng = StreamRng::new(2, "test");
        let m = rng.normal_mat(5, 7);
        let once = row_l2_normalize(&m).unwrap();
        let twice = row_l2_normalize(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn cosine_basic_facts() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[2.0, 2.0], &[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let mut rng = StreamRng::new(3, "test");
        for _ in 0..20 {
            let u: Vec<f64> = rng.fill_normal(6);
            let v: Vec<f64> = rng.fill_normal(6);
            let base = cosine(&u, &v).unwrap();
            let us: Vec<f64> = u.iter().map(|x| x * 3.5).collect();
            let vs: Vec<f64> = v.iter().map(|x| x * 0.01).collect();
            assert!((cosine(&us, &vs).unwrap() - base).abs() < 1e-6);
        }
    }

    #[test]
    fn finite_diff_matches_analytic_square() {
        let g = finite_diff_gradient(|t| t[0] * t[0], &[3.0], FD_STEP).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_of_constant_is_zero() {
        let g = finite_diff_gradient(|_| 4.25, &[1.0, 2.0, 3.0], FD_STEP).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn finite_diff_of_l1_away_from_kink() {
        let g = finite_diff_gradient(|t| t.iter().map(|x| x.abs()).sum(), &[2.0, -2.0], FD_STEP)
            .unwrap();
        assert!((g[0] - 1.0).abs() < 1e-6);
        assert!((g[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_reports_non_finite_coordinate() {
        let err = finite_diff_gradient(|t| t[0].ln(), &[0.0], FD_STEP).unwrap_err();
        assert!(err.to_string().contains("coordinate 0"), "{}", err);
    }

    #[test]
    fn report_tracks_worst_errors_per_block() {
        let mut rep = GradCheckReport::new();
        rep.record("a", &[1.0, 2.0], &[1.0, 2.0]);
        rep.record("b", &[1.0], &[1.001]);
        assert!(rep.max_rel_error > 0.0);
        assert!(rep.per_parameter_errors["a"] == 0.0);
        assert!(rep.per_parameter_errors["b"] > 0.0);
        assert!(rep.passed(1e-2));
        assert!(!rep.passed(1e-5));
    }
}
