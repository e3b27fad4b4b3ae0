//! Standard adversarial losses and the objective composer that assigns every
//! loss term to the network it updates.
//!
//! The classic saddle objective is rewritten as two minimizations: the
//! discriminator minimizes the negated classification objective plus its
//! distillation terms, the generator minimizes its own adversarial term plus
//! the terms routed to it. This is the only reading under which distillation
//! regularizes the discriminator instead of being maximized by it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agkd::AgkdOutput;
use crate::autodiff::{softplus, Tape, Var};
use crate::cgkd::CgkdOutput;
use crate::error::{KdError, Result};

/// Clamp applied to probabilities before any logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

/// How the discriminator's raw outputs are to be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Values in [0, 1]; endpoint values are rescued by [`PROB_CLAMP`].
    Probabilities,
    /// Unbounded logits.
    Logits,
}

/// One batch of discriminator outputs on real and generated samples.
#[derive(Debug, Clone)]
pub struct DiscriminatorScores {
    pub real: Vec<f64>,
    pub fake: Vec<f64>,
    pub kind: ScoreKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DAdvKind {
    Logistic,
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GAdvKind {
    /// The literal generator objective: mean log(1 - D(G(z))).
    LogisticSaturating,
    /// The standard trick: -mean log D(G(z)).
    LogisticNonSaturating,
    Hinge,
}

fn validate_scores(scores: &[f64], kind: ScoreKind, what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(KdError::degenerate(format!("{}: empty score vector", what)));
    }
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(KdError::invalid(format!(
                "{}: non-finite score at index {}",
                what, i
            )));
        }
        if kind == ScoreKind::Probabilities && !(0.0..=1.0).contains(&s) {
            return Err(KdError::invalid(format!(
                "{}: probability {} at index {} outside [0,1]",
                what, s, i
            )));
        }
    }
    Ok(())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

/// Discriminator loss, minimized by D.
///
/// Logistic on probabilities: -(mean ln D(x) + mean ln(1 - D(G(z)))).
/// Logistic on logits uses the softplus identity -ln sigma(s) = softplus(-s).
/// Hinge (logits only): mean max(0, 1 - s_real) + mean max(0, 1 + s_fake).
pub fn d_adv_loss(scores: &DiscriminatorScores, kind: DAdvKind) -> Result<f64> {
    validate_scores(&scores.real, scores.kind, "d_adv_loss real")?;
    validate_scores(&scores.fake, scores.kind, "d_adv_loss fake")?;
    let (nr, nf) = (scores.real.len(), scores.fake.len());
    match (kind, scores.kind) {
        (DAdvKind::Logistic, ScoreKind::Probabilities) => {
            let lr = mean(scores.real.iter().map(|&p| clamp_prob(p).ln()), nr);
            let lf = mean(scores.fake.iter().map(|&p| (1.0 - clamp_prob(p)).ln()), nf);
            Ok(-(lr + lf))
        }
        (DAdvKind::Logistic, ScoreKind::Logits) => {
            let lr = mean(scores.real.iter().map(|&s| softplus(-s)), nr);
            let lf = mean(scores.fake.iter().map(|&s| softplus(s)), nf);
            Ok(lr + lf)
        }
        (DAdvKind::Hinge, ScoreKind::Logits) => {
            let lr = mean(scores.real.iter().map(|&s| (1.0 - s).max(0.0)), nr);
            let lf = mean(scores.fake.iter().map(|&s| (1.0 + s).max(0.0)), nf);
            Ok(lr + lf)
        }
        (DAdvKind::Hinge, ScoreKind::Probabilities) => Err(KdError::invalid(
            "d_adv_loss: hinge operates on logits, not probabilities",
        )),
    }
}

/// Generator loss, minimized by G.
pub fn g_adv_loss(fake_scores: &[f64], score_kind: ScoreKind, kind: GAdvKind) -> Result<f64> {
    validate_scores(fake_scores, score_kind, "g_adv_loss fake")?;
    let n = fake_scores.len();
    match (kind, score_kind) {
        (GAdvKind::LogisticSaturating, ScoreKind::Probabilities) => Ok(mean(
            fake_scores.iter().map(|&p| (1.0 - clamp_prob(p)).ln()),
            n,
        )),
        // ln(1 - sigma(s)) = -softplus(s)
        (GAdvKind::LogisticSaturating, ScoreKind::Logits) => {
            Ok(-mean(fake_scores.iter().map(|&s| softplus(s)), n))
        }
        (GAdvKind::LogisticNonSaturating, ScoreKind::Probabilities) => {
            Ok(-mean(fake_scores.iter().map(|&p| clamp_prob(p).ln()), n))
        }
        // -ln sigma(s) = softplus(-s)
        (GAdvKind::LogisticNonSaturating, ScoreKind::Logits) => {
            Ok(mean(fake_scores.iter().map(|&s| softplus(-s)), n))
        }
        (GAdvKind::Hinge, ScoreKind::Logits) => Ok(-mean(fake_scores.iter().copied(), n)),
        (GAdvKind::Hinge, ScoreKind::Probabilities) => Err(KdError::invalid(
            "g_adv_loss: hinge operates on logits, not probabilities",
        )),
    }
}

/// Weights and routing flags for the combined objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_agkd: f64,
    pub w_cgkd: f64,
    pub w_pd: f64,
    /// Also add the weighted correlation distillation term to the generator
    /// loss (its gradient reaches G through the teacher path).
    pub route_kd_to_g: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_agkd: 1.0,
            w_cgkd: 1.0,
            w_pd: 1.0,
            route_kd_to_g: true,
        }
    }
}

/// The assembled per-network losses plus a component ledger.
#[derive(Debug, Clone)]
pub struct ObjectiveBundle {
    pub d_loss: f64,
    pub g_loss: f64,
    pub components: BTreeMap<String, f64>,
}

impl ObjectiveBundle {
    /// Re-sums the component ledger and compares against the stored losses.
    pub fn recompose_check(&self, tol: f64) -> bool {
        let get = |k: &str| self.components.get(k).copied().unwrap_or(0.0);
        let d = get("l_d") + get("w_agkd") * get("l_agkd") + get("w_cgkd") * get("l_cgkd_kd");
        let mut g = get("l_g") + get("w_pd") * get("l_cgkd_pd");
        if get("route_kd_to_g") != 0.0 {
            g += get("w_cgkd") * get("l_cgkd_kd");
        }
        (d - self.d_loss).abs() < tol && (g - self.g_loss).abs() < tol
    }
}

/// Assigns each term to its network:
/// d_loss = adv_d + w_agkd * agkd.l_total + w_cgkd * cgkd.l_kd,
/// g_loss = adv_g + w_pd * cgkd.l_pd (+ w_cgkd * cgkd.l_kd when routed).
/// Disabled modules are passed as `None` and contribute exactly nothing.
pub fn compose_objective(
    adv_d: f64,
    adv_g: f64,
    agkd: Option<&AgkdOutput>,
    cgkd: Option<&CgkdOutput>,
    weights: &LossWeights,
) -> Result<ObjectiveBundle> {
    fn check(components: &mut BTreeMap<String, f64>, name: &str, v: f64) -> Result<f64> {
        if !v.is_finite() {
            return Err(KdError::numeric(format!(
                "compose_objective: component {} is {}",
                name, v
            )));
        }
        components.insert(name.to_string(), v);
        Ok(v)
    }

    let mut components = BTreeMap::new();
    let mut d_loss = check(&mut components, "l_d", adv_d)?;
    let mut g_loss = check(&mut components, "l_g", adv_g)?;
    components.insert("w_agkd".to_string(), weights.w_agkd);
    components.insert("w_cgkd".to_string(), weights.w_cgkd);
    components.insert("w_pd".to_string(), weights.w_pd);
    components.insert(
        "route_kd_to_g".to_string(),
        if weights.route_kd_to_g { 1.0 } else { 0.0 },
    );

    if let Some(a) = agkd {
        let l = check(&mut components, "l_agkd", a.l_total)?;
        components.insert("l_agkd_kd".to_string(), a.l_kd);
        components.insert("l_agkd_agg".to_string(), a.l_agg_raw);
        components.insert("gate_open".to_string(), if a.gate_open { 1.0 } else { 0.0 });
        d_loss += weights.w_agkd * l;
    }
    if let Some(c) = cgkd {
        let kd = check(&mut components, "l_cgkd_kd", c.l_kd)?;
        let pd = check(&mut components, "l_cgkd_pd", c.l_pd)?;
        d_loss += weights.w_cgkd * kd;
        g_loss += weights.w_pd * pd;
        if weights.route_kd_to_g {
            g_loss += weights.w_cgkd * kd;
        }
    }
    if !d_loss.is_finite() || !g_loss.is_finite() {
        return Err(KdError::numeric(format!(
            "compose_objective: non-finite totals (d {}, g {})",
            d_loss, g_loss
        )));
    }
    Ok(ObjectiveBundle {
        d_loss,
        g_loss,
        components,
    })
}

/// Tape-level discriminator adversarial loss on logit score columns [B x 1].
pub fn d_adv_on_tape(tape: &mut Tape, real_logits: Var, fake_logits: Var, kind: DAdvKind) -> Var {
    match kind {
        DAdvKind::Logistic => {
            let nr = tape.scale(real_logits, -1.0);
            let nr = tape.softplus(nr);
            let lr = tape.mean(nr);
            let nf = tape.softplus(fake_logits);
            let lf = tape.mean(nf);
            tape.add(lr, lf)
        }
        DAdvKind::Hinge => {
            let r = tape.scale(real_logits, -1.0);
            let r = tape.add_scalar(r, 1.0);
            let r = tape.relu(r);
            let lr = tape.mean(r);
            let f = tape.add_scalar(fake_logits, 1.0);
            let f = tape.relu(f);
            let lf = tape.mean(f);
            tape.add(lr, lf)
        }
    }
}

/// Tape-level generator adversarial loss on logit score columns [B x 1].
pub fn g_adv_on_tape(tape: &mut Tape, fake_logits: Var, kind: GAdvKind) -> Var {
    match kind {
        GAdvKind::LogisticSaturating => {
            let sp = tape.softplus(fake_logits);
            let m = tape.mean(sp);
            tape.scale(m, -1.0)
        }
        GAdvKind::LogisticNonSaturating => {
            let neg = tape.scale(fake_logits, -1.0);
            let sp = tape.softplus(neg);
            tape.mean(sp)
        }
        GAdvKind::Hinge => {
            let m = tape.mean(fake_logits);
            tape.scale(m, -1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::numerics::{finite_diff_gradient, FD_STEP};
    use crate::rng::StreamRng;

    fn probs(real: &[f64], fake: &[f64]) -> DiscriminatorScores {
        DiscriminatorScores {
            real: real.to_vec(),
            fake: fake.to_vec(),
            kind: ScoreKind::Probabilities,
        }
    }

    fn logits(real: &[f64], fake: &[f64]) -> DiscriminatorScores {
        DiscriminatorScores {
            real: real.to_vec(),
            fake: fake.to_vec(),
            kind: ScoreKind::Logits,
        }
    }

    #[test]
    fn logistic_d_loss_at_the_symmetric_point() {
        let l = d_adv_loss(&probs(&[0.5, 0.5], &[0.5, 0.5]), DAdvKind::Logistic).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn hinge_d_loss_hand_values() {
        let l = d_adv_loss(&logits(&[1.0], &[-1.0]), DAdvKind::Hinge).unwrap();
        assert_eq!(l, 0.0);
        let l = d_adv_loss(&logits(&[0.0], &[0.0]), DAdvKind::Hinge).unwrap();
        assert_eq!(l, 2.0);
    }

    #[test]
    fn g_loss_hand_values() {
        let l = g_adv_loss(
            &[0.5],
            ScoreKind::Probabilities,
            GAdvKind::LogisticSaturating,
        )
        .unwrap();
        assert!((l + std::f64::consts::LN_2).abs() < 1e-12);
        let l = g_adv_loss(
            &[0.5],
            ScoreKind::Probabilities,
            GAdvKind::LogisticNonSaturating,
        )
        .unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = g_adv_loss(&[1.0, -1.0], ScoreKind::Logits, GAdvKind::Hinge).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn logit_and_probability_forms_agree_through_the_sigmoid() {
        let mut rng = StreamRng::new(1, "test");
        let sr: Vec<f64> = rng.fill_normal(8);
        let sf: Vec<f64> = rng.fill_normal(8);
        let pr: Vec<f64> = sr.iter().map(|&s| crate::autodiff::sigmoid(s)).collect();
        let pf: Vec<f64> = sf.iter().map(|&s| crate::autodiff::sigmoid(s)).collect();

        let via_logits = d_adv_loss(&logits(&sr, &sf), DAdvKind::Logistic).unwrap();
        let via_probs = d_adv_loss(&probs(&pr, &pf), DAdvKind::Logistic).unwrap();
        assert!((via_logits - via_probs).abs() < 1e-9);

        for kind in [
            GAdvKind::LogisticSaturating,
            GAdvKind::LogisticNonSaturating,
        ] {
            let a = g_adv_loss(&sf, ScoreKind::Logits, kind).unwrap();
            let b = g_adv_loss(&pf, ScoreKind::Probabilities, kind).unwrap();
            assert!((a - b).abs() < 1e-9, "{:?}", kind);
        }
    }

    #[test]
    fn probability_range_is_validated_and_endpoints_are_rescued() {
        assert!(d_adv_loss(&probs(&[1.5], &[0.5]), DAdvKind::Logistic).is_err());
        assert!(d_adv_loss(&probs(&[-0.1], &[0.5]), DAdvKind::Logistic).is_err());
        // Exact 0 and 1 are legal inputs; the clamp keeps the logs finite.
        let l = d_adv_loss(&probs(&[1.0], &[0.0]), DAdvKind::Logistic).unwrap();
        assert!(l.is_finite());
        assert!(d_adv_loss(&probs(&[f64::NAN], &[0.5]), DAdvKind::Logistic).is_err());
    }

    #[test]
    fn hinge_rejects_probabilities() {
        assert!(d_adv_loss(&probs(&[0.5], &[0.5]), DAdvKind::Hinge).is_err());
        assert!(g_adv_loss(&[0.5], ScoreKind::Probabilities, GAdvKind::Hinge).is_err());
    }

    #[test]
    fn logistic_d_loss_is_stationary_at_half_on_matched_batches() {
        // Parameterize all scores by one logit t, real and fake alike:
        // f(t) = softplus(-t) + softplus(t). Its derivative at t=0 must be 0.
        let g = finite_diff_gradient(
            |t| d_adv_loss(&logits(&[t[0], t[0]], &[t[0], t[0]]), DAdvKind::Logistic).unwrap(),
            &[0.0],
            FD_STEP,
        )
        .unwrap();
        assert!(
            g[0].abs() < 1e-9,
            "gradient at the symmetric point: {}",
            g[0]
        );
    }

    #[test]
    fn compose_with_zero_weights_reduces_to_the_plain_gan() {
        let agkd = AgkdOutput {
            l_kd: 0.5,
            l_agg_raw: 0.25,
            gate_open: true,
            l_total: 0.75,
        };
        let cgkd = CgkdOutput {
            l_pd: 2.0,
            l_kd: 0.25,
            l_total: 2.25,
        };
        let w = LossWeights {
            w_agkd: 0.0,
            w_cgkd: 0.0,
            w_pd: 0.0,
            route_kd_to_g: true,
        };
        let b = compose_objective(1.25, -0.5, Some(&agkd), Some(&cgkd), &w).unwrap();
        assert_eq!(b.d_loss, 1.25);
        assert_eq!(b.g_loss, -0.5);
    }

    #[test]
    fn compose_hand_sum() {
        let agkd = AgkdOutput {
            l_kd: 0.5,
            l_agg_raw: 0.0,
            gate_open: false,
            l_total: 0.5,
        };
        let cgkd = CgkdOutput {
            l_pd: 3.0,
            l_kd: 0.25,
            l_total: 3.25,
        };
        let b =
            compose_objective(1.0, 0.5, Some(&agkd), Some(&cgkd), &LossWeights::default()).unwrap();
        assert_eq!(b.d_loss, 1.75);
        assert_eq!(b.g_loss, 0.5 + 3.0 + 0.25);
        assert!(b.recompose_check(1e-6));
    }

    #[test]
    fn compose_is_linear_in_each_component() {
        let w = LossWeights::default();
        let agkd = |x: f64| AgkdOutput {
            l_kd: x,
            l_agg_raw: 0.0,
            gate_open: false,
            l_total: x,
        };
        let b1 = compose_objective(1.0, 0.0, Some(&agkd(1.0)), None, &w).unwrap();
        let b2 = compose_objective(1.0, 0.0, Some(&agkd(2.0)), None, &w).unwrap();
        let b3 = compose_objective(1.0, 0.0, Some(&agkd(3.0)), None, &w).unwrap();
        let d1 = b2.d_loss - b1.d_loss;
        let d2 = b3.d_loss - b2.d_loss;
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn compose_without_kd_modules_is_bitwise_plain() {
        let b = compose_objective(0.1 + 0.2, -0.3, None, None, &LossWeights::default()).unwrap();
        assert_eq!(b.d_loss.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(b.g_loss.to_bits(), (-0.3f64).to_bits());
        assert!(b.recompose_check(1e-6));
        assert!(!b.components.contains_key("l_agkd"));
        assert!(!b.components.contains_key("l_cgkd_kd"));
    }

    #[test]
    fn compose_rejects_non_finite_components_by_name() {
        let err =
            compose_objective(f64::NAN, 0.0, None, None, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("l_d"), "{}", err);
        let cgkd = CgkdOutput {
            l_pd: f64::INFINITY,
            l_kd: 0.0,
            l_total: f64::INFINITY,
        };
        let err =
            compose_objective(0.0, 0.0, None, Some(&cgkd), &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("l_cgkd_pd"), "{}", err);
    }

    #[test]
    fn tape_adversarial_losses_match_value_level() {
        let mut rng = StreamRng::new(2, "test");
        let sr = rng.normal_mat(6, 1);
        let sf = rng.normal_mat(6, 1);
        let scores = logits(sr.data(), sf.data());

        for kind in [DAdvKind::Logistic, DAdvKind::Hinge] {
            let mut tape = Tape::new();
            let vr = tape.constant(sr.clone());
            let vf = tape.constant(sf.clone());
            let l = d_adv_on_tape(&mut tape, vr, vf, kind);
            assert!((tape.scalar(l) - d_adv_loss(&scores, kind).unwrap()).abs() < 1e-12);
        }
        for kind in [
            GAdvKind::LogisticSaturating,
            GAdvKind::LogisticNonSaturating,
            GAdvKind::Hinge,
        ] {
            let mut tape = Tape::new();
            let vf = tape.constant(sf.clone());
            let l = g_adv_on_tape(&mut tape, vf, kind);
            assert!(
                (tape.scalar(l) - g_adv_loss(sf.data(), ScoreKind::Logits, kind).unwrap()).abs()
                    < 1e-12
            );
        }
    }

    #[test]
    fn tape_adversarial_gradients_match_finite_differences() {
        let mut rng = StreamRng::new(3, "test");
        // Keep logits away from the hinge kinks at -1 and 1.
        let sample = |rng: &mut StreamRng| -> Mat {
            loop {
                let m = rng.normal_mat(5, 1);
                if m.data()
                    .iter()
                    .all(|&s| (s - 1.0).abs() > 1e-2 && (s + 1.0).abs() > 1e-2)
                {
                    return m;
                }
            }
        };
        let sr = sample(&mut rng);
        let sf = sample(&mut rng);

        for kind in [DAdvKind::Logistic, DAdvKind::Hinge] {
            let mut tape = Tape::new();
            let vr = tape.param(sr.clone());
            let vf = tape.param(sf.clone());
            let l = d_adv_on_tape(&mut tape, vr, vf, kind);
            let grads = tape.backward(l);
            for (var, base, which) in [(vr, &sr, "real"), (vf, &sf, "fake")] {
                let analytic = grads.get(var).unwrap().clone();
                let other = if which == "real" {
                    sf.clone()
                } else {
                    sr.clone()
                };
                let numeric = finite_diff_gradient(
                    |theta| {
                        let (r, f) = if which == "real" {
                            (theta.to_vec(), other.data().to_vec())
                        } else {
                            (other.data().to_vec(), theta.to_vec())
                        };
                        d_adv_loss(&logits(&r, &f), kind).unwrap()
                    },
                    base.data(),
                    FD_STEP,
                )
                .unwrap();
                for (&a, &n) in analytic.data().iter().zip(&numeric) {
                    let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                    assert!(rel < 1e-4, "{:?} {}: {} vs {}", kind, which, a, n);
                }
            }
        }

        for kind in [
            GAdvKind::LogisticSaturating,
            GAdvKind::LogisticNonSaturating,
            GAdvKind::Hinge,
        ] {
            let mut tape = Tape::new();
            let vf = tape.param(sf.clone());
            let l = g_adv_on_tape(&mut tape, vf, kind);
            let grads = tape.backward(l);
            let analytic = grads.get(vf).unwrap().clone();
            let numeric = finite_diff_gradient(
                |theta| g_adv_loss(theta, ScoreKind::Logits, kind).unwrap(),
                sf.data(),
                FD_STEP,
            )
            .unwrap();
            for (&a, &n) in analytic.data().iter().zip(&numeric) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                assert!(rel < 1e-4, "{:?}: {} vs {}", kind, a, n);
            }
        }
    }
}
