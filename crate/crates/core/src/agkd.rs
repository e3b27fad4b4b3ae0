//! Aggregated generative distillation: L1 feature mimicry between teacher and
//! discriminator features, plus a stochastically gated cross term that swaps
//! the real and fake roles to blunt real-fake discriminability.

use crate::autodiff::{Tape, Var};
use crate::error::{KdError, Result};
use crate::mat::Mat;
use crate::numerics::l1_mean;
use crate::rng::StreamRng;

/// The four feature batches the loss consumes, all [B x M]:
/// teacher features of real and generated images, and the discriminator's
/// projected features of the same two batches.
#[derive(Debug, Clone, Copy)]
pub struct AgkdInputs<'a> {
    pub teacher_real: &'a Mat,
    pub teacher_fake: &'a Mat,
    pub student_real: &'a Mat,
    pub student_fake: &'a Mat,
}

impl<'a> AgkdInputs<'a> {
    fn validate(&self) -> Result<()> {
        let shape = (self.teacher_real.rows(), self.teacher_real.cols());
        for (name, m) in [
            ("teacher_fake", self.teacher_fake),
            ("student_real", self.student_real),
            ("student_fake", self.student_fake),
        ] {
            if (m.rows(), m.cols()) != shape {
                return Err(KdError::invalid(format!(
                    "agkd: {} is {}x{}, expected {}x{} like teacher_real",
                    name,
                    m.rows(),
                    m.cols(),
                    shape.0,
                    shape.1
                )));
            }
        }
        Ok(())
    }
}

/// Gate parameters: the cross term fires with probability `p`, drawing its
/// Bernoulli variable from the dedicated gate stream only.
pub struct GateConfig<'a> {
    pub p: f64,
    pub stream: &'a mut StreamRng,
}

/// Loss pieces for one application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgkdOutput {
    pub l_kd: f64,
    pub l_agg_raw: f64,
    pub gate_open: bool,
    pub l_total: f64,
}

/// Straight mimicry: matched real-real and fake-fake feature pairs.
pub fn agkd_kd_loss(inputs: &AgkdInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(l1_mean(inputs.teacher_real, inputs.student_real)?
        + l1_mean(inputs.teacher_fake, inputs.student_fake)?)
}

/// Cross aggregation: real teacher features against fake student features
/// and vice versa.
pub fn agkd_agg_loss(inputs: &AgkdInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(l1_mean(inputs.teacher_real, inputs.student_fake)?
        + l1_mean(inputs.teacher_fake, inputs.student_real)?)
}

/// Draws q uniform in [0,1) from the gate stream; the gate opens iff q <= p.
pub fn sample_gate(cfg: &mut GateConfig) -> bool {
    let q = cfg.stream.uniform();
    q <= cfg.p
}

/// Full loss: mimicry always, aggregation when the gate opens. The gate is
/// sampled exactly once per call.
pub fn agkd_total(inputs: &AgkdInputs, cfg: &mut GateConfig) -> Result<AgkdOutput> {
    if !(0.0..=1.0).contains(&cfg.p) {
        return Err(KdError::invalid(format!(
            "agkd: gate probability {} outside [0,1]",
            cfg.p
        )));
    }
    let l_kd = agkd_kd_loss(inputs)?;
    let l_agg_raw = agkd_agg_loss(inputs)?;
    let gate_open = sample_gate(cfg);
    let l_total = if gate_open { l_kd + l_agg_raw } else { l_kd };
    Ok(AgkdOutput {
        l_kd,
        l_agg_raw,
        gate_open,
        l_total,
    })
}

/// Tape-level loss nodes mirroring [`agkd_total`]. The caller samples the
/// gate (once per training step) and passes the outcome in, so the loss
/// graph itself stays deterministic.
pub struct AgkdVars {
    pub l_kd: Var,
    pub l_agg_raw: Var,
    pub gate_open: bool,
    pub l_total: Var,
}

/// Mean |a - b| as a tape node.
pub fn l1_mean_on_tape(tape: &mut Tape, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let d = tape.abs(d);
    tape.mean(d)
}

pub fn agkd_on_tape(
    tape: &mut Tape,
    teacher_real: Var,
    teacher_fake: Var,
    student_real: Var,
    student_fake: Var,
    gate_open: bool,
) -> AgkdVars {
    let kd_real = l1_mean_on_tape(tape, teacher_real, student_real);
    let kd_fake = l1_mean_on_tape(tape, teacher_fake, student_fake);
    let l_kd = tape.add(kd_real, kd_fake);
    let agg_a = l1_mean_on_tape(tape, teacher_real, student_fake);
    let agg_b = l1_mean_on_tape(tape, teacher_fake, student_real);
    let l_agg_raw = tape.add(agg_a, agg_b);
    let l_total = if gate_open {
        tape.add(l_kd, l_agg_raw)
    } else {
        l_kd
    };
    AgkdVars {
        l_kd,
        l_agg_raw,
        gate_open,
        l_total,
    }
}
