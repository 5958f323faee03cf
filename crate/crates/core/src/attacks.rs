//! l∞ attacks (FGSM, PGD) on scalar-output networks and robust accuracy.
//!
//! Labels are ±1 and a prediction is correct when `f(x) · y > 0`; an output
//! of exactly zero counts as wrong.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    pub random_start: bool,
    /// Optional per-coordinate clamp `[low, high]` applied after projection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_bounds: Option<(f64, f64)>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.3,
            step_size: 0.03,
            steps: 20,
            random_start: true,
            input_bounds: None,
        }
    }
}

impl AttackConfig {
    /// Single signed-gradient step of size ε.
    pub fn fgsm(epsilon: f64) -> Self {
        AttackConfig {
            epsilon,
            step_size: epsilon,
            steps: 1,
            random_start: false,
            input_bounds: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::Config(format!("step_size must be > 0, got {}", self.step_size)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.steps > 1 && self.epsilon > 0.0 && self.step_size > 2.0 * self.epsilon {
            return Err(Error::Config(format!(
                "step_size {} exceeds 2 * epsilon {}",
                self.step_size, self.epsilon
            )));
        }
        if let Some((lo, hi)) = self.input_bounds {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::Config(format!("input bounds [{lo}, {hi}] are empty")));
            }
        }
        Ok(())
    }
}

/// Sign with sign(0) = 0.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects `cand` onto `[orig − ε, orig + ε] ∩ bounds` such that the computed
/// `|result − orig|` never exceeds ε, even after rounding.
fn project(orig: f64, cand: f64, eps: f64, bounds: Option<(f64, f64)>) -> f64 {
    let mut v = cand.clamp(orig - eps, orig + eps);
    if let Some((lo, hi)) = bounds {
        v = v.clamp(lo, hi);
    }
    while (v - orig).abs() > eps {
        v = if v > orig { v.next_down() } else { v.next_up() };
    }
    v
}

fn step(
    net: &Network,
    origin: &[f64],
    current: &[f64],
    y: f64,
    size: f64,
    eps: f64,
    bounds: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    let g = net.grad_input(current, y)?;
    Ok(origin
        .iter()
        .zip(current)
        .zip(&g)
        .map(|((&o, &c), &gi)| project(o, c + size * sign(gi), eps, bounds))
        .collect())
}

/// x' = x + ε · sign(∇ₓ L̂).
pub fn fgsm(net: &Network, x: &[f64], y: f64, epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::Config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    step(net, x, x, y, epsilon, epsilon, None)
}

pub fn pgd(net: &Network, x: &[f64], y: f64, cfg: &AttackConfig, seed: u64) -> Result<Vec<f64>> {
    pgd_observed(net, x, y, cfg, seed, |_, _| {})
}

/// PGD that reports every iterate (`step`, point) to `observe`; iterate 0 is
/// the (possibly random) start.
pub fn pgd_observed<F>(
    net: &Network,
    x: &[f64],
    y: f64,
    cfg: &AttackConfig,
    seed: u64,
    mut observe: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64]),
{
    cfg.validate()?;
    if x.len() != net.input_dim() {
        return Err(Error::Shape {
            expected: net.input_dim(),
            got: x.len(),
        });
    }
    let eps = cfg.epsilon;
    if eps == 0.0 {
        observe(0, x);
        return Ok(x.to_vec());
    }
    let mut cur: Vec<f64> = if cfg.random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        x.iter()
            .map(|&o| project(o, o + rng.random_range(-eps..=eps), eps, cfg.input_bounds))
            .collect()
    } else {
        x.iter().map(|&o| project(o, o, eps, cfg.input_bounds)).collect()
    };
    observe(0, &cur);
    for t in 1..=cfg.steps {
        cur = step(net, x, &cur, y, cfg.step_size, eps, cfg.input_bounds)?;
        observe(t, &cur);
    }
    Ok(cur)
}

/// Per-sample attack outcome under best-of selection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    /// The clean point or the PGD point, whichever has the larger loss.
    pub point: Vec<f64>,
    pub clean_loss: f64,
    pub loss: f64,
    pub clean_correct: bool,
    /// Correct on the clean point and on the selected point.
    pub robust_correct: bool,
}

pub fn attack_sample(net: &Network, x: &[f64], y: f64, cfg: &AttackConfig, seed: u64) -> Result<AttackOutcome> {
    let adv = pgd(net, x, y, cfg, seed)?;
    let f_clean = net.predict(x)?;
    let f_adv = net.predict(&adv)?;
    let clean_loss = 0.5 * (f_clean - y) * (f_clean - y);
    let adv_loss = 0.5 * (f_adv - y) * (f_adv - y);
    let clean_correct = f_clean * y > 0.0;
    let (point, loss, f) = if adv_loss >= clean_loss {
        (adv, adv_loss, f_adv)
    } else {
        (x.to_vec(), clean_loss, f_clean)
    };
    Ok(AttackOutcome {
        point,
        clean_loss,
        loss,
        clean_correct,
        robust_correct: clean_correct && f * y > 0.0,
    })
}

pub fn clean_accuracy(net: &Network, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("accuracy of an empty dataset".into()));
    }
    let mut correct = 0usize;
    for s in samples {
        if net.predict(&s.x)? * s.y > 0.0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Fraction of samples still classified correctly under PGD. Sample `i` is
/// attacked with seed `seed ^ i`.
pub fn robust_accuracy(net: &Network, samples: &[Sample], cfg: &AttackConfig, seed: u64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("robust accuracy of an empty dataset".into()));
    }
    cfg.validate()?;
    let outcomes = par::map(samples, |i, s| attack_sample(net, &s.x, s.y, cfg, seed ^ i as u64));
    let mut correct = 0usize;
    for o in outcomes {
        if o?.robust_correct {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
