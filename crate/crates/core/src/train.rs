//! Mini-batch SGD with momentum on ½(f − y)², optionally on PGD examples.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainMode {
    Standard,
    /// Every batch is replaced by PGD examples against the current weights.
    PgdAdversarial {
        attack: AttackConfig,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub mode: TrainMode,
    pub seed: u64,
    /// Attack used for the per-epoch robust test accuracy in the history.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_attack: Option<AttackConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            mode: TrainMode::Standard,
            seed: 0,
            history_attack: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        // Zero is allowed: it freezes the network, which is handy in tests.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if let TrainMode::PgdAdversarial { attack } = &self.mode {
            attack.validate()?;
        }
        if let Some(a) = &self.history_attack {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the (possibly adversarial) training inputs of the epoch.
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub robust_test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

/// SplitMix64 finaliser over two words, for deriving per-item seeds.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Trains `net` on `dataset.train`; deterministic in `cfg.seed`.
pub fn train_network(mut net: Network, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Network, History)> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    if dataset.all().any(|s| s.y != 1.0 && s.y != -1.0) {
        return Err(Error::Domain("labels must be +1 or -1".into()));
    }
    let p = net.param_count();
    let mut theta = net.params();
    let mut velocity = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = History::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for (slot, &idx) in batch.iter().enumerate() {
                let s = &dataset.train[idx];
                loss_sum += match &cfg.mode {
                    TrainMode::Standard => net.accumulate_grad_params(&s.x, s.y, scale, &mut grad)?,
                    TrainMode::PgdAdversarial { attack } => {
                        let seed = mix_seed(mix_seed(cfg.seed, epoch as u64), (b * cfg.batch_size + slot) as u64);
                        let adv = attacks::pgd(&net, &s.x, s.y, attack, seed)?;
                        net.accumulate_grad_params(&adv, s.y, scale, &mut grad)?
                    }
                };
            }
            for ((t, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *t -= cfg.learning_rate * *v;
            }
            if theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            net.set_params(&theta)?;
        }
        let train_loss = loss_sum / dataset.train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let eval_set = if dataset.test.is_empty() {
            &dataset.train
        } else {
            &dataset.test
        };
        let test_accuracy = attacks::clean_accuracy(&net, eval_set)?;
        let robust_test_accuracy = match &cfg.history_attack {
            Some(a) => Some(attacks::robust_accuracy(
                &net,
                eval_set,
                a,
                mix_seed(cfg.seed, epoch as u64),
            )?),
            None => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            test_accuracy,
            robust_test_accuracy,
        });
    }
    Ok((net, history))
}
