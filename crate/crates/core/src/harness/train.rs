use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Split};
use super::{HarnessError, Result};
use crate::netcore::{sgd_step, Granularity, Network, OptimState, PenaltyMap};

/// Piecewise-constant learning rate keyed by epoch, written `0:1e-2, 60:1e-3, 90:1e-4`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    milestones: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self { milestones: vec![(0, lr)] }
    }

    pub fn at_epoch(&self, epoch: usize) -> f64 {
        self.milestones.iter().rev().find(|(e, _)| *e <= epoch).expect("starts at epoch 0").1
    }

    pub fn milestones(&self) -> &[(usize, f64)] {
        &self.milestones
    }
}

impl FromStr for LrSchedule {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: String| HarnessError::Config(format!("lr schedule {s:?}: {m}"));
        let mut milestones = Vec::new();
        for item in s.split(',') {
            let (e, lr) = item.split_once(':').ok_or_else(|| bad(format!("entry {item:?} is not epoch:lr")))?;
            let e: usize = e.trim().parse().map_err(|_| bad(format!("bad epoch {e:?}")))?;
            let lr: f64 = lr.trim().parse().map_err(|_| bad(format!("bad rate {lr:?}")))?;
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(bad(format!("rate {lr} must be positive")));
            }
            if let Some(&(prev, _)) = milestones.last() {
                if e <= prev {
                    return Err(bad("epochs must increase".into()));
                }
            } else if e != 0 {
                return Err(bad("first milestone must be epoch 0".into()));
            }
            milestones.push((e, lr));
        }
        Ok(Self { milestones })
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (e, lr)) in self.milestones.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{e}:{lr:e}")?;
        }
        Ok(())
    }
}

impl Serialize for LrSchedule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LrSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Epoch-based SGD schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_decay() -> f64 {
    5e-4
}

impl TrainSchedule {
    /// Multi-step shape `0:1e-2, 60:1e-3, 90:1e-4` scaled to `epochs`.
    pub fn multistep(epochs: usize, batch_size: usize) -> Self {
        let m1 = (epochs / 2).max(1);
        let m2 = (epochs * 3 / 4).max(m1 + 1);
        Self {
            epochs,
            batch_size,
            lr: LrSchedule { milestones: vec![(0, 1e-2), (m1, 1e-3), (m2, 1e-4)] },
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(HarnessError::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(HarnessError::Config(format!("weight_decay {} must be >= 0", self.weight_decay)));
        }
        Ok(())
    }
}

/// Reshuffles the training rows every epoch.
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, batch: batch.min(n).max(1), epoch: 0, rng }
    }

    /// Epoch the next batch belongs to.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }

    pub fn next_rows(&mut self) -> &[usize] {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let rows = &self.order[self.pos..end];
        self.pos = end;
        rows
    }

    pub fn next_batch(&mut self, split: &Split, features: usize) -> (Vec<f64>, Vec<usize>) {
        let rows = self.next_rows().to_vec();
        split.gather(&rows, features)
    }
}

/// Derives an independent stream seed from a run seed.
pub(crate) fn sub_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One SGD step on the next minibatch; returns the batch loss.
pub(crate) fn train_step(
    net: &mut Network,
    data: &Dataset,
    batcher: &mut Batcher,
    opt: &mut OptimState,
    lambdas: &PenaltyMap,
) -> Result<f64> {
    let (x, y) = batcher.next_batch(&data.train, data.features());
    let (loss, grads) = net.loss_and_grads(&x, &y)?;
    sgd_step(net, &grads, opt, lambdas)?;
    Ok(loss)
}

/// Trains for `schedule.epochs` full passes with uniform decay `γ`.
/// Called with every completed step as `(step, epoch, loss)`.
pub fn train_epochs(
    net: &mut Network,
    data: &Dataset,
    schedule: &TrainSchedule,
    seed: u64,
    mut on_step: impl FnMut(&Network, usize, f64) -> Result<()>,
) -> Result<()> {
    schedule.validate()?;
    if schedule.epochs == 0 {
        return Ok(());
    }
    let mut batcher = Batcher::new(data.train.len(), schedule.batch_size, seed);
    let total = schedule.epochs * batcher.steps_per_epoch();
    let mut opt = OptimState::new(schedule.lr.at_epoch(0), schedule.momentum, schedule.weight_decay)?;
    let lambdas = PenaltyMap::uniform(net, Granularity::Filter, schedule.weight_decay);
    for step in 0..total {
        opt.learning_rate = schedule.lr.at_epoch(batcher.epoch());
        let loss = train_step(net, data, &mut batcher, &mut opt, &lambdas).map_err(|e| match e {
            HarnessError::Net(n) => HarnessError::Diverged(format!("step {step}: {n}")),
            other => other,
        })?;
        on_step(net, step, loss)?;
    }
    Ok(())
}

/// Baseline training from a fresh initialisation seeded by `seed`.
pub fn pretrain(net: &Network, data: &Dataset, schedule: &TrainSchedule, seed: u64) -> Result<Network> {
    let mut out = net.clone();
    train_epochs(&mut out, data, schedule, sub_seed(seed, 1), |_, _, _| Ok(()))?;
    Ok(out)
}

/// Retrains a pruned network. Frozen weights stay exactly zero.
pub fn finetune(net: &Network, data: &Dataset, schedule: &TrainSchedule, seed: u64) -> Result<Network> {
    let mut out = net.clone();
    train_epochs(&mut out, data, schedule, sub_seed(seed, 3), |_, _, _| Ok(()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_parses_and_steps() {
        let s: LrSchedule = "0:1e-2, 60:1e-3, 90:1e-4".parse().unwrap();
        assert_eq!(s.milestones(), &[(0, 1e-2), (60, 1e-3), (90, 1e-4)]);
        assert_eq!(s.at_epoch(0), 1e-2);
        assert_eq!(s.at_epoch(59), 1e-2);
        assert_eq!(s.at_epoch(60), 1e-3);
        assert_eq!(s.at_epoch(119), 1e-4);
        let again: LrSchedule = s.to_string().parse().unwrap();
        assert_eq!(again, s);
        for bad in ["", "5:1e-2", "0:1e-2, 0:1e-3", "0:-1", "0:x", "0"] {
            assert!(bad.parse::<LrSchedule>().is_err(), "{bad}");
        }
    }

    #[test]
    fn batcher_covers_each_row_once_per_epoch() {
        let mut b = Batcher::new(10, 4, 1);
        assert_eq!(b.steps_per_epoch(), 3);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| b.next_rows().to_vec()).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(b.epoch(), 0);
        b.next_rows();
        assert_eq!(b.epoch(), 1);
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(1, 1), sub_seed(1, 2));
        assert_ne!(sub_seed(1, 1), sub_seed(2, 1));
    }
}
