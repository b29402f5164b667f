//! End-to-end pipelines: pretrain, regularise, prune, fine-tune.
//!
//! A run starts from a baseline network and produces an
//! [`ExperimentRecord`]. [`compare_schedules`] runs two pruning schedules
//! from the same baseline over several seeds with the removal set held
//! fixed between them; [`track_separation`] follows group-norm dispersion
//! while a GReg-2 penalty grows.

mod data;
mod record;
mod train;

use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{load_dataset, Dataset, DatasetSpec, Split};
pub use record::{ComparisonTable, ExperimentRecord, RecordRow, RunSummary, SeparationPoint, SeparationTrace};
pub use train::{finetune, pretrain, train_epochs, Batcher, LrSchedule, TrainSchedule};

use crate::groups::{
    apply_hard_prune, group_l1_norms, norm_dispersion, parse_pruning_plan, random_prune_set, select_prune_set,
    GroupError, MaskVector, PruningPlan,
};
use crate::netcore::{Activation, Granularity, LayerSpec, NetError, Network, OptimState, PenaltyMap, Shape3};
use crate::scheduler::{greg1_init, greg1_init_with_mask, greg2_init, Phase, RegConfig, RegState, SchedError};
use train::{sub_seed, train_step};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("growing phase exceeded its budget of {budget} iterations")]
    BudgetExceeded { budget: usize },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Network topology; the input shape and logits width come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    #[serde(default)]
    pub conv: Vec<ConvSpec>,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
}

impl NetSpec {
    pub fn mlp(hidden: &[usize]) -> Self {
        Self { conv: Vec::new(), hidden: hidden.to_vec() }
    }

    pub fn layer_specs(&self, classes: usize) -> Vec<LayerSpec> {
        let mut out: Vec<LayerSpec> =
            self.conv.iter().map(|c| LayerSpec::conv(c.filters, c.kernel, c.kernel, Activation::Relu)).collect();
        out.extend(self.hidden.iter().map(|&h| LayerSpec::dense(h, Activation::Relu)));
        out.push(LayerSpec::logits(classes));
        out
    }

    pub fn build(&self, input: Shape3, classes: usize, seed: u64) -> Result<Network> {
        Ok(Network::new(input, &self.layer_specs(classes), seed)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetSchedule {
    /// Grow a GReg-1 penalty on the random subset.
    Greg,
    /// Remove the random subset immediately.
    Oneshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Greg1,
    Greg2,
    OneshotL1,
    RandomSubset { mask_seed: u64, schedule: SubsetSchedule },
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Greg1 => "greg1",
            Method::Greg2 => "greg2",
            Method::OneshotL1 => "oneshot_l1",
            Method::RandomSubset { schedule: SubsetSchedule::Greg, .. } => "random_greg",
            Method::RandomSubset { schedule: SubsetSchedule::Oneshot, .. } => "random_oneshot",
        }
    }

    fn is_regularized(&self) -> bool {
        matches!(self, Method::Greg1 | Method::Greg2 | Method::RandomSubset { schedule: SubsetSchedule::Greg, .. })
    }
}

/// Settings of the regularisation phase itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrunePhase {
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

fn default_momentum() -> f64 {
    0.9
}

impl Default for PrunePhase {
    fn default() -> Self {
        Self { lr: 1e-3, batch_size: 64, momentum: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub network: NetSpec,
    pub dataset: DatasetSpec,
    pub plan: String,
    #[serde(default = "default_granularity")]
    pub granularity: Granularity,
    pub method: Method,
    pub reg: RegConfig,
    pub pretrain: TrainSchedule,
    pub finetune: TrainSchedule,
    #[serde(default)]
    pub prune_phase: PrunePhase,
    pub seed: u64,
    /// Iterations between record rows.
    #[serde(default = "default_metric_every")]
    pub metric_every: usize,
    /// Cap on iterations spent growing penalties.
    #[serde(default = "default_budget")]
    pub max_growing_iters: usize,
}

fn default_granularity() -> Granularity {
    Granularity::Filter
}
fn default_metric_every() -> usize {
    100
}
fn default_budget() -> usize {
    2_000_000
}

impl ExperimentConfig {
    /// Desk-scale setup: 256-128-64 MLP on two-moons, filter groups on the
    /// two inner hidden layers.
    pub fn desk(method: Method, ratio: f64) -> Self {
        let reg = match method {
            Method::Greg2 => RegConfig::desk_greg2(),
            _ => RegConfig::desk_greg1(),
        };
        Self {
            name: format!("desk-{}", method.label()),
            network: NetSpec::mlp(&[256, 128, 64]),
            dataset: DatasetSpec::Moons { n_train: 1000, n_val: 500, noise: 0.1, seed: 0 },
            plan: format!("[0, {ratio}, {ratio}, 0]"),
            granularity: Granularity::Filter,
            method,
            reg,
            pretrain: TrainSchedule::multistep(40, 64),
            finetune: TrainSchedule::multistep(12, 64),
            prune_phase: PrunePhase::default(),
            seed: 0,
            metric_every: 100,
            max_growing_iters: default_budget(),
        }
    }

    /// Reference schedule constants: `δλ` per method, `K_u = 10`,
    /// `K_s = 5000`, 120 fine-tuning epochs. Slow.
    pub fn paper(method: Method, ratio: f64) -> Self {
        let reg = match method {
            Method::Greg2 => RegConfig::paper_greg2(),
            _ => RegConfig::paper_greg1(),
        };
        let mut finetune = TrainSchedule::multistep(120, 64);
        finetune.lr = "0:1e-2, 60:1e-3, 90:1e-4".parse().expect("valid literal");
        Self { reg, finetune, name: format!("paper-{}", method.label()), ..Self::desk(method, ratio) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.metric_every == 0 {
            return bad("metric_every must be >= 1".into());
        }
        if self.prune_phase.batch_size == 0 || !(self.prune_phase.lr > 0.0) {
            return bad("prune_phase needs lr > 0 and batch_size >= 1".into());
        }
        if !(0.0..1.0).contains(&self.prune_phase.momentum) {
            return bad(format!("prune_phase momentum {} outside [0, 1)", self.prune_phase.momentum));
        }
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.method.is_regularized() {
            let m = match self.method {
                Method::Greg2 => crate::scheduler::RegMethod::Greg2,
                _ => crate::scheduler::RegMethod::Greg1,
            };
            self.reg.validate(m)?;
        }
        let layers = self.network.conv.len() + self.network.hidden.len() + 1;
        parse_pruning_plan(&self.plan, layers, self.granularity)?;
        Ok(())
    }

    pub fn plan_for(&self, net: &Network) -> Result<PruningPlan> {
        let plan = parse_pruning_plan(&self.plan, net.layers().len(), self.granularity)?;
        plan.validate_for(net)?;
        Ok(plan)
    }
}

/// Fresh network for `cfg.seed`, trained under `cfg.pretrain`.
pub fn pretrain_baseline(cfg: &ExperimentConfig, data: &Dataset) -> Result<Network> {
    cfg.validate()?;
    let init = cfg.network.build(data.shape, data.classes, sub_seed(cfg.seed, 0))?;
    pretrain(&init, data, &cfg.pretrain, cfg.seed)
}

/// Everything a single run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: ExperimentRecord,
    /// Network the mask was applied to: the baseline for one-shot methods,
    /// the regularised network otherwise.
    pub pre_prune: Network,
    pub pruned: Network,
    pub finetuned: Network,
    pub mask: MaskVector,
    /// Schedule state at the prune; `None` for one-shot methods.
    pub reg_state: Option<RegState>,
    /// Norm snapshots at every regularisation record row.
    pub trace: SeparationTrace,
}

fn val_acc(net: &Network, data: &Dataset) -> Result<f64> {
    Ok(net.accuracy(&data.val.x, &data.val.y)?)
}

fn dispersions(net: &Network, granularity: Granularity) -> Vec<Option<f64>> {
    let norms = group_l1_norms(net, granularity, 0);
    (0..net.layers().len()).map(|l| norm_dispersion(norms.layer(l)).ok()).collect()
}

/// Where penalties come from during the regularisation loop.
enum Penalties<'a> {
    Schedule(&'a mut RegState),
    /// Fixed map for a set number of iterations.
    Fixed { map: PenaltyMap, iters: usize },
}

/// Runs SGD under growing (or fixed) penalties until the schedule is done.
/// `observe` sees the network after every recorded iteration.
fn regularize(
    net: &mut Network,
    data: &Dataset,
    cfg: &ExperimentConfig,
    mut pen: Penalties<'_>,
    rows: &mut Vec<RecordRow>,
    mut observe: impl FnMut(&Network, usize, f64),
) -> Result<usize> {
    let pp = cfg.prune_phase;
    let mut opt = OptimState::new(pp.lr, pp.momentum, cfg.reg.base_decay)?;
    let mut batcher = Batcher::new(data.train.len(), pp.batch_size, sub_seed(cfg.seed, 2));
    let mut it = 0;
    loop {
        let (map, phase, lambda, done) = match &mut pen {
            Penalties::Schedule(state) => {
                if state.is_prune_ready() {
                    break;
                }
                let phase = state.phase();
                if matches!(phase, Phase::Growing | Phase::Picked) && state.iter() >= cfg.max_growing_iters {
                    return Err(HarnessError::BudgetExceeded { budget: cfg.max_growing_iters });
                }
                let map = state.tick(net)?;
                (map, phase.as_str(), state.lambda(), state.is_prune_ready())
            }
            Penalties::Fixed { map, iters } => {
                if it >= *iters {
                    break;
                }
                (map.clone(), "fixed", 0.0, it + 1 == *iters)
            }
        };
        let loss = train_step(net, data, &mut batcher, &mut opt, &map)
            .map_err(|e| HarnessError::Diverged(format!("regularisation step {it}: {e}")))?;
        if it % cfg.metric_every == 0 || done {
            rows.push(RecordRow {
                iter: it,
                phase,
                train_loss: loss,
                val_acc: val_acc(net, data)?,
                lambda,
                dispersion: dispersions(net, cfg.granularity),
            });
            observe(net, it, lambda);
        }
        it += 1;
    }
    Ok(it)
}

/// Runs `cfg.method` from `baseline` and fine-tunes the pruned network.
pub fn run_method(cfg: &ExperimentConfig, data: &Dataset, baseline: &Network) -> Result<RunOutput> {
    cfg.validate()?;
    let plan = cfg.plan_for(baseline)?;
    let baseline_acc = val_acc(baseline, data)?;
    let mut rows = Vec::new();
    let mut net = baseline.clone();
    let mut state = match cfg.method {
        Method::OneshotL1 | Method::RandomSubset { schedule: SubsetSchedule::Oneshot, .. } => None,
        Method::Greg1 => Some(greg1_init(baseline, &plan, &cfg.reg)?),
        Method::Greg2 => Some(greg2_init(baseline, &plan, &cfg.reg)?),
        Method::RandomSubset { mask_seed, schedule: SubsetSchedule::Greg } => {
            let mask = random_prune_set(baseline, &plan, mask_seed)?;
            Some(greg1_init_with_mask(baseline, &plan, &mask, &cfg.reg)?)
        }
    };
    let mut trace = SeparationTrace { layers: plan.target_layers().collect(), points: Vec::new() };
    let (mask, reg_iters) = match state.as_mut() {
        Some(state) => {
            let iters = regularize(&mut net, data, cfg, Penalties::Schedule(state), &mut rows, |n, iter, lambda| {
                trace.points.push(snapshot(n, cfg.granularity, iter, lambda));
            })?;
            (state.prune_mask(&net)?, iters)
        }
        None => {
            let mask = match cfg.method {
                Method::RandomSubset { mask_seed, .. } => random_prune_set(baseline, &plan, mask_seed)?,
                _ => select_prune_set(&group_l1_norms(baseline, plan.granularity(), 0), &plan)?,
            };
            (mask, 0)
        }
    };
    let pre_prune_acc = val_acc(&net, data)?;
    let pruned = apply_hard_prune(&net, &mask)?;
    let post_prune_acc = val_acc(&pruned, data)?;

    let mut finetuned = pruned.clone();
    let every = cfg.metric_every;
    let mut ft_err = None;
    let total_ft = cfg.finetune.epochs * Batcher::new(data.train.len(), cfg.finetune.batch_size, 0).steps_per_epoch();
    train_epochs(&mut finetuned, data, &cfg.finetune, sub_seed(cfg.seed, 3), |n, step, loss| {
        if step % every == 0 || step + 1 == total_ft {
            match val_acc(n, data) {
                Ok(acc) => rows.push(RecordRow {
                    iter: reg_iters + step,
                    phase: "finetune",
                    train_loss: loss,
                    val_acc: acc,
                    lambda: 0.0,
                    dispersion: dispersions(n, cfg.granularity),
                }),
                Err(e) => ft_err = Some(e),
            }
        }
        Ok(())
    })?;
    if let Some(e) = ft_err {
        return Err(e);
    }
    let post_finetune_acc = val_acc(&finetuned, data)?;
    let removed = baseline.num_weights() - pruned.num_weights() + pruned.num_frozen();
    let summary = RunSummary {
        name: cfg.name.clone(),
        method: cfg.method.label().to_string(),
        seed: cfg.seed,
        baseline_acc,
        pre_prune_acc,
        post_prune_acc,
        post_finetune_acc,
        sparsity: removed as f64 / baseline.num_weights() as f64,
        pruned_groups: mask.num_pruned(),
        pruned_hash: mask.hash(),
        reg_iters,
    };
    Ok(RunOutput {
        record: ExperimentRecord { rows, summary },
        pre_prune: net,
        pruned,
        finetuned,
        mask,
        reg_state: state,
        trace,
    })
}

/// Loads the dataset, pretrains, then runs the configured method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let data = load_dataset(&cfg.dataset)?;
    let baseline = pretrain_baseline(cfg, &data)?;
    run_method(cfg, &data, &baseline)
}

/// The two schedules compared for a configured method.
fn comparison_pair(method: Method) -> Result<[Method; 2]> {
    match method {
        Method::Greg1 | Method::OneshotL1 => Ok([Method::Greg1, Method::OneshotL1]),
        Method::RandomSubset { mask_seed, .. } => Ok([
            Method::RandomSubset { mask_seed, schedule: SubsetSchedule::Greg },
            Method::RandomSubset { mask_seed, schedule: SubsetSchedule::Oneshot },
        ]),
        Method::Greg2 => Err(HarnessError::Config(
            "schedule comparison pairs greg1 with oneshot_l1, or two schedules on a random subset".into(),
        )),
    }
}

fn compare_one(cfg: &ExperimentConfig, data: &Dataset, index: u64) -> Result<[RunSummary; 2]> {
    let pair = comparison_pair(cfg.method)?;
    let seed = cfg.seed + index;
    let mut base_cfg = cfg.clone();
    base_cfg.seed = seed;
    let baseline = pretrain_baseline(&base_cfg, data)?;
    let run = |method: Method| -> Result<RunSummary> {
        let mut c = base_cfg.clone();
        c.method = match method {
            // one shared random mask per seed
            Method::RandomSubset { mask_seed, schedule } => {
                Method::RandomSubset { mask_seed: sub_seed(mask_seed, seed), schedule }
            }
            m => m,
        };
        Ok(run_method(&c, data, &baseline)?.record.summary)
    };
    let a = run(pair[0])?;
    let b = run(pair[1])?;
    if a.pruned_hash != b.pruned_hash {
        return Err(HarnessError::Protocol(format!(
            "seed {seed}: {} and {} removed different groups ({} vs {})",
            a.method, b.method, a.pruned_hash, b.pruned_hash
        )));
    }
    Ok([a, b])
}

/// Runs both schedules of the configured pair for seeds
/// `cfg.seed .. cfg.seed + n_seeds`, each from its own baseline, on up to
/// `workers` threads. Results do not depend on `workers`.
pub fn compare_schedules(cfg: &ExperimentConfig, n_seeds: usize, workers: usize) -> Result<ComparisonTable> {
    if n_seeds < 2 {
        return Err(HarnessError::Config(format!("need at least 2 seeds, got {n_seeds}")));
    }
    cfg.validate()?;
    let pair = comparison_pair(cfg.method)?;
    let data = load_dataset(&cfg.dataset)?;
    let workers = workers.clamp(1, n_seeds);
    let mut slots: Vec<Option<Result<[RunSummary; 2]>>> = (0..n_seeds).map(|_| None).collect();
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let data = &data;
                s.spawn(move || {
                    (w..n_seeds).step_by(workers).map(|i| (i, compare_one(cfg, data, i as u64))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("comparison worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    let runs = slots.into_iter().map(|r| r.expect("every seed assigned")).collect::<Result<Vec<_>>>()?;
    Ok(ComparisonTable { methods: pair.map(|m| m.label().to_string()), runs })
}

/// GReg-2 run from `baseline` with a norm snapshot every `cfg.metric_every`
/// iterations until the hard prune.
pub fn track_separation(cfg: &ExperimentConfig, data: &Dataset, baseline: &Network) -> Result<SeparationTrace> {
    if cfg.method != Method::Greg2 {
        return Err(HarnessError::Config("separation tracking needs method = greg2".into()));
    }
    cfg.validate()?;
    let plan = cfg.plan_for(baseline)?;
    let mut state = greg2_init(baseline, &plan, &cfg.reg)?;
    separation_loop(cfg, data, baseline, &plan, Penalties::Schedule(&mut state))
}

/// Control for [`track_separation`]: the GReg-2 starting penalties held
/// fixed (`δλ = 0`) for `iters` iterations.
pub fn track_separation_control(
    cfg: &ExperimentConfig,
    data: &Dataset,
    baseline: &Network,
    iters: usize,
) -> Result<SeparationTrace> {
    cfg.validate()?;
    let plan = cfg.plan_for(baseline)?;
    let map = greg2_init(baseline, &plan, &cfg.reg)?.penalty_map(baseline)?;
    separation_loop(cfg, data, baseline, &plan, Penalties::Fixed { map, iters })
}

fn separation_loop(
    cfg: &ExperimentConfig,
    data: &Dataset,
    baseline: &Network,
    plan: &PruningPlan,
    pen: Penalties<'_>,
) -> Result<SeparationTrace> {
    let layers: Vec<usize> = plan.target_layers().collect();
    let mut net = baseline.clone();
    let mut rows = Vec::new();
    let mut points = Vec::new();
    regularize(&mut net, data, cfg, pen, &mut rows, |n, iter, lambda| {
        points.push(snapshot(n, cfg.granularity, iter, lambda));
    })?;
    Ok(SeparationTrace { layers, points })
}

fn snapshot(net: &Network, granularity: Granularity, iter: usize, lambda: f64) -> SeparationPoint {
    let norms = group_l1_norms(net, granularity, iter);
    let nl = net.layers().len();
    SeparationPoint {
        iter,
        lambda,
        dispersion: (0..nl).map(|l| norm_dispersion(norms.layer(l)).ok()).collect(),
        normalized: (0..nl).map(|l| norms.normalized(l)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(method: Method) -> ExperimentConfig {
        let mut c = ExperimentConfig::desk(method, 0.5);
        c.network = NetSpec::mlp(&[16, 16, 8]);
        c.dataset = DatasetSpec::Blobs { n_train: 200, n_val: 100, classes: 2, dim: 2, spread: 1.0, seed: 3 };
        c.pretrain = TrainSchedule::multistep(10, 32);
        c.finetune = TrainSchedule::multistep(2, 32);
        c.reg.delta_lambda = 0.05;
        c.reg.k_update = 2;
        c.reg.k_stabilize = 10;
        c.reg.tau_prime = 0.1;
        c.reg.post_pick_delta_lambda = None;
        c.metric_every = 10;
        c
    }

    #[test]
    fn zero_epochs_returns_init() {
        let mut c = tiny(Method::Greg1);
        c.pretrain.epochs = 0;
        let data = load_dataset(&c.dataset).unwrap();
        let base = pretrain_baseline(&c, &data).unwrap();
        let init = c.network.build(data.shape, 2, sub_seed(c.seed, 0)).unwrap();
        assert_eq!(base, init);
    }

    #[test]
    fn greg1_and_oneshot_share_mask_and_rows_increase() {
        let c = tiny(Method::Greg1);
        let data = load_dataset(&c.dataset).unwrap();
        let base = pretrain_baseline(&c, &data).unwrap();
        let g = run_method(&c, &data, &base).unwrap();
        let o = run_method(&ExperimentConfig { method: Method::OneshotL1, ..c.clone() }, &data, &base).unwrap();
        assert_eq!(g.record.summary.pruned_hash, o.record.summary.pruned_hash);
        assert!(g.record.rows.windows(2).all(|w| w[0].iter < w[1].iter));
        assert!(g.record.summary.reg_iters > 0);
        assert_eq!(o.record.summary.reg_iters, 0);
        assert_eq!(o.record.summary.pre_prune_acc, o.record.summary.baseline_acc);
        assert_eq!(g.pruned.layers()[1].units(), 8);
    }

    #[test]
    fn empty_plan_prunes_nothing() {
        let mut c = tiny(Method::Greg2);
        c.plan = "[0, 0, 0, 0]".into();
        let data = load_dataset(&c.dataset).unwrap();
        let base = pretrain_baseline(&c, &data).unwrap();
        let out = run_method(&c, &data, &base).unwrap();
        assert_eq!(out.record.summary.sparsity, 0.0);
        assert_eq!(out.pruned, base);
    }

    #[test]
    fn budget_cap_is_enforced() {
        let mut c = tiny(Method::Greg1);
        c.max_growing_iters = 5;
        let data = load_dataset(&c.dataset).unwrap();
        let base = pretrain_baseline(&c, &data).unwrap();
        assert!(matches!(run_method(&c, &data, &base), Err(HarnessError::BudgetExceeded { budget: 5 })));
    }

    #[test]
    fn unstructured_finetune_keeps_masked_weights_zero() {
        let mut c = tiny(Method::OneshotL1);
        c.granularity = Granularity::Weight;
        c.finetune = TrainSchedule::multistep(5, 16);
        let data = load_dataset(&c.dataset).unwrap();
        let base = pretrain_baseline(&c, &data).unwrap();
        let out = run_method(&c, &data, &base).unwrap();
        let mut checked = 0;
        for (l, layer) in out.finetuned.layers().iter().enumerate() {
            for g in out.mask.pruned(l) {
                assert_eq!(layer.weights[g], 0.0);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn comparison_needs_two_seeds_and_a_pair() {
        let c = tiny(Method::Greg1);
        assert!(matches!(compare_schedules(&c, 1, 1), Err(HarnessError::Config(_))));
        assert!(matches!(compare_schedules(&tiny(Method::Greg2), 2, 1), Err(HarnessError::Config(_))));
    }

    #[test]
    fn separation_requires_greg2() {
        let c = tiny(Method::Greg1);
        let data = load_dataset(&c.dataset).unwrap();
        let base = c.network.build(data.shape, 2, 0).unwrap();
        assert!(track_separation(&c, &data, &base).is_err());
    }

    #[test]
    fn separation_snapshots_are_normalized() {
        let c = tiny(Method::Greg2);
        let data = load_dataset(&c.dataset).unwrap();
        let base = pretrain_baseline(&c, &data).unwrap();
        let trace = track_separation(&c, &data, &base).unwrap();
        assert_eq!(trace.layers, vec![1, 2]);
        assert!(trace.points.len() > 2);
        for p in &trace.points {
            for &l in &trace.layers {
                let v = &p.normalized[l];
                assert!(v.iter().all(|&x| x > 0.0 && x <= 1.0));
                assert_eq!(v.iter().copied().fold(0.0, f64::max), 1.0);
            }
        }
    }
}
