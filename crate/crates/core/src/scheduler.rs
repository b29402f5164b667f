//! Growing-penalty schedules.
//!
//! Both variants raise a shared penalty `λ` on a removal set `S^p` by `δλ`
//! every `K_u` iterations until it exceeds the ceiling `τ`, then hold it for
//! `K_s` stabilisation iterations before the hard prune.
//!
//! * GReg-1 fixes `S^p` up front by L1 sorting; kept groups stay at the
//!   ordinary decay `γ`.
//! * GReg-2 starts with every group of every target layer in `S^p`. At the
//!   first `K_u` boundary where `λ > τ′` it re-scores by L1 norm, keeps the
//!   plan's survivors in `S^k` with penalty `−γ`, and continues growing only
//!   on the new `S^p`.
//!
//! `λ` is tracked as an increment count so the staircase stays exact:
//! after `n` increments `λ = n·δλ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::groups::{self, group_l1_norms, select_prune_set, GroupError, MaskVector, PruningPlan};
use crate::netcore::{Granularity, Network, PenaltyMap};

#[derive(Debug, Error)]
pub enum SchedError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("invalid regularisation config: {0}")]
    InvalidConfig(String),
    #[error("tick called after the schedule finished")]
    TickAfterDone,
    #[error("network does not match schedule state: {0}")]
    NetworkMismatch(String),
    #[error("corrupt schedule state: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, SchedError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMethod {
    Greg1,
    Greg2,
}

/// Schedule constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    /// Penalty increment `δλ`.
    pub delta_lambda: f64,
    /// Ceiling `τ` that ends the growing phase.
    pub tau: f64,
    /// Pick ceiling `τ′` (GReg-2).
    #[serde(default = "default_tau_prime")]
    pub tau_prime: f64,
    /// Iterations between increments, `K_u`.
    pub k_update: usize,
    /// Stabilisation iterations after `τ`, `K_s`.
    pub k_stabilize: usize,
    /// Ordinary weight decay `γ`.
    pub base_decay: f64,
    /// Increment used after the GReg-2 pick; defaults to `delta_lambda`.
    #[serde(default)]
    pub post_pick_delta_lambda: Option<f64>,
}

fn default_tau_prime() -> f64 {
    0.01
}

impl RegConfig {
    /// Reference constants for GReg-1 on CIFAR-scale models.
    pub fn paper_greg1() -> Self {
        Self {
            delta_lambda: 1e-4,
            tau: 1.0,
            tau_prime: 0.01,
            k_update: 10,
            k_stabilize: 5000,
            base_decay: 5e-4,
            post_pick_delta_lambda: None,
        }
    }

    /// Reference constants for GReg-2 on CIFAR-scale models.
    pub fn paper_greg2() -> Self {
        Self { delta_lambda: 1e-5, ..Self::paper_greg1() }
    }

    /// Short schedule for desk-scale runs: about 5k growing iterations.
    pub fn desk_greg1() -> Self {
        Self {
            delta_lambda: 1e-3,
            tau: 1.0,
            tau_prime: 0.01,
            k_update: 5,
            k_stabilize: 500,
            base_decay: 5e-4,
            post_pick_delta_lambda: None,
        }
    }

    /// Desk-scale GReg-2: fine increments up to the pick, then the GReg-1 pace.
    pub fn desk_greg2() -> Self {
        Self {
            delta_lambda: 1e-4,
            post_pick_delta_lambda: Some(1e-3),
            ..Self::desk_greg1()
        }
    }

    pub fn post_pick_delta(&self) -> f64 {
        self.post_pick_delta_lambda.unwrap_or(self.delta_lambda)
    }

    pub fn validate(&self, method: RegMethod) -> Result<()> {
        let bad = |m: String| Err(SchedError::InvalidConfig(m));
        if !(self.delta_lambda > 0.0 && self.delta_lambda < self.tau) {
            return bad(format!("need 0 < delta_lambda ({}) < tau ({})", self.delta_lambda, self.tau));
        }
        if self.k_update == 0 {
            return bad("k_update must be >= 1".into());
        }
        if !self.base_decay.is_finite() || self.base_decay < 0.0 {
            return bad(format!("base_decay {} must be >= 0", self.base_decay));
        }
        if method == RegMethod::Greg2 {
            if !(self.tau_prime > 0.0 && self.tau_prime < self.tau) {
                return bad(format!("need 0 < tau_prime ({}) < tau ({})", self.tau_prime, self.tau));
            }
            let post = self.post_pick_delta();
            if !(post > 0.0 && post < self.tau) {
                return bad(format!("post_pick_delta_lambda {post} must lie in (0, tau)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Growing,
    /// GReg-2 after the pick: `S^p` keeps growing, `S^k` sits at `−γ`.
    Picked,
    Stabilizing,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Growing => "growing",
            Phase::Picked => "picked",
            Phase::Stabilizing => "stabilizing",
            Phase::Done => "done",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegState {
    method: RegMethod,
    cfg: RegConfig,
    granularity: Granularity,
    ratios: Vec<f64>,
    group_counts: Vec<usize>,
    phase: Phase,
    iter: usize,
    increments: u64,
    post_increments: u64,
    stabilized: usize,
    prune_set: Vec<Vec<usize>>,
    kept_set: Vec<Vec<usize>>,
    pick_iter: Option<usize>,
}

fn group_counts(net: &Network, granularity: Granularity) -> Vec<usize> {
    net.layers().iter().map(|l| granularity.groups_in(l)).collect()
}

/// GReg-1: `S^p` from L1 sorting of the current weights, fixed for the run.
pub fn greg1_init(net: &Network, plan: &PruningPlan, cfg: &RegConfig) -> Result<RegState> {
    plan.validate_for(net)?;
    let norms = group_l1_norms(net, plan.granularity(), 0);
    let mask = select_prune_set(&norms, plan)?;
    greg1_init_with_mask(net, plan, &mask, cfg)
}

/// GReg-1 with an externally chosen removal set (e.g. a random subset).
pub fn greg1_init_with_mask(
    net: &Network,
    plan: &PruningPlan,
    mask: &MaskVector,
    cfg: &RegConfig,
) -> Result<RegState> {
    cfg.validate(RegMethod::Greg1)?;
    plan.validate_for(net)?;
    mask.check_matches(net)?;
    if mask.granularity != plan.granularity() {
        return Err(SchedError::NetworkMismatch("mask and plan granularity differ".into()));
    }
    let prune_set: Vec<Vec<usize>> = (0..mask.layers.len()).map(|l| mask.pruned(l)).collect();
    let empty = prune_set.iter().all(Vec::is_empty);
    Ok(RegState {
        method: RegMethod::Greg1,
        cfg: *cfg,
        granularity: plan.granularity(),
        ratios: plan.ratios().to_vec(),
        group_counts: group_counts(net, plan.granularity()),
        phase: if empty { Phase::Done } else { Phase::Growing },
        iter: 0,
        increments: 0,
        post_increments: 0,
        stabilized: 0,
        kept_set: vec![Vec::new(); prune_set.len()],
        prune_set,
        pick_iter: None,
    })
}

/// GReg-2: every group of every layer with a positive ratio starts in `S^p`.
pub fn greg2_init(net: &Network, plan: &PruningPlan, cfg: &RegConfig) -> Result<RegState> {
    cfg.validate(RegMethod::Greg2)?;
    plan.validate_for(net)?;
    let counts = group_counts(net, plan.granularity());
    let prune_set: Vec<Vec<usize>> = counts
        .iter()
        .enumerate()
        .map(|(l, &n)| if plan.ratio(l) > 0.0 { (0..n).collect() } else { Vec::new() })
        .collect();
    let empty = prune_set.iter().all(Vec::is_empty);
    Ok(RegState {
        method: RegMethod::Greg2,
        cfg: *cfg,
        granularity: plan.granularity(),
        ratios: plan.ratios().to_vec(),
        group_counts: counts,
        phase: if empty { Phase::Done } else { Phase::Growing },
        iter: 0,
        increments: 0,
        post_increments: 0,
        stabilized: 0,
        kept_set: vec![Vec::new(); prune_set.len()],
        prune_set,
        pick_iter: None,
    })
}

impl RegState {
    pub fn method(&self) -> RegMethod {
        self.method
    }

    pub fn config(&self) -> &RegConfig {
        &self.cfg
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    /// Iteration at which the GReg-2 pick happened.
    pub fn pick_iter(&self) -> Option<usize> {
        self.pick_iter
    }

    pub fn stabilized(&self) -> usize {
        self.stabilized
    }

    /// Current shared penalty on `S^p`.
    pub fn lambda(&self) -> f64 {
        let pre = self.increments as f64 * self.cfg.delta_lambda;
        if self.post_increments == 0 {
            pre
        } else {
            pre + self.post_increments as f64 * self.cfg.post_pick_delta()
        }
    }

    pub fn prune_set(&self) -> &[Vec<usize>] {
        &self.prune_set
    }

    pub fn kept_set(&self) -> &[Vec<usize>] {
        &self.kept_set
    }

    pub fn is_prune_ready(&self) -> bool {
        self.phase == Phase::Done
    }

    /// Removal mask from the current `S^p`.
    pub fn prune_mask(&self, net: &Network) -> Result<MaskVector> {
        self.check_net(net)?;
        Ok(MaskVector::from_pruned(net, self.granularity, &self.prune_set)?)
    }

    fn check_net(&self, net: &Network) -> Result<()> {
        let counts = group_counts(net, self.granularity);
        if counts != self.group_counts {
            return Err(SchedError::NetworkMismatch(format!(
                "group counts {counts:?} vs {:?}",
                self.group_counts
            )));
        }
        Ok(())
    }

    /// Penalties to use for the current iteration, without advancing.
    pub fn penalty_map(&self, net: &Network) -> Result<PenaltyMap> {
        self.check_net(net)?;
        let gamma = self.cfg.base_decay;
        let mut map = PenaltyMap::uniform(net, self.granularity, gamma);
        let lambda = self.lambda();
        for (l, set) in self.prune_set.iter().enumerate() {
            for &g in set {
                map.set(l, g, lambda);
            }
        }
        for (l, set) in self.kept_set.iter().enumerate() {
            for &g in set {
                map.set(l, g, -gamma);
            }
        }
        Ok(map)
    }

    fn pick(&mut self, net: &Network) -> Result<()> {
        let plan = PruningPlan::from_ratios(self.ratios.clone(), self.granularity)?;
        let norms = group_l1_norms(net, self.granularity, self.iter);
        let mask = select_prune_set(&norms, &plan)?;
        for l in 0..mask.layers.len() {
            if plan.ratio(l) > 0.0 {
                self.prune_set[l] = mask.pruned(l);
                self.kept_set[l] = mask.kept(l);
            }
        }
        self.pick_iter = Some(self.iter);
        self.phase = Phase::Picked;
        Ok(())
    }

    /// Advances one iteration and returns the penalties for this
    /// iteration's SGD step.
    pub fn tick(&mut self, net: &Network) -> Result<PenaltyMap> {
        self.check_net(net)?;
        match self.phase {
            Phase::Done => return Err(SchedError::TickAfterDone),
            Phase::Growing | Phase::Picked => {
                if self.iter % self.cfg.k_update == 0 {
                    if self.method == RegMethod::Greg2
                        && self.phase == Phase::Growing
                        && self.lambda() > self.cfg.tau_prime
                    {
                        self.pick(net)?;
                    }
                    if self.phase == Phase::Picked {
                        self.post_increments += 1;
                    } else {
                        self.increments += 1;
                    }
                }
                let map = self.penalty_map(net)?;
                self.iter += 1;
                if self.lambda() > self.cfg.tau {
                    self.phase = Phase::Stabilizing;
                    self.stabilized = 0;
                    if self.cfg.k_stabilize == 0 {
                        self.phase = Phase::Done;
                    }
                }
                Ok(map)
            }
            Phase::Stabilizing => {
                let map = self.penalty_map(net)?;
                self.iter += 1;
                self.stabilized += 1;
                if self.stabilized >= self.cfg.k_stabilize {
                    self.phase = Phase::Done;
                }
                Ok(map)
            }
        }
    }

    /// Binary encoding stored in the checkpoint `REGS` section.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Vec::new();
        e.extend_from_slice(b"RGS1");
        e.push(match self.method {
            RegMethod::Greg1 => 1,
            RegMethod::Greg2 => 2,
        });
        e.push(match self.granularity {
            Granularity::Filter => 0,
            Granularity::Weight => 1,
        });
        e.push(match self.phase {
            Phase::Growing => 0,
            Phase::Picked => 1,
            Phase::Stabilizing => 2,
            Phase::Done => 3,
        });
        let c = &self.cfg;
        for v in [c.delta_lambda, c.tau, c.tau_prime, c.base_decay, c.post_pick_delta_lambda.unwrap_or(f64::NAN)] {
            e.extend_from_slice(&v.to_le_bytes());
        }
        let u = |e: &mut Vec<u8>, v: u64| e.extend_from_slice(&v.to_le_bytes());
        u(&mut e, c.k_update as u64);
        u(&mut e, c.k_stabilize as u64);
        u(&mut e, self.iter as u64);
        u(&mut e, self.increments);
        u(&mut e, self.post_increments);
        u(&mut e, self.stabilized as u64);
        u(&mut e, self.pick_iter.map_or(u64::MAX, |p| p as u64));
        u(&mut e, self.ratios.len() as u64);
        for r in &self.ratios {
            e.extend_from_slice(&r.to_le_bytes());
        }
        for &n in &self.group_counts {
            u(&mut e, n as u64);
        }
        for sets in [&self.prune_set, &self.kept_set] {
            for s in sets.iter() {
                u(&mut e, s.len() as u64);
                for &g in s {
                    u(&mut e, g as u64);
                }
            }
        }
        e
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Reader { buf: bytes, pos: 0 };
        if d.take(4)? != b"RGS1" {
            return Err(SchedError::Decode("bad tag".into()));
        }
        let method = match d.u8()? {
            1 => RegMethod::Greg1,
            2 => RegMethod::Greg2,
            t => return Err(SchedError::Decode(format!("method {t}"))),
        };
        let granularity = match d.u8()? {
            0 => Granularity::Filter,
            1 => Granularity::Weight,
            t => return Err(SchedError::Decode(format!("granularity {t}"))),
        };
        let phase = match d.u8()? {
            0 => Phase::Growing,
            1 => Phase::Picked,
            2 => Phase::Stabilizing,
            3 => Phase::Done,
            t => return Err(SchedError::Decode(format!("phase {t}"))),
        };
        let (delta_lambda, tau, tau_prime, base_decay, post) = (d.f64()?, d.f64()?, d.f64()?, d.f64()?, d.f64()?);
        let k_update = d.usize()?;
        let k_stabilize = d.usize()?;
        let cfg = RegConfig {
            delta_lambda,
            tau,
            tau_prime,
            k_update,
            k_stabilize,
            base_decay,
            post_pick_delta_lambda: (!post.is_nan()).then_some(post),
        };
        let iter = d.usize()?;
        let increments = d.u64()?;
        let post_increments = d.u64()?;
        let stabilized = d.usize()?;
        let pick_iter = match d.u64()? {
            u64::MAX => None,
            p => Some(p as usize),
        };
        let n_layers = d.usize()?;
        if n_layers > bytes.len() {
            return Err(SchedError::Decode("layer count exceeds data".into()));
        }
        let ratios = (0..n_layers).map(|_| d.f64()).collect::<Result<Vec<_>>>()?;
        let group_counts = (0..n_layers).map(|_| d.usize()).collect::<Result<Vec<_>>>()?;
        let read_sets = |d: &mut Reader| -> Result<Vec<Vec<usize>>> {
            (0..n_layers)
                .map(|l| {
                    let n = d.usize()?;
                    if n > group_counts[l] {
                        return Err(SchedError::Decode("set larger than layer".into()));
                    }
                    (0..n).map(|_| d.usize()).collect()
                })
                .collect()
        };
        let prune_set = read_sets(&mut d)?;
        let kept_set = read_sets(&mut d)?;
        if d.pos != bytes.len() {
            return Err(SchedError::Decode("trailing bytes".into()));
        }
        Ok(Self {
            method,
            cfg,
            granularity,
            ratios,
            group_counts,
            phase,
            iter,
            increments,
            post_increments,
            stabilized,
            prune_set,
            kept_set,
            pick_iter,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(SchedError::Decode("unexpected end".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| SchedError::Decode("overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Current magnitude gap between `S^p` and the rest of each target layer.
pub fn suppression(state: &RegState, net: &Network) -> Result<Option<groups::Suppression>> {
    let mask = state.prune_mask(net)?;
    Ok(groups::suppression(net, &mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::parse_pruning_plan;
    use crate::netcore::{Activation, LayerSpec, Shape3};

    fn net() -> Network {
        let mut n = Network::new(
            Shape3::flat(3),
            &[
                LayerSpec::dense(4, Activation::Relu),
                LayerSpec::dense(4, Activation::Relu),
                LayerSpec::logits(2),
            ],
            7,
        )
        .unwrap();
        // Layer-1 filter norms increasing with the unit index.
        for u in 0..4 {
            for k in 0..4 {
                n.layers_mut()[1].weights[u * 4 + k] = 0.1 * (u + 1) as f64;
            }
        }
        n
    }

    fn plan(r: f64) -> PruningPlan {
        parse_pruning_plan(&format!("[0, {r}, 0]"), 3, Granularity::Filter).unwrap()
    }

    fn cfg(dl: f64, ku: usize, ks: usize) -> RegConfig {
        RegConfig { delta_lambda: dl, tau: 1.0, tau_prime: 0.01, k_update: ku, k_stabilize: ks, base_decay: 5e-4, post_pick_delta_lambda: None }
    }

    #[test]
    fn greg1_picks_smallest_filters_and_zero_lambda() {
        let n = net();
        let s = greg1_init(&n, &plan(0.5), &cfg(1e-4, 10, 0)).unwrap();
        assert_eq!(s.prune_set()[1], vec![0, 1]);
        assert_eq!(s.lambda(), 0.0);
        assert_eq!(s.phase(), Phase::Growing);
        let m = s.penalty_map(&n).unwrap();
        assert_eq!(m.layer(1), &[0.0, 0.0, 5e-4, 5e-4]);
        assert!(m.layer(0).iter().all(|&v| v == 5e-4));
    }

    #[test]
    fn empty_plan_is_immediately_ready() {
        let s = greg1_init(&net(), &plan(0.0), &cfg(1e-4, 10, 0)).unwrap();
        assert!(s.is_prune_ready());
        assert!(s.prune_set().iter().all(Vec::is_empty));
    }

    #[test]
    fn greg1_staircase_counts() {
        let n = net();
        let mut s = greg1_init(&n, &plan(0.5), &cfg(1e-4, 10, 0)).unwrap();
        let mut prev = 0.0;
        for i in 0..100 {
            let map = s.tick(&n).unwrap();
            let lam = map.get(1, 0);
            assert!(lam >= prev);
            // riser δλ at each K_u boundary, flat tread otherwise
            let expect = (i / 10 + 1) as f64 * 1e-4;
            assert!((lam - expect).abs() < 1e-15);
            prev = lam;
        }
        assert!((s.lambda() - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn greg1_growing_length_with_reference_constants() {
        let n = net();
        let mut s = greg1_init(&n, &plan(0.5), &cfg(1e-4, 10, 3)).unwrap();
        let initial = s.prune_set().to_vec();
        for _ in 0..100_000 {
            s.tick(&n).unwrap();
        }
        assert_eq!(s.phase(), Phase::Growing);
        assert_eq!(s.lambda(), 1.0);
        s.tick(&n).unwrap();
        assert_eq!(s.phase(), Phase::Stabilizing);
        assert!(s.lambda() > 1.0);
        assert_eq!(s.prune_set(), initial.as_slice());
        s.tick(&n).unwrap();
        s.tick(&n).unwrap();
        assert!(!s.is_prune_ready(), "K_s - 1 stabilising iterations");
        s.tick(&n).unwrap();
        assert!(s.is_prune_ready());
        assert!(matches!(s.tick(&n), Err(SchedError::TickAfterDone)));
    }

    #[test]
    fn greg2_init_penalises_all_target_groups() {
        let n = net();
        let s = greg2_init(&n, &plan(0.5), &cfg(1e-5, 10, 0)).unwrap();
        assert_eq!(s.prune_set()[1], vec![0, 1, 2, 3]);
        assert!(s.prune_set()[0].is_empty(), "never-prune layer excluded");
        assert!(s.kept_set().iter().all(Vec::is_empty));
        let m = s.penalty_map(&n).unwrap();
        assert!(m.layer(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn greg2_pick_fires_at_first_boundary_past_tau_prime() {
        let n = net();
        let mut s = greg2_init(&n, &plan(0.5), &cfg(1e-5, 10, 0)).unwrap();
        for _ in 0..10_010 {
            s.tick(&n).unwrap();
            assert!(s.kept_set().iter().all(Vec::is_empty));
            assert!(s.penalty_map(&n).unwrap().layer(1).iter().all(|&v| v >= 0.0));
        }
        assert_eq!(s.phase(), Phase::Growing);
        s.tick(&n).unwrap();
        assert_eq!(s.pick_iter(), Some(10_010));
        assert_eq!(s.phase(), Phase::Picked);
        assert_eq!(s.prune_set()[1], vec![0, 1]);
        assert_eq!(s.kept_set()[1], vec![2, 3]);
        let m = s.penalty_map(&n).unwrap();
        assert_eq!(m.get(1, 2), -5e-4);
        assert_eq!(m.get(1, 3), -5e-4);
        assert!(m.get(1, 0) > 0.01);
    }

    #[test]
    fn greg2_kept_stay_negative_until_done() {
        let n = net();
        let mut c = cfg(1e-3, 2, 5);
        c.tau_prime = 0.05;
        let mut s = greg2_init(&n, &plan(0.5), &c).unwrap();
        let mut picked = false;
        while !s.is_prune_ready() {
            let m = s.tick(&n).unwrap();
            if s.pick_iter().is_some() {
                picked = true;
                for &g in &s.kept_set()[1] {
                    assert_eq!(m.get(1, g), -5e-4);
                }
            }
        }
        assert!(picked);
        assert!(s.lambda() >= 1.0);
        assert_eq!(s.stabilized(), 5);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.0, 10, 0).validate(RegMethod::Greg1).is_err());
        assert!(cfg(2.0, 10, 0).validate(RegMethod::Greg1).is_err());
        assert!(cfg(1e-4, 0, 0).validate(RegMethod::Greg1).is_err());
        let mut c = cfg(1e-4, 10, 0);
        c.tau_prime = 2.0;
        assert!(c.validate(RegMethod::Greg1).is_ok());
        assert!(c.validate(RegMethod::Greg2).is_err());
        assert!(RegConfig::paper_greg1().validate(RegMethod::Greg1).is_ok());
        assert!(RegConfig::paper_greg2().validate(RegMethod::Greg2).is_ok());
    }

    #[test]
    fn state_bytes_round_trip() {
        let n = net();
        let mut s = greg2_init(&n, &plan(0.5), &RegConfig::desk_greg2()).unwrap();
        for _ in 0..600 {
            s.tick(&n).unwrap();
        }
        assert!(s.pick_iter().is_some());
        let bytes = s.to_bytes();
        let back = RegState::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
        assert!(RegState::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            /// Penalised groups follow a staircase with riser `δλ` and tread
            /// `K_u`; GReg-1 never changes `S^p`.
            #[test]
            fn greg1_staircase_and_fixed_set(dl in 0.01..0.3f64, ku in 1usize..6, ks in 0usize..5, r in 0.25..0.75f64) {
                let n = net();
                let mut s = greg1_init(&n, &plan(r), &cfg(dl, ku, ks)).unwrap();
                let initial = s.prune_set().to_vec();
                let mut prev = 0.0;
                let mut i = 0;
                while !s.is_prune_ready() {
                    let growing = s.phase() == Phase::Growing;
                    let map = s.tick(&n).unwrap();
                    for &g in &s.prune_set()[1] {
                        let lam = map.get(1, g);
                        prop_assert!(lam >= prev);
                        if growing {
                            let expect = (i / ku + 1) as f64 * dl;
                            prop_assert!((lam - expect).abs() < 1e-12, "iter {} lambda {} expected {}", i, lam, expect);
                        } else {
                            prop_assert_eq!(lam, prev);
                        }
                        prev = lam;
                    }
                    prop_assert_eq!(s.prune_set(), initial.as_slice());
                    i += 1;
                    prop_assert!(i < 100_000);
                }
            }

            /// GReg-2 carries no negative penalty before the pick and exactly
            /// `−γ` on kept groups from the pick to the end.
            #[test]
            fn greg2_sign_discipline(dl in 0.002..0.05f64, ku in 1usize..4, tau_prime in 0.01..0.2f64, r in 0.25..0.75f64) {
                let n = net();
                let mut c = cfg(dl, ku, 3);
                c.tau_prime = tau_prime;
                let mut s = greg2_init(&n, &plan(r), &c).unwrap();
                while !s.is_prune_ready() {
                    let map = s.tick(&n).unwrap();
                    if s.pick_iter().is_none() {
                        prop_assert!(map.layer(1).iter().all(|&v| v >= 0.0));
                    } else {
                        for &g in &s.kept_set()[1] {
                            prop_assert_eq!(map.get(1, g), -c.base_decay);
                        }
                        for &g in &s.prune_set()[1] {
                            prop_assert!(map.get(1, g) > 0.0);
                        }
                    }
                }
                prop_assert!(s.pick_iter().is_some());
            }
        }
    }
}
