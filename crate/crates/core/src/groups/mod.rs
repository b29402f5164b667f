//! Weight groups, L1 scoring, binary masks and physical pruning.
//!
//! Pruning splits into a mask `M` (which groups go) and a transform of the
//! surviving weights; the pruned network is `M ⊙ T₂(w)`. This module owns
//! the mask side: scoring groups, choosing the removal set for a
//! [`PruningPlan`], and applying it either by zeroing and freezing weights
//! (unstructured) or by physically removing filters (structured).

mod plan;
mod prune;

pub use plan::{parse_plan_syntax, parse_pruning_plan, PlanSyntax, PruningPlan, RangeEntry};
pub use prune::{apply_hard_prune, zero_masked};

pub use crate::netcore::Granularity;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::netcore::{NetError, Network};

#[derive(Debug, Error)]
pub enum GroupError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("malformed pruning plan: {0}")]
    PlanSyntax(String),
    #[error("overlapping layer ranges {first:?} and {second:?}")]
    OverlappingRange { first: (usize, usize), second: (usize, usize) },
    #[error("ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error("layer {0} not covered by any range")]
    UncoveredLayer(usize),
    #[error("plan covers {got} layers, network has {expected}")]
    LayerCount { expected: usize, got: usize },
    #[error("plan would remove every group of layer {layer}")]
    AllGroupsRemoved { layer: usize },
    #[error("layer {layer} is not prunable")]
    NotPrunable { layer: usize },
    #[error("mask does not match network: {0}")]
    MaskShape(String),
    #[error("structural inconsistency: {0}")]
    Structural(String),
    #[error("dispersion needs at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("dispersion undefined for zero-mean norms")]
    ZeroMean,
}

pub type Result<T> = std::result::Result<T, GroupError>;

/// Address of a weight group: filter index (structured) or flat weight
/// index (unstructured) within a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId {
    pub layer: usize,
    pub group: usize,
}

/// Per-group L1 norms for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorms {
    pub layers: Vec<Vec<f64>>,
    pub granularity: Granularity,
    pub iter: usize,
}

impl GroupNorms {
    pub fn layer(&self, layer: usize) -> &[f64] {
        &self.layers[layer]
    }

    pub fn dispersion(&self, layer: usize) -> Result<f64> {
        norm_dispersion(&self.layers[layer])
    }

    /// Norms divided by the layer maximum. All-zero layers stay zero.
    pub fn normalized(&self, layer: usize) -> Vec<f64> {
        let norms = &self.layers[layer];
        let max = norms.iter().copied().fold(0.0, f64::max);
        if max == 0.0 {
            return norms.clone();
        }
        norms.iter().map(|n| n / max).collect()
    }
}

/// L1 norm of every group; filter groups sum `|w|` over the whole filter
/// (bias excluded).
pub fn group_l1_norms(net: &Network, granularity: Granularity, iter: usize) -> GroupNorms {
    let layers = net
        .layers()
        .iter()
        .map(|l| match granularity {
            Granularity::Filter => (0..l.units())
                .map(|u| l.filter(u).iter().map(|w| w.abs()).sum())
                .collect(),
            Granularity::Weight => l.weights.iter().map(|w| w.abs()).collect(),
        })
        .collect();
    GroupNorms { layers, granularity, iter }
}

/// Binary mask: `true` keeps a group (`M = 1`), `false` marks it for removal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskVector {
    pub layers: Vec<Vec<bool>>,
    pub granularity: Granularity,
}

impl MaskVector {
    pub fn full(net: &Network, granularity: Granularity) -> Self {
        Self {
            layers: net.layers().iter().map(|l| vec![true; granularity.groups_in(l)]).collect(),
            granularity,
        }
    }

    pub fn from_pruned(net: &Network, granularity: Granularity, pruned: &[Vec<usize>]) -> Result<Self> {
        let mut mask = Self::full(net, granularity);
        if pruned.len() != mask.layers.len() {
            return Err(GroupError::MaskShape(format!(
                "{} layers of indices for {} layers",
                pruned.len(),
                mask.layers.len()
            )));
        }
        for (li, idx) in pruned.iter().enumerate() {
            for &g in idx {
                let slot = mask.layers[li]
                    .get_mut(g)
                    .ok_or_else(|| GroupError::MaskShape(format!("group {g} out of range in layer {li}")))?;
                *slot = false;
            }
        }
        Ok(mask)
    }

    pub fn pruned(&self, layer: usize) -> Vec<usize> {
        self.layers[layer].iter().enumerate().filter(|(_, &k)| !k).map(|(i, _)| i).collect()
    }

    pub fn kept(&self, layer: usize) -> Vec<usize> {
        self.layers[layer].iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
    }

    pub fn pruned_ids(&self) -> Vec<GroupId> {
        (0..self.layers.len())
            .flat_map(|layer| self.pruned(layer).into_iter().map(move |group| GroupId { layer, group }))
            .collect()
    }

    pub fn num_pruned(&self) -> usize {
        self.layers.iter().map(|l| l.iter().filter(|&&k| !k).count()).sum()
    }

    pub fn num_groups(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn check_matches(&self, net: &Network) -> Result<()> {
        if self.layers.len() != net.layers().len() {
            return Err(GroupError::MaskShape(format!(
                "{} mask layers for {} network layers",
                self.layers.len(),
                net.layers().len()
            )));
        }
        for (i, (m, l)) in self.layers.iter().zip(net.layers()).enumerate() {
            let n = self.granularity.groups_in(l);
            if m.len() != n {
                return Err(GroupError::MaskShape(format!("layer {i}: {} flags for {n} groups", m.len())));
            }
        }
        Ok(())
    }

    /// Text export: a header line, then `<layer> <bits>` per layer with
    /// `1` = keep and `0` = remove.
    pub fn to_text(&self) -> String {
        let mut s = format!("# mask v1 granularity={}\n", self.granularity.as_str());
        for (i, l) in self.layers.iter().enumerate() {
            s.push_str(&i.to_string());
            s.push(' ');
            s.extend(l.iter().map(|&k| if k { '1' } else { '0' }));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| GroupError::MaskShape("empty mask file".into()))?;
        let granularity = match header.trim().strip_prefix("# mask v1 granularity=") {
            Some("filter") => Granularity::Filter,
            Some("weight") => Granularity::Weight,
            _ => return Err(GroupError::MaskShape(format!("bad header {header:?}"))),
        };
        let mut layers = Vec::new();
        for (expect, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let (idx, bits) = line
                .trim()
                .split_once(' ')
                .map(|(a, b)| (a, b.trim()))
                .unwrap_or((line.trim(), ""));
            if idx.parse::<usize>().ok() != Some(expect) {
                return Err(GroupError::MaskShape(format!("expected layer {expect}, got {idx:?}")));
            }
            let row = bits
                .chars()
                .map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    c => Err(GroupError::MaskShape(format!("bad mask bit {c:?}"))),
                })
                .collect::<Result<Vec<bool>>>()?;
            layers.push(row);
        }
        Ok(Self { layers, granularity })
    }

    /// SHA-256 of the text export, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Number of groups a ratio removes from `n`: `⌊r·n⌋`, guarded against
/// representation error just below an integer (e.g. `0.29 · 100`).
pub fn prune_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 1e-9).floor().min(n as f64) as usize
}

fn check_plan_layers(plan: &PruningPlan, n_layers: usize) -> Result<()> {
    if plan.num_layers() != n_layers {
        return Err(GroupError::LayerCount { expected: n_layers, got: plan.num_layers() });
    }
    Ok(())
}

/// Marks the `⌊r_l·n_l⌋` smallest-norm groups of each layer for removal.
/// Ties go to the lower group index.
pub fn select_prune_set(norms: &GroupNorms, plan: &PruningPlan) -> Result<MaskVector> {
    check_plan_layers(plan, norms.layers.len())?;
    let mut layers = Vec::with_capacity(norms.layers.len());
    for (li, layer_norms) in norms.layers.iter().enumerate() {
        let n = layer_norms.len();
        let k = prune_count(plan.ratio(li), n);
        if k >= n && n > 0 && k > 0 {
            return Err(GroupError::AllGroupsRemoved { layer: li });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| layer_norms[a].total_cmp(&layer_norms[b]).then(a.cmp(&b)));
        let mut keep = vec![true; n];
        for &g in &order[..k] {
            keep[g] = false;
        }
        layers.push(keep);
    }
    Ok(MaskVector { layers, granularity: norms.granularity })
}

/// Uniformly random removal set of `⌊r_l·n_l⌋` groups per layer.
pub fn random_prune_set(net: &Network, plan: &PruningPlan, seed: u64) -> Result<MaskVector> {
    check_plan_layers(plan, net.layers().len())?;
    let granularity = plan.granularity();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(net.layers().len());
    for (li, l) in net.layers().iter().enumerate() {
        let n = granularity.groups_in(l);
        let k = prune_count(plan.ratio(li), n);
        if k >= n && k > 0 {
            return Err(GroupError::AllGroupsRemoved { layer: li });
        }
        let mut keep = vec![true; n];
        if k > 0 {
            for g in index::sample(&mut rng, n, k) {
                keep[g] = false;
            }
        }
        layers.push(keep);
    }
    Ok(MaskVector { layers, granularity })
}

/// How far the removal set has been pushed below the survivors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Suppression {
    /// Largest `|w|` of any weight in a masked group.
    pub max_pruned: f64,
    /// Mean over kept groups of the group-mean `|w|`.
    pub mean_kept: f64,
    /// Smallest kept group-mean `|w|`.
    pub min_kept: f64,
}

impl Suppression {
    /// `max_pruned / mean_kept`.
    pub fn ratio(&self) -> f64 {
        self.max_pruned / self.mean_kept
    }

    /// `max_pruned / min_kept`, the stricter variant.
    pub fn worst_ratio(&self) -> f64 {
        self.max_pruned / self.min_kept
    }
}

/// Magnitude gap between masked and kept groups, measured over layers that
/// have at least one masked group. `None` if nothing is masked.
pub fn suppression(net: &Network, mask: &MaskVector) -> Result<Option<Suppression>> {
    mask.check_matches(net)?;
    let mut max_pruned: f64 = 0.0;
    let mut kept_means = Vec::new();
    let mut any = false;
    for (layer, keep) in net.layers().iter().zip(&mask.layers) {
        if keep.iter().all(|&k| k) {
            continue;
        }
        any = true;
        let fan = layer.fan_in();
        for (g, &k) in keep.iter().enumerate() {
            let ws: &[f64] = match mask.granularity {
                Granularity::Filter => &layer.weights[g * fan..(g + 1) * fan],
                Granularity::Weight => std::slice::from_ref(&layer.weights[g]),
            };
            if k {
                kept_means.push(ws.iter().map(|w| w.abs()).sum::<f64>() / ws.len() as f64);
            } else {
                max_pruned = ws.iter().fold(max_pruned, |m, w| m.max(w.abs()));
            }
        }
    }
    if !any || kept_means.is_empty() {
        return Ok(None);
    }
    let mean_kept = kept_means.iter().sum::<f64>() / kept_means.len() as f64;
    let min_kept = kept_means.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Some(Suppression { max_pruned, mean_kept, min_kept }))
}

/// Population standard deviation over mean.
pub fn norm_dispersion(norms: &[f64]) -> Result<f64> {
    if norms.len() < 2 {
        return Err(GroupError::TooFewGroups(norms.len()));
    }
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(GroupError::ZeroMean);
    }
    let var = norms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Activation, LayerSpec, Shape3};
    use proptest::prelude::*;
    use rand::Rng;

    fn norms_of(v: &[f64]) -> GroupNorms {
        GroupNorms { layers: vec![v.to_vec()], granularity: Granularity::Filter, iter: 0 }
    }

    fn plan1(r: f64) -> PruningPlan {
        parse_pruning_plan(&format!("[{r}]"), 1, Granularity::Filter).unwrap()
    }

    #[test]
    fn l1_norm_of_a_filter() {
        let mut net = Network::zeros(Shape3::flat(2), &[LayerSpec::logits(2)]).unwrap();
        net.layers_mut()[0].weights = vec![0.5, -0.5, 0.0, 0.0];
        let n = group_l1_norms(&net, Granularity::Filter, 0);
        assert_eq!(n.layers[0], vec![1.0, 0.0]);
        let z = Network::zeros(Shape3::flat(3), &[LayerSpec::logits(4)]).unwrap();
        assert!(group_l1_norms(&z, Granularity::Filter, 0).layers[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_filter_norms_match_brute_force() {
        let net = Network::new(
            Shape3::new(2, 4, 4),
            &[LayerSpec::conv(3, 2, 2, Activation::Relu), LayerSpec::logits(2)],
            4,
        )
        .unwrap();
        let n = group_l1_norms(&net, Granularity::Filter, 0);
        let w = &net.layers()[0].weights;
        for f in 0..3 {
            let mut brute = 0.0;
            for c in 0..2 {
                for ky in 0..2 {
                    for kx in 0..2 {
                        brute += w[((f * 2 + c) * 2 + ky) * 2 + kx].abs();
                    }
                }
            }
            assert!((n.layers[0][f] - brute).abs() < 1e-15);
        }
    }

    #[test]
    fn selects_smallest_norms() {
        let m = select_prune_set(&norms_of(&[0.5, 0.1, 0.3, 0.9]), &plan1(0.5)).unwrap();
        assert_eq!(m.pruned(0), vec![1, 2]);
        let m = select_prune_set(&norms_of(&[0.5, 0.1, 0.3, 0.9]), &plan1(0.0)).unwrap();
        assert!(m.layers[0].iter().all(|&k| k));
    }

    #[test]
    fn ties_prune_lower_index_first() {
        let m = select_prune_set(&norms_of(&[1.0; 4]), &plan1(0.5)).unwrap();
        assert_eq!(m.pruned(0), vec![0, 1]);
    }

    #[test]
    fn refuses_to_empty_a_layer() {
        assert!(matches!(
            select_prune_set(&norms_of(&[1.0, 2.0]), &plan1(1.0)),
            Err(GroupError::AllGroupsRemoved { layer: 0 })
        ));
    }

    fn hidden_net() -> Network {
        Network::new(
            Shape3::flat(4),
            &[
                LayerSpec::dense(8, Activation::Relu),
                LayerSpec::dense(100, Activation::Relu),
                LayerSpec::logits(2),
            ],
            1,
        )
        .unwrap()
    }

    #[test]
    fn random_sets_are_seeded_and_bounded() {
        let net = hidden_net();
        let plan = parse_pruning_plan("[0, 0.5, 0]", 3, Granularity::Filter).unwrap();
        let a = random_prune_set(&net, &plan, 17).unwrap();
        let b = random_prune_set(&net, &plan, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pruned(1).len(), 50);
        assert!(a.pruned(0).is_empty());
        let full = parse_pruning_plan("[0, 1, 0]", 3, Granularity::Filter).unwrap();
        assert!(random_prune_set(&net, &full, 1).is_err());
    }

    #[test]
    fn random_sets_are_uniform() {
        let net = hidden_net();
        let plan = parse_pruning_plan("[0, 0.5, 0]", 3, Granularity::Filter).unwrap();
        let mut counts = [0usize; 100];
        let seeds = 10_000;
        for s in 0..seeds {
            for g in random_prune_set(&net, &plan, s).unwrap().pruned(1) {
                counts[g] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / seeds as f64;
            assert!((freq - 0.5).abs() < 0.02, "{freq}");
        }
    }

    #[test]
    fn dispersion_values() {
        assert_eq!(norm_dispersion(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(norm_dispersion(&[0.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(norm_dispersion(&[0.0, 0.0]), Err(GroupError::ZeroMean)));
        assert!(matches!(norm_dispersion(&[1.0]), Err(GroupError::TooFewGroups(1))));
    }

    #[test]
    fn lognormal_dispersion_matches_analytic_cv() {
        // CV of LogNormal(μ, σ) is sqrt(exp(σ²) − 1).
        let sigma: f64 = 0.5;
        let dist = rand_distr::LogNormal::new(0.3, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws: Vec<f64> = (0..1000).map(|_| rng.sample(dist)).collect();
        let cv = (sigma.powi(2).exp() - 1.0).sqrt();
        let d = norm_dispersion(&draws).unwrap();
        assert!((d - cv).abs() / cv < 0.05, "{d} vs {cv}");
    }

    #[test]
    fn mask_text_round_trip_and_hash() {
        let net = hidden_net();
        let plan = parse_pruning_plan("[0, 0.3, 0]", 3, Granularity::Filter).unwrap();
        let m = random_prune_set(&net, &plan, 5).unwrap();
        let back = MaskVector::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
        assert_eq!(m.hash().len(), 64);
        let other = random_prune_set(&net, &plan, 6).unwrap();
        assert_ne!(other.hash(), m.hash());
        assert!(MaskVector::from_text("# mask v1 granularity=filter\n0 10x\n").is_err());
    }

    proptest! {
        #[test]
        fn exact_prune_count(norms in prop::collection::vec(0.0f64..10.0, 1..60), r in 0.0f64..0.99) {
            let n = norms.len();
            let k = prune_count(r, n);
            prop_assume!(k < n);
            let m = select_prune_set(&norms_of(&norms), &plan1(r)).unwrap();
            prop_assert_eq!(m.pruned(0).len(), k);
            prop_assert_eq!(k, (r * n as f64).floor() as usize);
        }

        #[test]
        fn permutation_consistent(
            norms in prop::collection::vec(0.0f64..10.0, 2..40),
            seed in any::<u64>(),
            r in 0.0f64..0.95,
        ) {
            let n = norms.len();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let permuted: Vec<f64> = perm.iter().map(|&i| norms[i]).collect();
            let direct = select_prune_set(&norms_of(&norms), &plan1(r)).unwrap();
            let via = select_prune_set(&norms_of(&permuted), &plan1(r)).unwrap();
            let mut unpermuted = vec![true; n];
            for (pos, &orig) in perm.iter().enumerate() {
                unpermuted[orig] = via.layers[0][pos];
            }
            // Sets agree except where the boundary norm is tied.
            let k = prune_count(r, n);
            let mut sorted = norms.clone();
            sorted.sort_by(f64::total_cmp);
            let boundary_tied = k > 0 && k < n && sorted[k - 1] == sorted[k];
            if !boundary_tied {
                prop_assert_eq!(unpermuted, direct.layers[0].clone());
            }
        }
    }
}
