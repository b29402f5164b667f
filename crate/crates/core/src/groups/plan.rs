use std::collections::BTreeSet;
use std::fmt;

use super::{GroupError, Result};
use crate::netcore::{Granularity, Network};

/// Surface syntax of a ratio string, kept so a plan prints the way it was written.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanSyntax {
    /// `[a, b, c]`: one ratio per layer (or stage).
    Stages(Vec<f64>),
    /// `[0:0, 1-15:0.7]`: inclusive index ranges.
    Ranges(Vec<RangeEntry>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeEntry {
    pub first: usize,
    pub last: usize,
    pub ratio: f64,
}

/// Per-layer pruning ratios `r_l` with the grouping granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningPlan {
    ratios: Vec<f64>,
    granularity: Granularity,
    never_prune: BTreeSet<usize>,
    syntax: PlanSyntax,
}

impl PruningPlan {
    /// Same ratio on every prunable layer except layer 0.
    pub fn uniform(ratio: f64, net: &Network, granularity: Granularity) -> Result<Self> {
        check_ratio(ratio)?;
        let ratios: Vec<f64> = net
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| if i == 0 || !l.spec().prunable { 0.0 } else { ratio })
            .collect();
        Ok(Self {
            syntax: PlanSyntax::Stages(ratios.clone()),
            ratios,
            granularity,
            never_prune: BTreeSet::from([0]),
        })
    }

    /// Plan from explicit per-layer ratios. Layer 0 is recorded as never
    /// pruned when its ratio is 0.
    pub fn from_ratios(ratios: Vec<f64>, granularity: Granularity) -> Result<Self> {
        for &r in &ratios {
            check_ratio(r)?;
        }
        let never_prune = match ratios.first() {
            Some(&r) if r > 0.0 => BTreeSet::new(),
            _ => BTreeSet::from([0]),
        };
        Ok(Self { syntax: PlanSyntax::Stages(ratios.clone()), ratios, granularity, never_prune })
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn ratio(&self, layer: usize) -> f64 {
        self.ratios.get(layer).copied().unwrap_or(0.0)
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn never_prune(&self) -> &BTreeSet<usize> {
        &self.never_prune
    }

    pub fn syntax(&self) -> &PlanSyntax {
        &self.syntax
    }

    pub fn num_layers(&self) -> usize {
        self.ratios.len()
    }

    /// Layers with a positive ratio.
    pub fn target_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.ratios.iter().enumerate().filter(|(_, &r)| r > 0.0).map(|(i, _)| i)
    }

    pub fn is_empty(&self) -> bool {
        self.target_layers().next().is_none()
    }

    /// Marks extra layers as never pruned, zeroing their ratios.
    pub fn with_never_prune(mut self, layers: impl IntoIterator<Item = usize>) -> Self {
        for l in layers {
            if let Some(r) = self.ratios.get_mut(l) {
                *r = 0.0;
            }
            self.never_prune.insert(l);
        }
        self.syntax = PlanSyntax::Stages(self.ratios.clone());
        self
    }

    /// Checks the plan against a concrete network.
    pub fn validate_for(&self, net: &Network) -> Result<()> {
        if self.ratios.len() != net.layers().len() {
            return Err(GroupError::LayerCount { expected: net.layers().len(), got: self.ratios.len() });
        }
        for (i, (l, &r)) in net.layers().iter().zip(&self.ratios).enumerate() {
            if r > 0.0 && !l.spec().prunable {
                return Err(GroupError::NotPrunable { layer: i });
            }
        }
        Ok(())
    }
}

impl fmt::Display for PruningPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.syntax)
    }
}

impl fmt::Display for PlanSyntax {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        match self {
            PlanSyntax::Stages(rs) => {
                for (i, r) in rs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{r}")?;
                }
            }
            PlanSyntax::Ranges(es) => {
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    if e.first == e.last {
                        write!(f, "{}:{}", e.first, e.ratio)?;
                    } else {
                        write!(f, "{}-{}:{}", e.first, e.last, e.ratio)?;
                    }
                }
            }
        }
        f.write_str("]")
    }
}

fn check_ratio(r: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&r) {
        Ok(r)
    } else {
        Err(GroupError::RatioOutOfRange(r))
    }
}

fn malformed(msg: impl Into<String>) -> GroupError {
    GroupError::PlanSyntax(msg.into())
}

fn parse_ratio(s: &str) -> Result<f64> {
    let r: f64 = s.trim().parse().map_err(|_| malformed(format!("bad ratio {s:?}")))?;
    check_ratio(r)
}

fn parse_index(s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| malformed(format!("bad layer index {s:?}")))
}

/// Parses only the surface syntax, without resolving against a layer count.
pub fn parse_plan_syntax(text: &str) -> Result<PlanSyntax> {
    let body = text
        .trim()
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| malformed("plan must be enclosed in [ ]"))?;
    let items: Vec<&str> = body.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(malformed("empty entry"));
    }
    let ranged = items.iter().filter(|s| s.contains(':')).count();
    if ranged == 0 {
        return Ok(PlanSyntax::Stages(items.iter().map(|s| parse_ratio(s)).collect::<Result<_>>()?));
    }
    if ranged != items.len() {
        return Err(malformed("cannot mix stage-list and range entries"));
    }
    let mut entries = Vec::with_capacity(items.len());
    for item in items {
        let (idx, ratio) = item.split_once(':').expect("checked above");
        let (first, last) = match idx.split_once('-') {
            Some((a, b)) => (parse_index(a)?, parse_index(b)?),
            None => {
                let i = parse_index(idx)?;
                (i, i)
            }
        };
        if first > last {
            return Err(malformed(format!("descending range {first}-{last}")));
        }
        entries.push(RangeEntry { first, last, ratio: parse_ratio(ratio)? });
    }
    for (i, a) in entries.iter().enumerate() {
        for b in &entries[i + 1..] {
            if a.first <= b.last && b.first <= a.last {
                return Err(GroupError::OverlappingRange {
                    first: (a.first, a.last),
                    second: (b.first, b.last),
                });
            }
        }
    }
    Ok(PlanSyntax::Ranges(entries))
}

/// Parses a ratio string in stage-list (`[0, 0.75, 0.75, 0.32]`) or range
/// (`[0:0, 1-15:0.70]`) form and resolves it against `num_layers`.
///
/// Layer 0 is never pruned unless the string gives it a nonzero ratio.
pub fn parse_pruning_plan(text: &str, num_layers: usize, granularity: Granularity) -> Result<PruningPlan> {
    let syntax = parse_plan_syntax(text)?;
    let ratios = match &syntax {
        PlanSyntax::Stages(rs) => {
            if rs.len() != num_layers {
                return Err(GroupError::LayerCount { expected: num_layers, got: rs.len() });
            }
            rs.clone()
        }
        PlanSyntax::Ranges(entries) => {
            let mut slots: Vec<Option<f64>> = vec![None; num_layers];
            for e in entries {
                if e.last >= num_layers {
                    return Err(GroupError::LayerCount { expected: num_layers, got: e.last + 1 });
                }
                for slot in &mut slots[e.first..=e.last] {
                    *slot = Some(e.ratio);
                }
            }
            slots
                .into_iter()
                .enumerate()
                .map(|(i, s)| s.ok_or(GroupError::UncoveredLayer(i)))
                .collect::<Result<_>>()?
        }
    };
    let never_prune = match ratios.first() {
        Some(&r) if r > 0.0 => BTreeSet::new(),
        _ => BTreeSet::from([0]),
    };
    Ok(PruningPlan { ratios, granularity, never_prune, syntax })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const F: Granularity = Granularity::Filter;

    #[test]
    fn stage_list_form() {
        let p = parse_pruning_plan("[0, 0.75, 0.75, 0.32]", 4, F).unwrap();
        assert_eq!(p.ratios(), &[0.0, 0.75, 0.75, 0.32]);
        assert!(p.never_prune().contains(&0));
    }

    #[test]
    fn range_form() {
        let p = parse_pruning_plan("[0:0, 1-15:0.70]", 16, F).unwrap();
        assert_eq!(p.ratio(0), 0.0);
        assert!((1..16).all(|i| p.ratio(i) == 0.70));
    }

    #[test]
    fn overlapping_ranges_rejected() {
        assert!(matches!(
            parse_pruning_plan("[0:0, 1-3:0.5, 2-4:0.5]", 5, F),
            Err(GroupError::OverlappingRange { first: (1, 3), second: (2, 4) })
        ));
    }

    #[test]
    fn malformed_inputs() {
        for bad in ["0, 0.5", "[0, ]", "[0:0, 0.5]", "[a:0.1]", "[3-1:0.2]", "[0, x]"] {
            assert!(parse_pruning_plan(bad, 2, F).is_err(), "{bad}");
        }
        assert!(matches!(parse_pruning_plan("[0, 1.5]", 2, F), Err(GroupError::RatioOutOfRange(_))));
        assert!(matches!(parse_pruning_plan("[0:0, 2:0.5]", 3, F), Err(GroupError::UncoveredLayer(1))));
        assert!(matches!(parse_pruning_plan("[0, 0.5]", 3, F), Err(GroupError::LayerCount { .. })));
    }

    #[test]
    fn explicit_layer_zero_ratio_overrides_default() {
        let p = parse_pruning_plan("[0.5, 0.5]", 2, F).unwrap();
        assert!(p.never_prune().is_empty());
        let p = p.with_never_prune([0]);
        assert_eq!(p.ratios(), &[0.0, 0.5]);
    }

    proptest! {
        #[test]
        fn display_round_trips(ratios in prop::collection::vec(0.0f64..=1.0, 1..12)) {
            let text = PlanSyntax::Stages(ratios.clone()).to_string();
            let p = parse_pruning_plan(&text, ratios.len(), F).unwrap();
            prop_assert_eq!(p.ratios(), ratios.as_slice());
            prop_assert_eq!(p.to_string(), text);
        }

        #[test]
        fn range_display_round_trips(cuts in prop::collection::btree_set(1usize..30, 0..6), r in 0.0f64..=1.0) {
            let mut bounds: Vec<usize> = vec![0];
            bounds.extend(cuts.iter().copied());
            bounds.push(30);
            let entries: Vec<String> = bounds
                .windows(2)
                .enumerate()
                .map(|(k, w)| format!("{}-{}:{}", w[0], w[1] - 1, r / (k + 1) as f64))
                .collect();
            let text = format!("[{}]", entries.join(", "));
            let p = parse_pruning_plan(&text, 30, F).unwrap();
            let again = parse_pruning_plan(&p.to_string(), 30, F).unwrap();
            prop_assert_eq!(p, again);
        }
    }
}
