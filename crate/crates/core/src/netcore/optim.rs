use serde::{Deserialize, Serialize};

use super::{GradBuffer, NetError, Network, Result};

/// What counts as one weight group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One filter / dense output row per group.
    Filter,
    /// Every weight is its own group.
    Weight,
}

impl Granularity {
    pub fn groups_in(self, layer: &super::Layer) -> usize {
        match self {
            Granularity::Filter => layer.units(),
            Granularity::Weight => layer.weights.len(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Filter => "filter",
            Granularity::Weight => "weight",
        }
    }
}

/// Per-group L2 penalty factors `λ_g` for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMap {
    granularity: Granularity,
    layers: Vec<Vec<f64>>,
}

impl PenaltyMap {
    /// Same `λ` for every group.
    pub fn uniform(net: &Network, granularity: Granularity, lambda: f64) -> Self {
        Self {
            granularity,
            layers: net
                .layers()
                .iter()
                .map(|l| vec![lambda; granularity.groups_in(l)])
                .collect(),
        }
    }

    pub fn from_layers(granularity: Granularity, layers: Vec<Vec<f64>>) -> Self {
        Self { granularity, layers }
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        &self.layers[layer]
    }

    pub fn get(&self, layer: usize, group: usize) -> f64 {
        self.layers[layer][group]
    }

    pub fn set(&mut self, layer: usize, group: usize, lambda: f64) {
        self.layers[layer][group] = lambda;
    }

    pub fn fill_layer(&mut self, layer: usize, lambda: f64) {
        self.layers[layer].iter_mut().for_each(|v| *v = lambda);
    }

    fn check_covers(&self, net: &Network) -> Result<()> {
        for (i, l) in net.layers().iter().enumerate() {
            let expected = self.granularity.groups_in(l);
            let got = self.layers.get(i).map_or(0, Vec::len);
            if got != expected {
                return Err(NetError::MissingGroup { layer: i, expected, got });
            }
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Ordinary weight decay `γ`.
    pub base_decay: f64,
    /// Per-layer `(weights, bias)` velocity; empty until the first step.
    pub(crate) velocity: Vec<(Vec<f64>, Vec<f64>)>,
}

impl OptimState {
    pub fn new(learning_rate: f64, momentum: f64, base_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(NetError::OptimMismatch(format!("learning rate {learning_rate} must be > 0")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(NetError::OptimMismatch(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Self { learning_rate, momentum, base_decay, velocity: Vec::new() })
    }

    pub fn velocity(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.velocity
    }

    pub fn reset_velocity(&mut self) {
        self.velocity.clear();
    }

    fn ensure_velocity(&mut self, net: &Network) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = net
                .layers()
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect();
            return Ok(());
        }
        let matches = self.velocity.len() == net.layers().len()
            && self
                .velocity
                .iter()
                .zip(net.layers())
                .all(|((vw, vb), l)| vw.len() == l.weights.len() && vb.len() == l.bias.len());
        if matches {
            Ok(())
        } else {
            Err(NetError::OptimMismatch("velocity buffers have a different shape".into()))
        }
    }
}

/// One momentum SGD update with coupled per-group L2 penalty.
///
/// For a weight `w` in group `g` the effective gradient is `∂L/∂w + λ_g·w`.
/// With filter groups a unit's bias belongs to its filter and shares `λ_g`;
/// with weight groups biases are unpenalised. Then `v ← μv + d`,
/// `θ ← θ − lr·v`. Frozen (pruned) weights are left at zero with zero
/// velocity. Negative `λ_g` pushes weights away from zero.
///
/// The update is staged per layer and committed only if every new value is
/// finite, so a failing step leaves `net` untouched.
pub fn sgd_step(
    net: &mut Network,
    grads: &GradBuffer,
    opt: &mut OptimState,
    lambdas: &PenaltyMap,
) -> Result<()> {
    lambdas.check_covers(net)?;
    if grads.layers.len() != net.layers().len() {
        return Err(NetError::ShapeMismatch { expected: net.layers().len(), got: grads.layers.len() });
    }
    opt.ensure_velocity(net)?;
    let (lr, mu) = (opt.learning_rate, opt.momentum);
    let granularity = lambdas.granularity();

    let mut staged = Vec::with_capacity(net.layers().len());
    for (li, layer) in net.layers().iter().enumerate() {
        let g = &grads.layers[li];
        if g.weights.len() != layer.weights.len() || g.bias.len() != layer.bias.len() {
            return Err(NetError::ShapeMismatch { expected: layer.weights.len(), got: g.weights.len() });
        }
        let (vw, vb) = &opt.velocity[li];
        let lam = lambdas.layer(li);
        let fan = layer.fan_in();
        let mut new_w = layer.weights.clone();
        let mut new_vw = vw.clone();
        for k in 0..new_w.len() {
            if layer.is_frozen(k) {
                new_w[k] = 0.0;
                new_vw[k] = 0.0;
                continue;
            }
            let group = match granularity {
                Granularity::Filter => k / fan,
                Granularity::Weight => k,
            };
            let d = g.weights[k] + lam[group] * new_w[k];
            new_vw[k] = mu * new_vw[k] + d;
            new_w[k] -= lr * new_vw[k];
        }
        let mut new_b = layer.bias.clone();
        let mut new_vb = vb.clone();
        for k in 0..new_b.len() {
            let d = match granularity {
                Granularity::Filter => g.bias[k] + lam[k] * new_b[k],
                Granularity::Weight => g.bias[k],
            };
            new_vb[k] = mu * new_vb[k] + d;
            new_b[k] -= lr * new_vb[k];
        }
        if new_w.iter().chain(&new_b).any(|v| !v.is_finite()) {
            return Err(NetError::NumericFailure(format!("non-finite update in layer {li}")));
        }
        staged.push((new_w, new_b, new_vw, new_vb));
    }
    for (li, (w, b, vw, vb)) in staged.into_iter().enumerate() {
        let layer = &mut net.layers_mut()[li];
        layer.weights = w;
        layer.bias = b;
        opt.velocity[li] = (vw, vb);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Activation, LayerSpec, Shape3};

    fn net() -> Network {
        Network::new(
            Shape3::flat(3),
            &[LayerSpec::dense(4, Activation::Relu), LayerSpec::logits(2)],
            3,
        )
        .unwrap()
    }

    #[test]
    fn pure_decay_step_scales_weights() {
        let mut n = net();
        n.layers_mut()[0].bias = vec![1.0, -2.0, 0.0, 4.0];
        let before = n.clone();
        let grads = GradBuffer::zeros_like(&n);
        let mut opt = OptimState::new(0.1, 0.0, 0.0).unwrap();
        let lam = PenaltyMap::uniform(&n, Granularity::Filter, 0.5);
        sgd_step(&mut n, &grads, &mut opt, &lam).unwrap();
        for (a, b) in n.layers().iter().zip(before.layers()) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(*x, y - 0.1 * (0.5 * y));
                assert!((x - 0.95 * y).abs() < 1e-15);
            }
            for (x, y) in a.bias.iter().zip(&b.bias) {
                assert!((x - 0.95 * y).abs() < 1e-15, "filter bias shares the group penalty");
            }
        }
    }

    #[test]
    fn negative_penalty_grows_weights() {
        let mut n = net();
        let before = n.clone();
        let grads = GradBuffer::zeros_like(&n);
        let gamma = 5e-4;
        let mut opt = OptimState::new(0.01, 0.0, gamma).unwrap();
        let lam = PenaltyMap::uniform(&n, Granularity::Weight, -gamma);
        sgd_step(&mut n, &grads, &mut opt, &lam).unwrap();
        for (a, b) in n.layers().iter().zip(before.layers()) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert!((x - (1.0 + 0.01 * gamma) * y).abs() < 1e-15);
                assert!(x.abs() >= y.abs());
            }
            assert_eq!(a.bias, b.bias, "weight groups leave biases alone");
        }
    }

    #[test]
    fn missing_group_is_rejected() {
        let mut n = net();
        let grads = GradBuffer::zeros_like(&n);
        let mut opt = OptimState::new(0.1, 0.9, 0.0).unwrap();
        let lam = PenaltyMap::from_layers(Granularity::Filter, vec![vec![0.0; 4]]);
        assert!(matches!(
            sgd_step(&mut n, &grads, &mut opt, &lam),
            Err(NetError::MissingGroup { layer: 1, .. })
        ));
    }

    #[test]
    fn non_finite_update_leaves_network_untouched() {
        let mut n = net();
        let before = n.clone();
        let mut grads = GradBuffer::zeros_like(&n);
        grads.layers[1].weights[0] = f64::INFINITY;
        let mut opt = OptimState::new(0.1, 0.9, 0.0).unwrap();
        let lam = PenaltyMap::uniform(&n, Granularity::Filter, 0.0);
        assert!(sgd_step(&mut n, &grads, &mut opt, &lam).is_err());
        assert_eq!(n, before);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(OptimState::new(0.0, 0.9, 0.0).is_err());
        assert!(OptimState::new(0.1, 1.0, 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Uniform `γ` reproduces textbook SGD with coupled decay on
            /// every weight and bias.
            #[test]
            fn uniform_penalty_is_classical_sgd(
                seed in any::<u64>(),
                gamma in 0.0..1e-2f64,
                lr in 1e-4..0.5f64,
                mu in 0.0..0.99f64,
                steps in 1usize..4,
            ) {
                let mut n = Network::new(
                    Shape3::flat(3),
                    &[LayerSpec::dense(4, Activation::Relu), LayerSpec::logits(2)],
                    seed,
                ).unwrap();
                let mut reference: Vec<(Vec<f64>, Vec<f64>)> = n.layers().iter().map(|l| (l.weights.clone(), l.bias.clone())).collect();
                let mut vel: Vec<(Vec<f64>, Vec<f64>)> = reference.iter().map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()])).collect();
                let mut opt = OptimState::new(lr, mu, gamma).unwrap();
                let map = PenaltyMap::uniform(&n, Granularity::Filter, gamma);
                for s in 0..steps {
                    let x: Vec<f64> = (0..6).map(|i| ((seed as f64) * 1e-3 + (i + s) as f64).cos()).collect();
                    let (_, g) = n.loss_and_grads(&x, &[0, 1]).unwrap();
                    for (li, lg) in g.layers.iter().enumerate() {
                        let (w, b) = &mut reference[li];
                        let (vw, vb) = &mut vel[li];
                        for k in 0..w.len() {
                            vw[k] = mu * vw[k] + (lg.weights[k] + gamma * w[k]);
                            w[k] -= lr * vw[k];
                        }
                        for k in 0..b.len() {
                            vb[k] = mu * vb[k] + (lg.bias[k] + gamma * b[k]);
                            b[k] -= lr * vb[k];
                        }
                    }
                    sgd_step(&mut n, &g, &mut opt, &map).unwrap();
                    for (l, (w, b)) in n.layers().iter().zip(&reference) {
                        prop_assert_eq!(&l.weights, w);
                        prop_assert_eq!(&l.bias, b);
                    }
                }
            }
        }
    }
}
