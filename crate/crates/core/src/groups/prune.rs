use super::{GroupError, MaskVector, Result};
use crate::netcore::{Granularity, Layer, LayerKind, Network, Shape3};

/// Returns a copy with masked groups zeroed but the topology intact.
/// Filter groups lose their bias too. Used as the reference for
/// [`apply_hard_prune`].
pub fn zero_masked(net: &Network, mask: &MaskVector) -> Result<Network> {
    mask.check_matches(net)?;
    let mut out = net.clone();
    for (layer, keep) in out.layers_mut().iter_mut().zip(&mask.layers) {
        let fan = layer.fan_in();
        for (g, &k) in keep.iter().enumerate() {
            if k {
                continue;
            }
            match mask.granularity {
                Granularity::Filter => {
                    layer.weights[g * fan..(g + 1) * fan].iter_mut().for_each(|w| *w = 0.0);
                    layer.bias[g] = 0.0;
                }
                Granularity::Weight => layer.weights[g] = 0.0,
            }
        }
    }
    Ok(out)
}

/// Applies a mask permanently.
///
/// * `Weight` granularity: masked weights become exactly 0 and frozen, so
///   later SGD steps leave them at 0.
/// * `Filter` granularity: masked filters (and their biases) are removed and
///   the consuming layer drops the matching input slice, shrinking both
///   tensors. The final logits layer cannot lose units.
///
/// Produces a new network; the input is not modified.
pub fn apply_hard_prune(net: &Network, mask: &MaskVector) -> Result<Network> {
    mask.check_matches(net)?;
    match mask.granularity {
        Granularity::Weight => {
            let mut out = net.clone();
            for (layer, keep) in out.layers_mut().iter_mut().zip(&mask.layers) {
                if keep.iter().all(|&k| k) {
                    continue;
                }
                let mut frozen = layer.frozen().map(<[bool]>::to_vec).unwrap_or_else(|| vec![false; keep.len()]);
                for (i, &k) in keep.iter().enumerate() {
                    if !k {
                        layer.weights[i] = 0.0;
                        frozen[i] = true;
                    }
                }
                layer.frozen = Some(frozen);
            }
            Ok(out)
        }
        Granularity::Filter => shrink_filters(net, mask),
    }
}

fn shrink_filters(net: &Network, mask: &MaskVector) -> Result<Network> {
    let n_layers = net.layers().len();
    if mask.layers[n_layers - 1].iter().any(|&k| !k) {
        return Err(GroupError::Structural("the logits layer has no consumer to absorb removed units".into()));
    }
    let mut layers = Vec::with_capacity(n_layers);
    // Channels of the current layer's input that survive the previous layer's pruning.
    let mut kept_inputs: Option<&[bool]> = None;
    for (li, layer) in net.layers().iter().enumerate() {
        let keep_units = &mask.layers[li];
        let n_keep = keep_units.iter().filter(|&&k| k).count();
        if n_keep == 0 {
            return Err(GroupError::AllGroupsRemoved { layer: li });
        }
        let old_fan = layer.fan_in();
        let old_in = layer.in_shape();
        // Each filter row is `in_channels` contiguous blocks: spatial
        // positions for a dense consumer of a conv map, kernel taps for conv.
        let block = match layer.spec().kind {
            LayerKind::Dense => old_in.h * old_in.w,
            LayerKind::Conv2d { kh, kw } => kh * kw,
        };
        debug_assert_eq!(old_fan, old_in.c * block);
        let channel_keep: Vec<bool> = match kept_inputs {
            Some(k) => {
                if k.len() != old_in.c {
                    return Err(GroupError::Structural(format!(
                        "layer {li} input has {} channels, producer mask has {}",
                        old_in.c,
                        k.len()
                    )));
                }
                k.to_vec()
            }
            None => vec![true; old_in.c],
        };
        let new_fan = channel_keep.iter().filter(|&&k| k).count() * block;

        let mut weights = Vec::with_capacity(n_keep * new_fan);
        let mut frozen = layer.frozen().map(|_| Vec::with_capacity(n_keep * new_fan));
        let mut bias = Vec::with_capacity(n_keep);
        for (u, &ku) in keep_units.iter().enumerate() {
            if !ku {
                continue;
            }
            bias.push(layer.bias[u]);
            let row = u * old_fan;
            for (c, &kc) in channel_keep.iter().enumerate() {
                if !kc {
                    continue;
                }
                let range = row + c * block..row + (c + 1) * block;
                weights.extend_from_slice(&layer.weights[range.clone()]);
                if let (Some(f), Some(src)) = (frozen.as_mut(), layer.frozen()) {
                    f.extend_from_slice(&src[range]);
                }
            }
        }
        let mut spec = *layer.spec();
        spec.out = n_keep;
        let new_in = Shape3::new(channel_keep.iter().filter(|&&k| k).count(), old_in.h, old_in.w);
        let out_shape = Shape3::new(n_keep, layer.out_shape().h, layer.out_shape().w);
        layers.push(Layer {
            spec,
            in_shape: new_in,
            out_shape,
            weights,
            bias,
            frozen,
        });
        kept_inputs = Some(keep_units);
    }
    Network::from_layers(net.input_shape(), layers)
        .map_err(|e| GroupError::Structural(format!("pruned network is inconsistent: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{parse_pruning_plan, random_prune_set};
    use crate::netcore::{Activation, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conv_net(seed: u64) -> Network {
        Network::new(
            Shape3::new(2, 6, 6),
            &[
                LayerSpec::conv(4, 3, 3, Activation::Relu),
                LayerSpec::conv(5, 2, 2, Activation::Relu),
                LayerSpec::dense(6, Activation::Relu),
                LayerSpec::logits(3),
            ],
            seed,
        )
        .unwrap()
    }

    fn inputs(net: &Network, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * net.input_shape().len()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn full_mask_is_identity() {
        let net = conv_net(1);
        let mask = MaskVector::full(&net, Granularity::Filter);
        let pruned = apply_hard_prune(&net, &mask).unwrap();
        let x = inputs(&net, 10, 2);
        assert_eq!(pruned.predict(&x).unwrap(), net.predict(&x).unwrap());
        assert_eq!(pruned, net);
    }

    #[test]
    fn removing_a_dead_filter_changes_nothing() {
        let mut net = conv_net(3);
        let fan = net.layers()[1].fan_in();
        net.layers_mut()[1].weights[2 * fan..3 * fan].iter_mut().for_each(|w| *w = 0.0);
        net.layers_mut()[1].bias[2] = 0.0;
        let mask = MaskVector::from_pruned(&net, Granularity::Filter, &[vec![], vec![2], vec![], vec![]]).unwrap();
        let pruned = apply_hard_prune(&net, &mask).unwrap();
        assert_eq!(pruned.layers()[1].units(), 4);
        assert_eq!(pruned.layers()[2].in_shape().c, 4);
        let x = inputs(&net, 100, 4);
        assert!(max_diff(&pruned.predict(&x).unwrap(), &net.predict(&x).unwrap()) < 1e-10);
    }

    #[test]
    fn shrunk_equals_zero_masked_on_random_masks() {
        let net = conv_net(5);
        let plan = parse_pruning_plan("[0.5, 0.4, 0.5, 0]", 4, Granularity::Filter).unwrap();
        for seed in 0..5 {
            let mask = random_prune_set(&net, &plan, seed).unwrap();
            let shrunk = apply_hard_prune(&net, &mask).unwrap();
            let masked = zero_masked(&net, &mask).unwrap();
            let x = inputs(&net, 100, seed + 100);
            assert!(max_diff(&shrunk.predict(&x).unwrap(), &masked.predict(&x).unwrap()) < 1e-10);
            assert!(shrunk.num_params() < net.num_params());
        }
    }

    #[test]
    fn unstructured_prune_zeroes_and_freezes() {
        let net = conv_net(6);
        let plan = parse_pruning_plan("[0, 0.5, 0.5, 0.5]", 4, Granularity::Weight).unwrap();
        let mask = random_prune_set(&net, &plan, 1).unwrap();
        let pruned = apply_hard_prune(&net, &mask).unwrap();
        for (li, layer) in pruned.layers().iter().enumerate() {
            for g in mask.pruned(li) {
                assert_eq!(layer.weights[g], 0.0);
                assert!(layer.is_frozen(g));
            }
        }
        assert_eq!(pruned.num_frozen(), mask.num_pruned());
        let x = inputs(&net, 20, 9);
        let masked = zero_masked(&net, &mask).unwrap();
        assert_eq!(pruned.predict(&x).unwrap(), masked.predict(&x).unwrap());
    }

    #[test]
    fn logits_layer_cannot_lose_units() {
        let net = conv_net(7);
        let mask = MaskVector::from_pruned(&net, Granularity::Filter, &[vec![], vec![], vec![], vec![0]]).unwrap();
        assert!(matches!(apply_hard_prune(&net, &mask), Err(GroupError::Structural(_))));
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let net = conv_net(8);
        let mask = MaskVector { layers: vec![vec![true; 4]], granularity: Granularity::Filter };
        assert!(matches!(apply_hard_prune(&net, &mask), Err(GroupError::MaskShape(_))));
    }
}
