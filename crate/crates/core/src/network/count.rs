//! Analytic parameter and multiply-accumulate accounting.
//!
//! MAC convention, per batch item:
//! - convolution: `out_h · out_w · out_c · (in_c / groups) · kh · kw` (bias adds are free);
//! - elementwise maps (GELU, batch norm, sigmoid, residual adds, gating, channel gains, the
//!   output clamp) and every max pool: 1 per output element;
//! - bilinear resize: 1 per output element when the size changes, 0 for a same-size resize;
//! - global average pooling: 1 per input element;
//! - concatenation and slicing: free.

use super::config::{NetworkConfig, STAGES};
use super::model::{Model, Network};
use crate::blocks::IMAGE_CHANNELS;
use crate::error::Result;
use crate::params::count_learnable;

/// Learnable scalars of a configuration, without allocating any tensors.
pub fn count_params_for(config: &NetworkConfig) -> Result<usize> {
    let (_, specs) = Network::layout(config)?;
    Ok(count_learnable(&specs))
}

pub fn count_params(model: &Model) -> usize {
    model.count_params()
}

pub fn count_macs(model: &Model, h: usize, w: usize) -> Result<u64> {
    network_macs(&model.network, h, w)
}

pub fn count_macs_for(config: &NetworkConfig, h: usize, w: usize) -> Result<u64> {
    let (network, _) = Network::layout(config)?;
    network_macs(&network, h, w)
}

/// Per-layer breakdown `(label, macs)` in execution order.
pub fn mac_breakdown(net: &Network, h: usize, w: usize) -> Result<Vec<(String, u64)>> {
    net.config.check_input_hw(h, w)?;
    let widths = net.config.stage_widths();
    let hw = Network::stage_hw(h, w);
    let mut items = Vec::new();
    items.push(("stem".to_string(), net.stem.macs(h, w)));
    for (i, blocks) in net.stages.iter().enumerate() {
        let (sh, sw) = hw[i];
        if i > 0 {
            items.push((format!("encoder.resize{i}"), (sh * sw * widths[i - 1]) as u64));
            items.push((format!("encoder.down{i}"), net.downs[i - 1].macs(sh, sw)));
        }
        for (j, b) in blocks.iter().enumerate() {
            items.push((format!("encoder.stage{}.block{j}", i + 1), b.macs(sh, sw)));
        }
    }
    let (bh, bw) = hw[STAGES - 1];
    if let Some(s) = &net.sppf {
        items.push(("sppf".to_string(), s.macs(bh, bw)));
    }
    items.push(("mlia".to_string(), net.mlia.macs(&hw)));
    let mlia_hw = hw[net.mlia.shared_stage];
    let mut prev_c = widths[STAGES - 1];
    for dec in &net.decoder {
        let (th, tw) = hw[dec.stage];
        let label = format!("decoder.scale{}", dec.stage + 1);
        items.push((format!("{label}.resize_up"), (th * tw * prev_c) as u64));
        items.push((format!("{label}.up"), dec.up.macs(th, tw)));
        let skip_resize = if (th, tw) == mlia_hw {
            0
        } else {
            (th * tw * net.config.fused_dim) as u64
        };
        items.push((format!("{label}.resize_skip"), skip_resize));
        items.push((format!("{label}.skip"), dec.skip.macs(th, tw)));
        items.push((format!("{label}.xfuse"), dec.xfuse.macs(th, tw, (h, w))));
        prev_c = widths[dec.stage];
    }
    items.push(("head".to_string(), net.head.macs(h, w)));
    // residual add and clamp
    items.push(("output".to_string(), 2 * (h * w * IMAGE_CHANNELS) as u64));
    Ok(items)
}

/// MACs that do not depend on the input size: the aggregation gate's 1×1 conv
/// and sigmoid run on globally pooled `(n, c, 1, 1)` features.
pub fn resolution_independent_macs(net: &Network) -> u64 {
    net.mlia.attn.macs(1, 1) + net.mlia.fused_dim as u64
}

pub fn network_macs(net: &Network, h: usize, w: usize) -> Result<u64> {
    Ok(mac_breakdown(net, h, w)?.iter().map(|(_, m)| m).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::Conv;
    use crate::params::{ParamStore, Registry};
    use crate::tensor::ConvSpec;

    #[test]
    fn single_conv_closed_forms() {
        let mut reg = Registry::new();
        let pw = Conv::register(&mut reg, "pw", ConvSpec::pointwise(3, 8));
        let full = Conv::register(&mut reg, "full", ConvSpec::new(3, 8, 3));
        let store = ParamStore::initialize(reg.into_specs(), 0);
        let pw_params: usize = [pw.weight, pw.bias.unwrap()]
            .iter()
            .map(|&id| store.get(id).numel())
            .sum();
        assert_eq!(pw_params, 32);
        assert_eq!(pw.macs(4, 4), 384);
        assert_eq!(full.macs(4, 4), 3456);
    }

    #[test]
    fn counts_agree_with_built_model() {
        let cfg = NetworkConfig::with_width(8, [1, 2, 1, 1]);
        let model = Model::build(&cfg, 0).unwrap();
        assert_eq!(count_params(&model), count_params_for(&cfg).unwrap());
        assert_eq!(
            count_macs(&model, 64, 32).unwrap(),
            count_macs_for(&cfg, 64, 32).unwrap()
        );
    }

    #[test]
    fn macs_scale_by_four_apart_from_the_pooled_gate() {
        let cfg = NetworkConfig::with_width(8, [1, 2, 1, 1]);
        let (net, _) = Network::layout(&cfg).unwrap();
        let a = network_macs(&net, 32, 48).unwrap();
        let b = network_macs(&net, 64, 96).unwrap();
        let fixed = resolution_independent_macs(&net);
        // attention 1x1 conv on pooled 32 channels (32 * 32) plus the 32-entry sigmoid
        assert_eq!(fixed, 32 * 32 + 32);
        assert_eq!(b + 3 * fixed, 4 * a);
    }
}
