use std::collections::HashMap;

use super::config::{NetworkConfig, STAGES};
use crate::blocks::{Conv, LdBlock, LdCache, Mlia, MliaCache, Sppf, SppfCache, XFuse, XFuseCache, IMAGE_CHANNELS};
use crate::error::{Error, Result};
use crate::params::{Grads, ParamSpec, ParamStore, Registry};
use crate::tensor::{bilinear_resize, bilinear_resize_grad, clamp, ConvSpec, Shape, Tensor};

/// Encoder stage whose resolution (input / 4) the aggregation runs at.
pub const MLIA_SHARED_STAGE: usize = 2;

/// One decoder step back up to encoder stage `stage`.
#[derive(Clone, Debug)]
pub struct DecoderScale {
    pub stage: usize,
    /// 1×1 conv halving channels after the ×2 upsample.
    pub up: Conv,
    /// 1×1 conv bringing the resized aggregation output to this scale's width.
    pub skip: Conv,
    pub xfuse: XFuse,
}

/// Layer graph without parameter values.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetworkConfig,
    pub stem: Conv,
    pub stages: Vec<Vec<LdBlock>>,
    /// `downs[i]` runs after the ×0.5 resize into stage `i + 1`.
    pub downs: Vec<Conv>,
    pub sppf: Option<Sppf>,
    pub mlia: Mlia,
    /// Ordered deepest first.
    pub decoder: Vec<DecoderScale>,
    pub head: Conv,
}

impl Network {
    /// Declare every layer, returning the graph and the parameter declarations.
    pub fn layout(config: &NetworkConfig) -> Result<(Network, Vec<ParamSpec>)> {
        config.validate()?;
        let widths = config.stage_widths();
        let mut reg = Registry::new();
        let stem = Conv::register(&mut reg, "stem", ConvSpec::new(IMAGE_CHANNELS, widths[0], 3));
        let mut stages = Vec::with_capacity(STAGES);
        let mut downs = Vec::with_capacity(STAGES - 1);
        reg.scope("encoder", |reg| {
            for (i, (&width, &depth)) in widths.iter().zip(&config.encoder_depths).enumerate() {
                if i > 0 {
                    downs.push(Conv::register(
                        reg,
                        &format!("down{i}"),
                        ConvSpec::pointwise(widths[i - 1], width),
                    ));
                }
                let blocks = reg.scope(format!("stage{}", i + 1), |reg| {
                    (0..depth)
                        .map(|j| LdBlock::register(reg, &format!("block{j}"), width, config.sn_enabled))
                        .collect()
                });
                stages.push(blocks);
            }
        });
        let sppf = config
            .sppf_enabled
            .then(|| Sppf::register(&mut reg, "sppf", widths[STAGES - 1]))
            .transpose()?;
        let mlia = Mlia::register(
            &mut reg,
            "mlia",
            &widths,
            config.fused_dim,
            config.fused_dim,
            MLIA_SHARED_STAGE,
        )?;
        let decoder = reg.scope("decoder", |reg| {
            (0..config.decoder_scales)
                .map(|k| {
                    let stage = STAGES - 2 - k;
                    reg.scope(format!("scale{}", stage + 1), |reg| {
                        Ok(DecoderScale {
                            stage,
                            up: Conv::register(reg, "up", ConvSpec::pointwise(widths[stage + 1], widths[stage])),
                            skip: Conv::register(reg, "skip", ConvSpec::pointwise(config.fused_dim, widths[stage])),
                            xfuse: XFuse::register(reg, "xfuse", widths[stage])?,
                        })
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let head = Conv::register_zeroed(&mut reg, "head", ConvSpec::new(widths[0], IMAGE_CHANNELS, 3));
        let net = Network {
            config: config.clone(),
            stem,
            stages,
            downs,
            sppf,
            mlia,
            decoder,
            head,
        };
        Ok((net, reg.into_specs()))
    }

    fn check_input(&self, blur: &Tensor) -> Result<()> {
        let s = blur.shape();
        if s.c != IMAGE_CHANNELS {
            return Err(Error::shape("forward", "channels", s.c, IMAGE_CHANNELS));
        }
        self.config.check_input_hw(s.h, s.w)
    }

    /// Spatial size of each encoder stage for an `h × w` input.
    pub fn stage_hw(h: usize, w: usize) -> [(usize, usize); STAGES] {
        std::array::from_fn(|i| (h >> i, w >> i))
    }
}

/// Intermediates kept by [`Model::forward_train`].
#[derive(Debug)]
pub struct ForwardCache {
    blur: Tensor,
    ld: Vec<Vec<LdCache>>,
    /// Input of each down conv (the resized previous stage) and the pre-resize shape.
    down_inputs: Vec<(Shape, Tensor)>,
    sppf: Option<SppfCache>,
    mlia: MliaCache,
    mlia_out_shape: Shape,
    decoder: Vec<DecoderCache>,
    head_input: Tensor,
    pre_clamp: Tensor,
}

#[derive(Debug)]
struct DecoderCache {
    prev_shape: Shape,
    up_input: Tensor,
    skip_input: Tensor,
    xfuse: XFuseCache,
}

/// A network together with its parameter values.
#[derive(Clone, Debug)]
pub struct Model {
    pub network: Network,
    pub params: ParamStore,
}

impl Model {
    /// Deterministic initialization: identical `(config, seed)` give bit-identical parameters.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Model> {
        let (network, specs) = Network::layout(config)?;
        Ok(Model {
            network,
            params: ParamStore::initialize(specs, seed),
        })
    }

    /// Rebuild from stored tensors without re-initializing.
    pub fn from_tensors(config: &NetworkConfig, tensors: HashMap<String, Tensor>) -> Result<Model> {
        let (network, specs) = Network::layout(config)?;
        Ok(Model {
            network,
            params: ParamStore::from_named(specs, tensors)?,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.network.config
    }

    /// Eval-mode forward: batch norm uses running statistics and nothing is mutated.
    pub fn forward(&self, blur: &Tensor) -> Result<Tensor> {
        let net = &self.network;
        let p = &self.params;
        net.check_input(blur)?;
        let mut x = net.stem.forward(p, blur)?;
        let mut skips = Vec::with_capacity(STAGES);
        for (i, blocks) in net.stages.iter().enumerate() {
            if i > 0 {
                let s = x.shape();
                x = net.downs[i - 1].forward(p, &bilinear_resize(&x, s.h / 2, s.w / 2)?)?;
            }
            for block in blocks {
                x = block.forward(p, &x)?;
            }
            if i + 1 < STAGES {
                skips.push(x.clone());
            }
        }
        if let Some(sppf) = &net.sppf {
            x = sppf.forward(p, &x)?;
        }
        let fused = {
            let refs = [&skips[0], &skips[1], &skips[2], &x];
            net.mlia.forward(p, &refs)?
        };
        drop(skips);
        let stage_hw = Network::stage_hw(blur.shape().h, blur.shape().w);
        for dec in &net.decoder {
            let (th, tw) = stage_hw[dec.stage];
            let up = dec.up.forward(p, &bilinear_resize(&x, th, tw)?)?;
            let skip = dec.skip.forward(p, &bilinear_resize(&fused, th, tw)?)?;
            x = dec.xfuse.forward(p, &up, &skip, blur)?;
        }
        let residual = net.head.forward(p, &x)?;
        let mut out = residual;
        out.add_assign(blur)?;
        Ok(clamp(&out, 0.0, 1.0))
    }

    /// Train-mode forward: batch statistics, running averages updated once per call.
    pub fn forward_train(&mut self, blur: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let net = &self.network;
        let p = &mut self.params;
        net.check_input(blur)?;
        let mut x = net.stem.forward(p, blur)?;
        let mut ld = Vec::with_capacity(STAGES);
        let mut down_inputs = Vec::with_capacity(STAGES - 1);
        let mut stage_outs = Vec::with_capacity(STAGES);
        for (i, blocks) in net.stages.iter().enumerate() {
            if i > 0 {
                let s = x.shape();
                let resized = bilinear_resize(&x, s.h / 2, s.w / 2)?;
                x = net.downs[i - 1].forward(p, &resized)?;
                down_inputs.push((s, resized));
            }
            let mut caches = Vec::with_capacity(blocks.len());
            for block in blocks {
                let (y, c) = block.forward_train(p, &x)?;
                caches.push(c);
                x = y;
            }
            ld.push(caches);
            stage_outs.push(x.clone());
        }
        let sppf = match &net.sppf {
            Some(s) => {
                let (y, c) = s.forward_train(p, &x)?;
                x = y;
                Some(c)
            }
            None => None,
        };
        let (fused, mlia) = {
            let refs = [&stage_outs[0], &stage_outs[1], &stage_outs[2], &x];
            net.mlia.forward_train(p, &refs)?
        };
        let stage_hw = Network::stage_hw(blur.shape().h, blur.shape().w);
        let mut decoder = Vec::with_capacity(net.decoder.len());
        for dec in &net.decoder {
            let (th, tw) = stage_hw[dec.stage];
            let up_input = bilinear_resize(&x, th, tw)?;
            let skip_input = bilinear_resize(&fused, th, tw)?;
            let up = dec.up.forward(p, &up_input)?;
            let skip = dec.skip.forward(p, &skip_input)?;
            let prev_shape = x.shape();
            let (y, xfuse) = dec.xfuse.forward_train(p, &up, &skip, blur)?;
            x = y;
            decoder.push(DecoderCache {
                prev_shape,
                up_input,
                skip_input,
                xfuse,
            });
        }
        let mut pre_clamp = net.head.forward(p, &x)?;
        pre_clamp.add_assign(blur)?;
        let out = clamp(&pre_clamp, 0.0, 1.0);
        Ok((
            out,
            ForwardCache {
                blur: blur.clone(),
                ld,
                down_inputs,
                sppf,
                mlia,
                mlia_out_shape: fused.shape(),
                decoder,
                head_input: x,
                pre_clamp,
            },
        ))
    }

    /// Parameter gradients of a scalar loss given `d loss / d output`.
    ///
    /// The clamp passes gradient wherever the unclamped value lies in `[0, 1]`.
    pub fn backward(&self, cache: &ForwardCache, dout: &Tensor) -> Result<Grads> {
        let net = &self.network;
        let p = &self.params;
        let mut g = Grads::new(p);

        let mut dres = dout.clone();
        for (d, &v) in dres.data_mut().iter_mut().zip(cache.pre_clamp.data()) {
            if !(0.0..=1.0).contains(&v) {
                *d = 0.0;
            }
        }
        let mut dx = net.head.backward(p, &cache.head_input, &dres, &mut g)?;

        let mut dfused = Tensor::zeros(cache.mlia_out_shape);
        for (dec, dc) in net.decoder.iter().zip(&cache.decoder).rev() {
            let xg = dec.xfuse.backward(p, &dc.xfuse, &dx, &mut g)?;
            let dskip = dec.skip.backward(p, &dc.skip_input, &xg.skip, &mut g)?;
            dfused.add_assign(&bilinear_resize_grad(cache.mlia_out_shape, &dskip)?)?;
            let dup = dec.up.backward(p, &dc.up_input, &xg.up, &mut g)?;
            dx = bilinear_resize_grad(dc.prev_shape, &dup)?;
        }

        let mut dstages = net.mlia.backward(p, &cache.mlia, &dfused, &mut g)?;
        dstages[STAGES - 1].add_assign(&dx)?;
        if let (Some(sppf), Some(sc)) = (&net.sppf, &cache.sppf) {
            dstages[STAGES - 1] = sppf.backward(p, sc, &dstages[STAGES - 1], &mut g)?;
        }

        let mut carry: Option<Tensor> = None;
        for i in (0..STAGES).rev() {
            let mut d = dstages[i].clone();
            if let Some(c) = carry.take() {
                d.add_assign(&c)?;
            }
            for (block, bc) in net.stages[i].iter().zip(&cache.ld[i]).rev() {
                d = block.backward(p, bc, &d, &mut g)?;
            }
            if i > 0 {
                let (prev_shape, resized) = &cache.down_inputs[i - 1];
                let dres = net.downs[i - 1].backward(p, resized, &d, &mut g)?;
                carry = Some(bilinear_resize_grad(*prev_shape, &dres)?);
            } else {
                net.stem.backward(p, &cache.blur, &d, &mut g)?;
            }
        }
        Ok(g)
    }

    /// Learnable scalars (batch-norm running statistics excluded).
    pub fn count_params(&self) -> usize {
        self.params.learnable_count()
    }
}
