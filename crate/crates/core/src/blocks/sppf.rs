use super::layers::Conv;
use crate::error::{Error, Result};
use crate::params::{Grads, ParamStore, Registry};
use crate::tensor::{concat_channels, maxpool2d, maxpool2d_grad, split_channels, ConvSpec, PoolSpec, Shape, Tensor};

/// Spatial pyramid pooling (fast): halve channels, pool three times in sequence,
/// concatenate all four maps and project back.
#[derive(Clone, Debug)]
pub struct Sppf {
    pub channels: usize,
    pub pw_in: Conv,
    pub pw_out: Conv,
    pub pool: PoolSpec,
}

#[derive(Clone, Debug)]
pub struct SppfCache {
    input: Tensor,
    /// `h, pool(h), pool²(h), pool³(h)`
    pyramid: [Tensor; 4],
    concat: Tensor,
}

impl Sppf {
    pub fn register(reg: &mut Registry, name: &str, channels: usize) -> Result<Self> {
        if !channels.is_multiple_of(2) || channels == 0 {
            return Err(Error::invalid("sppf", format!("channel count {channels} must be even")));
        }
        let hidden = channels / 2;
        Ok(reg.scope(name, |reg| Sppf {
            channels,
            pw_in: Conv::register(reg, "pw_in", ConvSpec::pointwise(channels, hidden)),
            pw_out: Conv::register(reg, "pw_out", ConvSpec::pointwise(4 * hidden, channels)),
            pool: PoolSpec::SPPF,
        }))
    }

    fn pyramid(&self, h: Tensor) -> Result<[Tensor; 4]> {
        let p1 = maxpool2d(&h, &self.pool)?;
        let p2 = maxpool2d(&p1, &self.pool)?;
        let p3 = maxpool2d(&p2, &self.pool)?;
        Ok([h, p1, p2, p3])
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let [a, b, c, d] = self.pyramid(self.pw_in.forward(p, x)?)?;
        self.pw_out.forward(p, &concat_channels(&[&a, &b, &c, &d])?)
    }

    pub fn forward_train(&self, p: &ParamStore, x: &Tensor) -> Result<(Tensor, SppfCache)> {
        let pyramid = self.pyramid(self.pw_in.forward(p, x)?)?;
        let concat = concat_channels(&pyramid.iter().collect::<Vec<_>>())?;
        let y = self.pw_out.forward(p, &concat)?;
        Ok((
            y,
            SppfCache {
                input: x.clone(),
                pyramid,
                concat,
            },
        ))
    }

    pub fn backward(&self, p: &ParamStore, cache: &SppfCache, dy: &Tensor, g: &mut Grads) -> Result<Tensor> {
        let dcat = self.pw_out.backward(p, &cache.concat, dy, g)?;
        let hidden = self.channels / 2;
        let mut parts = split_channels(&dcat, &[hidden; 4])?;
        // Walk the pooling chain backwards, folding each level into the one below.
        for level in (1..4).rev() {
            let routed = maxpool2d_grad(&cache.pyramid[level - 1], &self.pool, &parts[level])?;
            parts[level - 1].add_assign(&routed)?;
        }
        self.pw_in.backward(p, &cache.input, &parts[0], g)
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        input
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let pooled = 3 * (h * w * self.channels / 2) as u64;
        self.pw_in.macs(h, w) + self.pw_out.macs(h, w) + pooled
    }
}
