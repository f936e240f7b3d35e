//! Multi-level aggregation of encoder features with a pooled sigmoid gate.

use super::layers::Conv;
use crate::error::{Error, Result};
use crate::params::{Grads, ParamStore, Registry};
use crate::tensor::{
    bilinear_resize, bilinear_resize_grad, concat_channels, global_avg_pool, global_avg_pool_grad, mul_broadcast,
    mul_broadcast_grad, sigmoid, sigmoid_grad, split_channels, ConvSpec, Shape, Tensor,
};

#[derive(Clone, Debug)]
pub struct Mlia {
    pub stage_channels: Vec<usize>,
    pub proj_dim: usize,
    pub fused_dim: usize,
    /// Index of the stage whose spatial size every stage is resized to.
    pub shared_stage: usize,
    pub projections: Vec<Conv>,
    pub reduce: Conv,
    pub attn: Conv,
}

#[derive(Clone, Debug)]
pub struct MliaCache {
    input_shapes: Vec<Shape>,
    resized: Vec<Tensor>,
    concat: Tensor,
    reduced: Tensor,
    pooled: Tensor,
    gate: Tensor,
}

impl Mlia {
    pub fn register(
        reg: &mut Registry,
        name: &str,
        stage_channels: &[usize],
        proj_dim: usize,
        fused_dim: usize,
        shared_stage: usize,
    ) -> Result<Self> {
        if stage_channels.is_empty() || shared_stage >= stage_channels.len() {
            return Err(Error::invalid(
                "mlia",
                format!(
                    "shared stage {shared_stage} out of range for {} stages",
                    stage_channels.len()
                ),
            ));
        }
        Ok(reg.scope(name, |reg| {
            let projections = stage_channels
                .iter()
                .enumerate()
                .map(|(i, &c)| Conv::register(reg, &format!("proj{i}"), ConvSpec::pointwise(c, proj_dim)))
                .collect();
            Mlia {
                stage_channels: stage_channels.to_vec(),
                proj_dim,
                fused_dim,
                shared_stage,
                projections,
                reduce: Conv::register(
                    reg,
                    "reduce",
                    ConvSpec::pointwise(proj_dim * stage_channels.len(), fused_dim),
                ),
                attn: Conv::register(reg, "attn", ConvSpec::pointwise(fused_dim, fused_dim)),
            }
        }))
    }

    fn check(&self, stages: &[&Tensor]) -> Result<(usize, usize)> {
        if stages.len() != self.stage_channels.len() {
            return Err(Error::shape(
                "mlia_forward",
                "stage count",
                stages.len(),
                self.stage_channels.len(),
            ));
        }
        let n = stages[0].shape().n;
        for (t, &c) in stages.iter().zip(&self.stage_channels) {
            if t.shape().c != c {
                return Err(Error::shape("mlia_forward", "stage channels", t.shape().c, c));
            }
            if t.shape().n != n {
                return Err(Error::shape("mlia_forward", "batch", t.shape().n, n));
            }
        }
        let s = stages[self.shared_stage].shape();
        Ok((s.h, s.w))
    }

    fn project(&self, p: &ParamStore, stages: &[&Tensor]) -> Result<(Vec<Tensor>, Tensor)> {
        let (h, w) = self.check(stages)?;
        let resized: Vec<Tensor> = stages.iter().map(|t| bilinear_resize(t, h, w)).collect::<Result<_>>()?;
        let projected: Vec<Tensor> = resized
            .iter()
            .zip(&self.projections)
            .map(|(t, conv)| conv.forward(p, t))
            .collect::<Result<_>>()?;
        let concat = concat_channels(&projected.iter().collect::<Vec<_>>())?;
        Ok((resized, concat))
    }

    pub fn forward(&self, p: &ParamStore, stages: &[&Tensor]) -> Result<Tensor> {
        let (_, concat) = self.project(p, stages)?;
        let reduced = self.reduce.forward(p, &concat)?;
        let gate = sigmoid(&self.attn.forward(p, &global_avg_pool(&reduced))?);
        mul_broadcast(&reduced, &gate)
    }

    pub fn forward_train(&self, p: &ParamStore, stages: &[&Tensor]) -> Result<(Tensor, MliaCache)> {
        let (resized, concat) = self.project(p, stages)?;
        let reduced = self.reduce.forward(p, &concat)?;
        let pooled = global_avg_pool(&reduced);
        let gate = sigmoid(&self.attn.forward(p, &pooled)?);
        let y = mul_broadcast(&reduced, &gate)?;
        Ok((
            y,
            MliaCache {
                input_shapes: stages.iter().map(|t| t.shape()).collect(),
                resized,
                concat,
                reduced,
                pooled,
                gate,
            },
        ))
    }

    /// Returns one input gradient per stage.
    pub fn backward(&self, p: &ParamStore, cache: &MliaCache, dy: &Tensor, g: &mut Grads) -> Result<Vec<Tensor>> {
        let (mut dreduced, dgate) = mul_broadcast_grad(&cache.reduced, &cache.gate, dy)?;
        let dattn = sigmoid_grad(&cache.gate, &dgate)?;
        let dpooled = self.attn.backward(p, &cache.pooled, &dattn, g)?;
        dreduced.add_assign(&global_avg_pool_grad(cache.reduced.shape(), &dpooled)?)?;
        let dcat = self.reduce.backward(p, &cache.concat, &dreduced, g)?;
        let parts = split_channels(&dcat, &vec![self.proj_dim; self.projections.len()])?;
        parts
            .iter()
            .zip(&self.projections)
            .zip(cache.resized.iter().zip(&cache.input_shapes))
            .map(|((d, conv), (resized, &shape))| {
                let dres = conv.backward(p, resized, d, g)?;
                bilinear_resize_grad(shape, &dres)
            })
            .collect()
    }

    /// Output shape for stage inputs of the given shapes.
    pub fn output_shape(&self, stages: &[Shape]) -> Shape {
        let s = stages[self.shared_stage];
        Shape::new(s.n, self.fused_dim, s.h, s.w)
    }

    /// `stage_hw` holds each stage's spatial size.
    pub fn macs(&self, stage_hw: &[(usize, usize)]) -> u64 {
        let (h, w) = stage_hw[self.shared_stage];
        let shared = (h * w) as u64;
        let mut total = 0;
        for ((&(sh, sw), &c), conv) in stage_hw.iter().zip(&self.stage_channels).zip(&self.projections) {
            if (sh, sw) != (h, w) {
                total += shared * c as u64;
            }
            total += conv.macs(h, w);
        }
        let fused = self.fused_dim as u64;
        total += self.reduce.macs(h, w);
        // pooling reads every reduced element; sigmoid per channel; gate multiply per element
        total += shared * fused + self.attn.macs(1, 1) + fused + shared * fused;
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build() -> (Mlia, ParamStore) {
        let mut reg = Registry::new();
        let m = Mlia::register(&mut reg, "mlia", &[4, 8, 16, 32], 8, 16, 2).unwrap();
        (m, ParamStore::initialize(reg.into_specs(), 9))
    }

    fn stages(rng: &mut ChaCha8Rng, scale: f32) -> Vec<Tensor> {
        [(4, 64), (8, 32), (16, 16), (32, 8)]
            .iter()
            .map(|&(c, s)| Tensor::randn(Shape::new(2, c, s, s), 1.0, rng).scale(scale))
            .collect()
    }

    #[test]
    fn output_at_shared_resolution() {
        let (m, p) = build();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = stages(&mut rng, 1.0);
        let refs: Vec<_> = xs.iter().collect();
        let y = m.forward(&p, &refs).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 16, 16, 16));
    }

    #[test]
    fn zero_features_give_zero_output() {
        let (m, p) = build();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = stages(&mut rng, 0.0);
        let refs: Vec<_> = xs.iter().collect();
        let y = m.forward(&p, &refs).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_stage_count_is_rejected() {
        let (m, p) = build();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = stages(&mut rng, 1.0);
        let refs: Vec<_> = xs.iter().take(3).collect();
        let err = m.forward(&p, &refs).unwrap_err();
        assert!(err.to_string().contains("stage count"), "{err}");
    }
}
