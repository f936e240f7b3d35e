//! Lightweight deblurring block and its Laplacian sharpness branch.

use super::layers::{BatchNorm, Conv};
use crate::error::{Error, Result};
use crate::params::{Grads, Init, ParamId, ParamKind, ParamStore, Registry};
use crate::tensor::{
    add, conv2d, conv2d_grad, gelu, gelu_grad, scale_channels, scale_channels_grad, BnCache, ConvSpec, Shape, Tensor,
};

/// 4-neighbour Laplacian stencil.
pub const LAPLACIAN: [f32; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];

pub const SN_GAIN_INIT: f32 = 0.1;

/// LD expansion ratio of the pointwise pair.
pub const EXPANSION: usize = 4;

/// Fixed depthwise Laplacian scaled by a learnable per-channel gain.
#[derive(Clone, Debug)]
pub struct SharpnessBranch {
    pub channels: usize,
    pub gain: ParamId,
}

impl SharpnessBranch {
    pub fn register(reg: &mut Registry, name: &str, channels: usize) -> Self {
        reg.scope(name, |reg| SharpnessBranch {
            channels,
            gain: reg.register("gain", vec![channels], ParamKind::Learnable, Init::Const(SN_GAIN_INIT)),
        })
    }

    fn spec(&self) -> ConvSpec {
        ConvSpec::depthwise(self.channels, 3).without_bias()
    }

    fn kernel(&self) -> Tensor {
        let data = LAPLACIAN.iter().copied().cycle().take(9 * self.channels).collect();
        Tensor::from_vec(self.spec().weight_shape(), data)
    }

    fn laplacian(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.kernel(), None, &self.spec())
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        scale_channels(&self.laplacian(x)?, p.values(self.gain))
    }

    pub fn backward(&self, p: &ParamStore, x: &Tensor, dy: &Tensor, g: &mut Grads) -> Result<Tensor> {
        let lap = self.laplacian(x)?;
        let (dlap, dgain) = scale_channels_grad(&lap, p.values(self.gain), dy)?;
        g.accumulate_vec(self.gain, &dgain);
        Ok(conv2d_grad(x, &self.kernel(), &self.spec(), &dlap)?.input)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let hw = (h * w * self.channels) as u64;
        // depthwise 3x3 stencil + gain
        9 * hw + hw
    }
}

/// `y = x + compress(expand(bn(gelu(dw(x))))) [+ sn(x)]`.
#[derive(Clone, Debug)]
pub struct LdBlock {
    pub dim: usize,
    pub dw: Conv,
    pub bn: BatchNorm,
    pub expand: Conv,
    pub compress: Conv,
    pub sn: Option<SharpnessBranch>,
}

#[derive(Clone, Debug)]
pub struct LdCache {
    input: Tensor,
    dw_out: Tensor,
    bn: BnCache,
    bn_out: Tensor,
    expand_out: Tensor,
}

impl LdBlock {
    pub fn register(reg: &mut Registry, name: &str, dim: usize, with_sn: bool) -> Self {
        reg.scope(name, |reg| LdBlock {
            dim,
            dw: Conv::register(reg, "dw", ConvSpec::depthwise(dim, 3)),
            bn: BatchNorm::register(reg, "bn", dim),
            expand: Conv::register(reg, "expand", ConvSpec::pointwise(dim, EXPANSION * dim)),
            compress: Conv::register(reg, "compress", ConvSpec::pointwise(EXPANSION * dim, dim)),
            sn: with_sn.then(|| SharpnessBranch::register(reg, "sn", dim)),
        })
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().c != self.dim {
            return Err(Error::shape("ld_forward", "channels", x.shape().c, self.dim));
        }
        Ok(())
    }

    fn finish(&self, p: &ParamStore, x: &Tensor, trunk: &Tensor) -> Result<Tensor> {
        let mut y = add(x, trunk)?;
        if let Some(sn) = &self.sn {
            y.add_assign(&sn.forward(p, x)?)?;
        }
        Ok(y)
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let t = gelu(&self.dw.forward(p, x)?);
        let t = self.bn.forward(p, &t)?;
        let t = self.compress.forward(p, &self.expand.forward(p, &t)?)?;
        self.finish(p, x, &t)
    }

    pub fn forward_train(&self, p: &mut ParamStore, x: &Tensor) -> Result<(Tensor, LdCache)> {
        self.check(x)?;
        let dw_out = self.dw.forward(p, x)?;
        let (bn_out, bn) = self.bn.forward_train(p, &gelu(&dw_out))?;
        let expand_out = self.expand.forward(p, &bn_out)?;
        let trunk = self.compress.forward(p, &expand_out)?;
        let y = self.finish(p, x, &trunk)?;
        Ok((
            y,
            LdCache {
                input: x.clone(),
                dw_out,
                bn,
                bn_out,
                expand_out,
            },
        ))
    }

    pub fn backward(&self, p: &ParamStore, cache: &LdCache, dy: &Tensor, g: &mut Grads) -> Result<Tensor> {
        let d = self.compress.backward(p, &cache.expand_out, dy, g)?;
        let d = self.expand.backward(p, &cache.bn_out, &d, g)?;
        let d = self.bn.backward(p, &cache.bn, &d, g)?;
        let d = gelu_grad(&cache.dw_out, &d)?;
        let mut dx = self.dw.backward(p, &cache.input, &d, g)?;
        dx.add_assign(dy)?;
        if let Some(sn) = &self.sn {
            dx.add_assign(&sn.backward(p, &cache.input, dy, g)?)?;
        }
        Ok(dx)
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        input
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let elems = (h * w * self.dim) as u64;
        let convs = self.dw.macs(h, w) + self.expand.macs(h, w) + self.compress.macs(h, w);
        // gelu, bn, residual add
        let elementwise = 3 * elems;
        let sn = self.sn.as_ref().map_or(0, |sn| sn.macs(h, w) + elems);
        convs + elementwise + sn
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(dim: usize, sn: bool, seed: u64) -> (LdBlock, ParamStore) {
        let mut reg = Registry::new();
        let block = LdBlock::register(&mut reg, "ld", dim, sn);
        (block, ParamStore::initialize(reg.into_specs(), seed))
    }

    fn zero_learnables(p: &mut ParamStore, keep: &[&str]) {
        let ids: Vec<_> = p.learnable_ids().collect();
        for id in ids {
            let name = p.spec(id).name.clone();
            if !keep.iter().any(|k| name.ends_with(k)) {
                p.get_mut(id).fill(0.0);
            }
        }
    }

    #[test]
    fn zeroed_trunk_without_sn_is_identity() {
        let (block, mut p) = build(4, false, 1);
        zero_learnables(&mut p, &["bn.gamma"]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = Tensor::randn(Shape::new(1, 4, 6, 5), 3.0, &mut rng);
            assert_eq!(block.forward(&p, &x).unwrap(), x);
            let (y, _) = block.forward_train(&mut p, &x).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn shape_is_preserved() {
        let (block, p) = build(16, true, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn(Shape::new(2, 16, 32, 32), 1.0, &mut rng);
        assert_eq!(block.forward(&p, &x).unwrap().shape(), x.shape());
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let (block, p) = build(4, true, 3);
        let x = Tensor::zeros(Shape::new(1, 3, 4, 4));
        assert!(block.forward(&p, &x).is_err());
    }

    #[test]
    fn sn_impulse_response_is_the_stencil() {
        let mut reg = Registry::new();
        let sn = SharpnessBranch::register(&mut reg, "sn", 1);
        let mut p = ParamStore::initialize(reg.into_specs(), 0);
        p.get_mut(sn.gain).fill(1.0);
        let mut x = Tensor::zeros(Shape::new(1, 1, 5, 5));
        x.set(0, 0, 2, 2, 1.0);
        let y = sn.forward(&p, &x).unwrap();
        assert_eq!(y.at(0, 0, 2, 2), -4.0);
        for (r, c) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(y.at(0, 0, r, c), 1.0);
        }
        assert_eq!(y.sum(), 0.0);
    }

    #[test]
    fn sn_annihilates_interior_of_constant_and_affine_images() {
        let mut reg = Registry::new();
        let sn = SharpnessBranch::register(&mut reg, "sn", 2);
        let p = ParamStore::initialize(reg.into_specs(), 0);
        let mut x = Tensor::zeros(Shape::new(1, 2, 7, 9));
        for i in 0..7 {
            for j in 0..9 {
                x.set(0, 0, i, j, 3.25);
                x.set(0, 1, i, j, i as f32 + 2.0 * j as f32);
            }
        }
        let y = sn.forward(&p, &x).unwrap();
        for c in 0..2 {
            for i in 1..6 {
                for j in 1..8 {
                    // direct stencil: up + down + left + right - 4 * centre
                    let direct =
                        x.at(0, c, i - 1, j) + x.at(0, c, i + 1, j) + x.at(0, c, i, j - 1) + x.at(0, c, i, j + 1)
                            - 4.0 * x.at(0, c, i, j);
                    assert!(direct.abs() < 1e-5);
                    assert!(y.at(0, c, i, j).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        assert_eq!(LAPLACIAN.iter().sum::<f32>(), 0.0);
    }
}
