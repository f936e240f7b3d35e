//! Cross-source decoder fusion.

use super::layers::Conv;
use crate::error::{Error, Result};
use crate::params::{Grads, ParamStore, Registry};
use crate::tensor::{
    bilinear_resize, bilinear_resize_grad, concat_channels, gelu, gelu_grad, split_channels, ConvSpec, Shape, Tensor,
};

/// Groups of the 3×3 convolution over `up ⊕ skip`.
pub const XFUSE_GROUPS: usize = 4;

/// Channels of the blurred-image guidance.
pub const IMAGE_CHANNELS: usize = 3;

/// `y = pw_out(pw_mix(gelu(group_conv(up ⊕ skip))) ⊕ resize(blur))`
#[derive(Clone, Debug)]
pub struct XFuse {
    pub dim: usize,
    pub group_conv: Conv,
    pub pw_mix: Conv,
    pub pw_out: Conv,
}

#[derive(Clone, Debug)]
pub struct XFuseCache {
    fused_in: Tensor,
    group_out: Tensor,
    act: Tensor,
    out_in: Tensor,
    blur_shape: Shape,
}

#[derive(Clone, Debug)]
pub struct XFuseGrads {
    pub up: Tensor,
    pub skip: Tensor,
    pub blur: Tensor,
}

impl XFuse {
    pub fn register(reg: &mut Registry, name: &str, dim: usize) -> Result<Self> {
        if !dim.is_multiple_of(XFUSE_GROUPS) {
            return Err(Error::invalid(
                "xfuse",
                format!("dim {dim} must be divisible by {XFUSE_GROUPS} groups"),
            ));
        }
        Ok(reg.scope(name, |reg| XFuse {
            dim,
            group_conv: Conv::register(
                reg,
                "group_conv",
                ConvSpec::new(2 * dim, dim, 3).with_groups(XFUSE_GROUPS),
            ),
            pw_mix: Conv::register(reg, "pw_mix", ConvSpec::pointwise(dim, dim)),
            pw_out: Conv::register(reg, "pw_out", ConvSpec::pointwise(dim + IMAGE_CHANNELS, dim)),
        }))
    }

    fn check(&self, up: &Tensor, skip: &Tensor, blur: &Tensor) -> Result<()> {
        let (u, s, b) = (up.shape(), skip.shape(), blur.shape());
        if u.c != self.dim {
            return Err(Error::shape("xfuse_forward", "up channels", u.c, self.dim));
        }
        if s.c != self.dim {
            return Err(Error::shape("xfuse_forward", "skip channels", s.c, self.dim));
        }
        if s.h != u.h {
            return Err(Error::shape("xfuse_forward", "skip height", s.h, u.h));
        }
        if s.w != u.w {
            return Err(Error::shape("xfuse_forward", "skip width", s.w, u.w));
        }
        if b.c != IMAGE_CHANNELS {
            return Err(Error::shape("xfuse_forward", "blur channels", b.c, IMAGE_CHANNELS));
        }
        if b.n != u.n || s.n != u.n {
            return Err(Error::shape("xfuse_forward", "batch", b.n.max(s.n), u.n));
        }
        Ok(())
    }

    pub fn forward(&self, p: &ParamStore, up: &Tensor, skip: &Tensor, blur: &Tensor) -> Result<Tensor> {
        self.check(up, skip, blur)?;
        let t = self.group_conv.forward(p, &concat_channels(&[up, skip])?)?;
        let f = self.pw_mix.forward(p, &gelu(&t))?;
        let guide = bilinear_resize(blur, f.shape().h, f.shape().w)?;
        self.pw_out.forward(p, &concat_channels(&[&f, &guide])?)
    }

    pub fn forward_train(
        &self,
        p: &ParamStore,
        up: &Tensor,
        skip: &Tensor,
        blur: &Tensor,
    ) -> Result<(Tensor, XFuseCache)> {
        self.check(up, skip, blur)?;
        let fused_in = concat_channels(&[up, skip])?;
        let group_out = self.group_conv.forward(p, &fused_in)?;
        let act = gelu(&group_out);
        let f = self.pw_mix.forward(p, &act)?;
        let guide = bilinear_resize(blur, f.shape().h, f.shape().w)?;
        let out_in = concat_channels(&[&f, &guide])?;
        let y = self.pw_out.forward(p, &out_in)?;
        Ok((
            y,
            XFuseCache {
                fused_in,
                group_out,
                act,
                out_in,
                blur_shape: blur.shape(),
            },
        ))
    }

    pub fn backward(&self, p: &ParamStore, cache: &XFuseCache, dy: &Tensor, g: &mut Grads) -> Result<XFuseGrads> {
        let d = self.pw_out.backward(p, &cache.out_in, dy, g)?;
        let [df, dguide]: [Tensor; 2] = split_channels(&d, &[self.dim, IMAGE_CHANNELS])?
            .try_into()
            .expect("two parts");
        let dblur = bilinear_resize_grad(cache.blur_shape, &dguide)?;
        let d = self.pw_mix.backward(p, &cache.act, &df, g)?;
        let d = gelu_grad(&cache.group_out, &d)?;
        let d = self.group_conv.backward(p, &cache.fused_in, &d, g)?;
        let [dup, dskip]: [Tensor; 2] = split_channels(&d, &[self.dim, self.dim])?
            .try_into()
            .expect("two parts");
        Ok(XFuseGrads {
            up: dup,
            skip: dskip,
            blur: dblur,
        })
    }

    /// `blur_hw` is the full image size; `h × w` the scale this block runs at.
    pub fn macs(&self, h: usize, w: usize, blur_hw: (usize, usize)) -> u64 {
        let elems = (h * w * self.dim) as u64;
        let resize = if blur_hw == (h, w) {
            0
        } else {
            (h * w * IMAGE_CHANNELS) as u64
        };
        self.group_conv.macs(h, w) + elems + self.pw_mix.macs(h, w) + resize + self.pw_out.macs(h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(dim: usize) -> (XFuse, ParamStore) {
        let mut reg = Registry::new();
        let x = XFuse::register(&mut reg, "xfuse", dim).unwrap();
        (x, ParamStore::initialize(reg.into_specs(), 13))
    }

    #[test]
    fn output_keeps_scale_and_dim() {
        let (x, p) = build(32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let up = Tensor::randn(Shape::new(1, 32, 64, 64), 1.0, &mut rng);
        let skip = Tensor::randn(Shape::new(1, 32, 64, 64), 1.0, &mut rng);
        let blur = Tensor::rand_uniform(Shape::new(1, 3, 256, 256), 0.0, 1.0, &mut rng);
        let y = x.forward(&p, &up, &skip, &blur).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 32, 64, 64));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let (x, mut p) = build(8);
        let ids: Vec<_> = p.learnable_ids().collect();
        for id in ids {
            p.get_mut(id).fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let up = Tensor::randn(Shape::new(2, 8, 8, 8), 1.0, &mut rng);
        let skip = Tensor::randn(Shape::new(2, 8, 8, 8), 1.0, &mut rng);
        let blur = Tensor::rand_uniform(Shape::new(2, 3, 32, 32), 0.0, 1.0, &mut rng);
        let y = x.forward(&p, &up, &skip, &blur).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spatial_mismatch_is_rejected() {
        let (x, p) = build(4);
        let up = Tensor::zeros(Shape::new(1, 4, 8, 8));
        let skip = Tensor::zeros(Shape::new(1, 4, 4, 8));
        let blur = Tensor::zeros(Shape::new(1, 3, 16, 16));
        let err = x.forward(&p, &up, &skip, &blur).unwrap_err();
        assert!(err.to_string().contains("skip height"), "{err}");
    }

    #[test]
    fn dim_must_split_into_groups() {
        let mut reg = Registry::new();
        assert!(XFuse::register(&mut reg, "xfuse", 6).is_err());
    }
}
