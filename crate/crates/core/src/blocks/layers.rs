use crate::error::Result;
use crate::params::{Grads, Init, ParamId, ParamKind, ParamStore, Registry};
use crate::tensor::{
    batchnorm2d_grad, batchnorm2d_pure, conv2d, conv2d_grad, BnCache, BnMode, BnState, ConvSpec, Shape, Tensor,
};

/// A convolution whose weight and optional bias live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    pub fn register(reg: &mut Registry, name: &str, spec: ConvSpec) -> Self {
        Self::register_with(reg, name, spec, true)
    }

    /// Weight and bias start at zero, e.g. for a residual output head.
    pub fn register_zeroed(reg: &mut Registry, name: &str, spec: ConvSpec) -> Self {
        Self::register_with(reg, name, spec, false)
    }

    fn register_with(reg: &mut Registry, name: &str, spec: ConvSpec, kaiming: bool) -> Self {
        spec.validate().expect("layer conv spec");
        let ws = spec.weight_shape();
        let init = if kaiming {
            Init::Kaiming {
                fan_in: ws.c * ws.h * ws.w,
            }
        } else {
            Init::Zeros
        };
        reg.scope(name, |reg| {
            let weight = reg.register("weight", ws.dims().to_vec(), ParamKind::Learnable, init);
            let bias = spec
                .has_bias
                .then(|| reg.register("bias", vec![spec.out_channels], ParamKind::Learnable, Init::Zeros));
            Conv { spec, weight, bias }
        })
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        conv2d(x, p.get(self.weight), self.bias.map(|b| p.values(b)), &self.spec)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&self, p: &ParamStore, x: &Tensor, dy: &Tensor, g: &mut Grads) -> Result<Tensor> {
        let cg = conv2d_grad(x, p.get(self.weight), &self.spec, dy)?;
        g.accumulate(self.weight, &cg.weight);
        if let (Some(b), Some(db)) = (self.bias, &cg.bias) {
            g.accumulate_vec(b, db);
        }
        Ok(cg.input)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.spec.output_shape(input)
    }

    /// Multiply-accumulates for one sample at `h × w` input.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.spec.output_hw(h, w).expect("mac count on valid size");
        (oh * ow * self.spec.out_channels * self.spec.in_per_group() * self.spec.kernel_h * self.spec.kernel_w) as u64
    }
}

/// Batch norm with learnable affine terms and running-statistics buffers in the store.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn register(reg: &mut Registry, name: &str, channels: usize) -> Self {
        reg.scope(name, |reg| BatchNorm {
            gamma: reg.register("gamma", vec![channels], ParamKind::Learnable, Init::Const(1.0)),
            beta: reg.register("beta", vec![channels], ParamKind::Learnable, Init::Zeros),
            running_mean: reg.register("running_mean", vec![channels], ParamKind::Buffer, Init::Zeros),
            running_var: reg.register("running_var", vec![channels], ParamKind::Buffer, Init::Const(1.0)),
        })
    }

    pub fn state(&self, p: &ParamStore) -> BnState {
        let mut st = BnState::new(p.values(self.gamma).len());
        st.gamma = p.values(self.gamma).to_vec();
        st.beta = p.values(self.beta).to_vec();
        st.running_mean = p.values(self.running_mean).to_vec();
        st.running_var = p.values(self.running_var).to_vec();
        st
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        Ok(batchnorm2d_pure(x, &self.state(p), BnMode::Eval)?.0)
    }

    /// Batch-statistics forward; folds the batch statistics into the stored running averages.
    pub fn forward_train(&self, p: &mut ParamStore, x: &Tensor) -> Result<(Tensor, BnCache)> {
        let mut st = self.state(p);
        let (y, cache) = batchnorm2d_pure(x, &st, BnMode::Train)?;
        st.absorb(&cache);
        p.get_mut(self.running_mean)
            .data_mut()
            .copy_from_slice(&st.running_mean);
        p.get_mut(self.running_var).data_mut().copy_from_slice(&st.running_var);
        Ok((y, cache))
    }

    pub fn backward(&self, p: &ParamStore, cache: &BnCache, dy: &Tensor, g: &mut Grads) -> Result<Tensor> {
        let bg = batchnorm2d_grad(&self.state(p), cache, dy)?;
        g.accumulate_vec(self.gamma, &bg.gamma);
        g.accumulate_vec(self.beta, &bg.beta);
        Ok(bg.input)
    }
}
