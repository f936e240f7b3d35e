use rayon::prelude::*;

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution with zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square kernel, stride 1, "same" padding for odd kernels, one group, with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: kernel / 2,
            groups: 1,
            has_bias: true,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1)
    }

    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        Self::new(channels, channels, kernel).with_groups(channels)
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_per_group(), self.kernel_h, self.kernel_w)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("stride", self.stride),
            ("groups", self.groups),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid("conv2d", format!("{name} must be positive")));
            }
        }
        if !self.in_channels.is_multiple_of(self.groups) {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "groups {} does not divide in_channels {}",
                    self.groups, self.in_channels
                ),
            ));
        }
        if !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "groups {} does not divide out_channels {}",
                    self.groups, self.out_channels
                ),
            ));
        }
        Ok(())
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "padded input {ph}x{pw} smaller than kernel {}x{}",
                    self.kernel_h, self.kernel_w
                ),
            ));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let (oh, ow) = self.output_hw(input.h, input.w)?;
        Ok(Shape::new(input.n, self.out_channels, oh, ow))
    }

    /// Output indices `o` in `0..out_len` whose tap `o * stride + k - padding` lands in `0..in_len`.
    fn valid_range(&self, k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.padding as isize;
        // o*s + off >= 0  and  o*s + off <= in_len - 1
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi_incl = (in_len as isize - 1 - off).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, out_len as isize);
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }

    fn check_operands(&self, input: Shape, weight: Shape, bias: Option<&[f32]>) -> Result<Shape> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::shape("conv2d", "input channels", input.c, self.in_channels));
        }
        let ws = self.weight_shape();
        let pairs = [
            ("weight out_channels", weight.n, ws.n),
            ("weight in_channels/groups", weight.c, ws.c),
            ("weight kernel_h", weight.h, ws.h),
            ("weight kernel_w", weight.w, ws.w),
        ];
        for (dim, got, expected) in pairs {
            if got != expected {
                return Err(Error::shape("conv2d", dim, got, expected));
            }
        }
        match (self.has_bias, bias) {
            (true, Some(b)) if b.len() != self.out_channels => {
                return Err(Error::shape("conv2d", "bias length", b.len(), self.out_channels))
            }
            (true, None) => return Err(Error::invalid("conv2d", "spec requires a bias")),
            (false, Some(_)) => return Err(Error::invalid("conv2d", "spec has no bias")),
            _ => {}
        }
        self.output_shape(input)
    }
}

/// Layout of one `(batch item, group)` slice of a convolution as a matrix product:
/// `out[m × p] = weight[m × k] · cols[k × p]`.
struct Lowering {
    in_pg: usize,
    out_pg: usize,
    /// Rows of the column matrix: `in_pg · kh · kw`.
    k: usize,
    /// Output positions per plane.
    p: usize,
    /// The column matrix is the input itself (1×1, stride 1, no padding).
    direct: bool,
    rows: Vec<(usize, usize)>,
    cols: Vec<(usize, usize)>,
}

impl Lowering {
    fn new(spec: &ConvSpec, is: Shape, os: Shape) -> Self {
        Lowering {
            in_pg: spec.in_per_group(),
            out_pg: spec.out_per_group(),
            k: spec.in_per_group() * spec.kernel_h * spec.kernel_w,
            p: os.plane(),
            direct: spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 && spec.padding == 0,
            rows: (0..spec.kernel_h).map(|k| spec.valid_range(k, is.h, os.h)).collect(),
            cols: (0..spec.kernel_w).map(|k| spec.valid_range(k, is.w, os.w)).collect(),
        }
    }

    /// Fill `out` (`k × p`) from the `in_pg` input planes of one group.
    fn im2col(&self, spec: &ConvSpec, is: Shape, os: Shape, planes: &[f32], out: &mut [f32]) {
        let (kh, kw, s, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
        out.fill(0.0);
        for icg in 0..self.in_pg {
            let plane = &planes[icg * is.plane()..][..is.plane()];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = self.rows[ky];
                for kx in 0..kw {
                    let (ox_lo, ox_hi) = self.cols[kx];
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let row = &mut out[((icg * kh + ky) * kw + kx) * self.p..][..self.p];
                    for oy in oy_lo..oy_hi {
                        let src = &plane[(oy * s + ky - pad) * is.w..][..is.w];
                        let dst = &mut row[oy * os.w..][..os.w];
                        if s == 1 {
                            let ix0 = ox_lo + kx - pad;
                            dst[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst[ox] = src[ox * s + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a `k × p` column gradient back onto the group's input planes.
    fn col2im(&self, spec: &ConvSpec, is: Shape, os: Shape, cols: &[f32], planes: &mut [f32]) {
        let (kh, kw, s, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
        for icg in 0..self.in_pg {
            let plane = &mut planes[icg * is.plane()..][..is.plane()];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = self.rows[ky];
                for kx in 0..kw {
                    let (ox_lo, ox_hi) = self.cols[kx];
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let row = &cols[((icg * kh + ky) * kw + kx) * self.p..][..self.p];
                    for oy in oy_lo..oy_hi {
                        let src = &row[oy * os.w..][..os.w];
                        let dst = &mut plane[(oy * s + ky - pad) * is.w..][..is.w];
                        if s == 1 {
                            let ix0 = ox_lo + kx - pad;
                            for (d, &v) in dst[ix0..ix0 + (ox_hi - ox_lo)].iter_mut().zip(&src[ox_lo..ox_hi]) {
                                *d += v;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst[ox * s + kx - pad] += src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output columns handled per tile.
const TILE: usize = 128;
/// Products summed in f32 before folding into the f64 accumulators.
const FLUSH: usize = 16;

/// `c[r][..] = bias[r] + Σ_k a[r][k] · b[k][..]` for `R` rows of `a`, all columns of `b`.
fn gemm_rows<const R: usize>(a: [&[f32]; R], b: &[f32], p: usize, bias: [f64; R], c: [&mut [f32]; R]) {
    let k = a[0].len();
    let mut p0 = 0;
    while p0 < p {
        let tw = TILE.min(p - p0);
        let mut wide = [[0.0f64; TILE]; R];
        for (r, row) in wide.iter_mut().enumerate() {
            row[..tw].fill(bias[r]);
        }
        let mut acc = [[0.0f32; TILE]; R];
        for kk in 0..k {
            let brow = &b[kk * p + p0..][..tw];
            for r in 0..R {
                let w = a[r][kk];
                if w != 0.0 {
                    for (x, &v) in acc[r][..tw].iter_mut().zip(brow) {
                        *x += w * v;
                    }
                }
            }
            if (kk + 1) % FLUSH == 0 || kk + 1 == k {
                for r in 0..R {
                    for (d, x) in wide[r][..tw].iter_mut().zip(acc[r][..tw].iter_mut()) {
                        *d += f64::from(*x);
                        *x = 0.0;
                    }
                }
            }
        }
        for r in 0..R {
            for (o, &d) in c[r][p0..p0 + tw].iter_mut().zip(&wide[r][..tw]) {
                *o = d as f32;
            }
        }
        p0 += tw;
    }
}

/// `c (m × p) = a (m × k) · b (k × p) + bias`, rows blocked by four.
fn gemm(a: &[f32], m: usize, b: &[f32], p: usize, bias: Option<&[f32]>, c: &mut [f32]) {
    let k = a.len() / m;
    let bias_of = |r: usize| bias.map_or(0.0, |bv| f64::from(bv[r]));
    let mut rows = c.chunks_mut(p);
    let mut r = 0;
    while r + 4 <= m {
        let cs = [(); 4].map(|_| rows.next().expect("row"));
        let arows = [0, 1, 2, 3].map(|i| &a[(r + i) * k..][..k]);
        gemm_rows::<4>(arows, b, p, [0, 1, 2, 3].map(|i| bias_of(r + i)), cs);
        r += 4;
    }
    while r < m {
        let cs = [rows.next().expect("row")];
        gemm_rows::<1>([&a[r * k..][..k]], b, p, [bias_of(r)], cs);
        r += 1;
    }
}

/// Lane-parallel dot products of `R` rows of `a` with one row `b`, added into `out`.
fn dot_rows<const R: usize>(a: [&[f32]; R], b: &[f32], out: &mut [f64; R]) {
    const LANES: usize = 8;
    let n = b.len();
    let mut start = 0;
    while start < n {
        let len = (FLUSH * LANES).min(n - start);
        let mut lanes = [[0.0f32; LANES]; R];
        let bb = &b[start..start + len];
        let full = len / LANES * LANES;
        for (i, bc) in bb[..full].chunks_exact(LANES).enumerate() {
            for r in 0..R {
                let ac = &a[r][start + i * LANES..][..LANES];
                for l in 0..LANES {
                    lanes[r][l] += ac[l] * bc[l];
                }
            }
        }
        for r in 0..R {
            let mut s: f64 = lanes[r].iter().map(|&v| f64::from(v)).sum();
            for j in full..len {
                s += f64::from(a[r][start + j]) * f64::from(bb[j]);
            }
            out[r] += s;
        }
        start += len;
    }
}

/// Zero-padded grouped 2-D cross-correlation (the usual deep-learning "convolution").
///
/// Each `(batch item, group)` slice is lowered to a matrix product. Products are
/// summed in short f32 runs folded into f64, in an order fixed by the shapes alone.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&[f32]>, spec: &ConvSpec) -> Result<Tensor> {
    let is = input.shape();
    let os = spec.check_operands(is, weight.shape(), bias)?;
    let lw = Lowering::new(spec, is, os);
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0f32; os.numel()];
    out.par_chunks_mut(lw.out_pg * lw.p)
        .enumerate()
        .for_each_init(Vec::new, |cols, (idx, dst)| {
            let n = idx / spec.groups;
            let g = idx % spec.groups;
            let planes = &x[(n * is.c + g * lw.in_pg) * is.plane()..][..lw.in_pg * is.plane()];
            let b = if lw.direct {
                planes
            } else {
                cols.resize(lw.k * lw.p, 0.0);
                lw.im2col(spec, is, os, planes, cols);
                &cols[..]
            };
            let a = &wt[g * lw.out_pg * lw.k..][..lw.out_pg * lw.k];
            gemm(
                a,
                lw.out_pg,
                b,
                lw.p,
                bias.map(|bv| &bv[g * lw.out_pg..][..lw.out_pg]),
                dst,
            );
        });
    Ok(Tensor::from_vec(os, out))
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
}

/// Reverse-mode gradients of [`conv2d`] given the gradient of its output.
pub fn conv2d_grad(input: &Tensor, weight: &Tensor, spec: &ConvSpec, upstream: &Tensor) -> Result<ConvGrads> {
    let is = input.shape();
    let bias_probe = spec.has_bias.then(|| vec![0.0; spec.out_channels]);
    let os = spec.check_operands(is, weight.shape(), bias_probe.as_deref())?;
    super::ensure_same_shape("conv2d_grad upstream", upstream.shape(), os)?;
    let lw = Lowering::new(spec, is, os);
    let x = input.data();
    let wt = weight.data();
    let dy = upstream.data();

    // d input = col2im(weightᵀ · dy), one task per (batch item, group)
    let wt_t: Vec<Vec<f32>> = (0..spec.groups)
        .map(|g| {
            let a = &wt[g * lw.out_pg * lw.k..][..lw.out_pg * lw.k];
            let mut t = vec![0.0f32; lw.k * lw.out_pg];
            for m in 0..lw.out_pg {
                for kk in 0..lw.k {
                    t[kk * lw.out_pg + m] = a[m * lw.k + kk];
                }
            }
            t
        })
        .collect();
    let mut gin = vec![0.0f32; is.numel()];
    gin.par_chunks_mut(lw.in_pg * is.plane())
        .enumerate()
        .for_each_init(Vec::new, |dcols, (idx, dst)| {
            let n = idx / spec.groups;
            let g = idx % spec.groups;
            let dyg = &dy[(n * os.c + g * lw.out_pg) * lw.p..][..lw.out_pg * lw.p];
            if lw.direct {
                gemm(&wt_t[g], lw.k, dyg, lw.p, None, dst);
            } else {
                dcols.resize(lw.k * lw.p, 0.0);
                gemm(&wt_t[g], lw.k, dyg, lw.p, None, dcols);
                lw.col2im(spec, is, os, dcols, dst);
            }
        });

    // d weight = Σ_n dy · colsᵀ, one task per group
    let ws = spec.weight_shape();
    let mut gw = vec![0.0f32; ws.numel()];
    gw.par_chunks_mut(lw.out_pg * lw.k).enumerate().for_each(|(g, dst)| {
        let mut acc = vec![0.0f64; lw.out_pg * lw.k];
        let mut cols = Vec::new();
        for n in 0..is.n {
            let planes = &x[(n * is.c + g * lw.in_pg) * is.plane()..][..lw.in_pg * is.plane()];
            let b: &[f32] = if lw.direct {
                planes
            } else {
                cols.resize(lw.k * lw.p, 0.0);
                lw.im2col(spec, is, os, planes, &mut cols);
                &cols
            };
            let dyg = &dy[(n * os.c + g * lw.out_pg) * lw.p..][..lw.out_pg * lw.p];
            for kk in 0..lw.k {
                let brow = &b[kk * lw.p..][..lw.p];
                let mut m = 0;
                while m + 4 <= lw.out_pg {
                    let rows = [0, 1, 2, 3].map(|i| &dyg[(m + i) * lw.p..][..lw.p]);
                    let mut out = [0.0f64; 4];
                    dot_rows::<4>(rows, brow, &mut out);
                    for (i, v) in out.into_iter().enumerate() {
                        acc[(m + i) * lw.k + kk] += v;
                    }
                    m += 4;
                }
                while m < lw.out_pg {
                    let mut out = [0.0f64; 1];
                    dot_rows::<1>([&dyg[m * lw.p..][..lw.p]], brow, &mut out);
                    acc[m * lw.k + kk] += out[0];
                    m += 1;
                }
            }
        }
        for (d, a) in dst.iter_mut().zip(acc) {
            *d = a as f32;
        }
    });

    let gb = spec.has_bias.then(|| {
        (0..os.c)
            .map(|oc| {
                let mut acc = 0.0f64;
                for n in 0..os.n {
                    acc += upstream.plane(n, oc).iter().map(|&v| f64::from(v)).sum::<f64>();
                }
                acc as f32
            })
            .collect()
    });

    Ok(ConvGrads {
        input: Tensor::from_vec(is, gin),
        weight: Tensor::from_vec(ws, gw),
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Six-nested-loop reference: every output, every tap, bounds-checked.
    fn naive(input: &Tensor, weight: &Tensor, bias: Option<&[f32]>, spec: &ConvSpec) -> Tensor {
        let is = input.shape();
        let os = spec.output_shape(is).unwrap();
        let mut out = Tensor::zeros(os);
        let in_pg = spec.in_per_group();
        let out_pg = spec.out_per_group();
        for n in 0..os.n {
            for oc in 0..os.c {
                let g = oc / out_pg;
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        let mut acc = bias.map_or(0.0, |b| b[oc] as f64);
                        for icg in 0..in_pg {
                            for ky in 0..spec.kernel_h {
                                for kx in 0..spec.kernel_w {
                                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= is.h as isize || ix >= is.w as isize {
                                        continue;
                                    }
                                    acc += input.at(n, g * in_pg + icg, iy as usize, ix as usize) as f64
                                        * weight.at(oc, icg, ky, kx) as f64;
                                }
                            }
                        }
                        out.set(n, oc, oy, ox, acc as f32);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor::new(1, 1, 3, 3, (1..=9).map(|v| v as f32).collect());
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = Tensor::new(1, 1, 3, 3, k);
        let spec = ConvSpec::new(1, 1, 3);
        let y = conv2d(&x, &w, Some(&[0.0]), &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn pointwise_is_a_dot_product() {
        let x = Tensor::new(1, 2, 1, 1, vec![2.0, 3.0]);
        let w = Tensor::new(1, 2, 1, 1, vec![1.0, 1.0]);
        let y = conv2d(&x, &w, Some(&[0.0]), &ConvSpec::pointwise(2, 1)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn grouped_conv_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = ConvSpec::new(6, 6, 3).with_groups(3);
        let x = Tensor::randn(Shape::new(2, 6, 9, 9), 1.0, &mut rng);
        let w = Tensor::randn(spec.weight_shape(), 0.5, &mut rng);
        let b: Vec<f32> = (0..6).map(|i| i as f32 * 0.1).collect();
        let fast = conv2d(&x, &w, Some(&b), &spec).unwrap();
        let slow = naive(&x, &w, Some(&b), &spec);
        assert!(fast.max_abs_diff(&slow) < 1e-5);
    }

    #[test]
    fn strided_and_unpadded_match_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for spec in [
            ConvSpec::new(3, 4, 3).with_stride(2),
            ConvSpec::new(3, 4, 3).with_padding(0),
            ConvSpec::new(4, 4, 3)
                .with_stride(2)
                .with_padding(0)
                .with_groups(2)
                .without_bias(),
            ConvSpec::new(2, 5, 1).with_stride(2),
        ] {
            let x = Tensor::randn(Shape::new(1, spec.in_channels, 7, 8), 1.0, &mut rng);
            let w = Tensor::randn(spec.weight_shape(), 1.0, &mut rng);
            let b = spec.has_bias.then(|| vec![0.25; spec.out_channels]);
            let fast = conv2d(&x, &w, b.as_deref(), &spec).unwrap();
            let slow = naive(&x, &w, b.as_deref(), &spec);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-5, "{spec:?}");
        }
    }

    #[test]
    fn rejects_bad_operands() {
        let x = Tensor::zeros(Shape::new(1, 3, 4, 4));
        let spec = ConvSpec::new(4, 4, 3);
        let w = Tensor::zeros(spec.weight_shape());
        let err = conv2d(&x, &w, Some(&[0.0; 4]), &spec).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");

        let bad_groups = ConvSpec::new(3, 4, 3).with_groups(2);
        let w = Tensor::zeros(Shape::new(4, 1, 3, 3));
        let err = conv2d(&x, &w, Some(&[0.0; 4]), &bad_groups).unwrap_err();
        assert!(err.to_string().contains("groups"), "{err}");

        let spec = ConvSpec::new(3, 4, 3);
        let w = Tensor::zeros(Shape::new(4, 3, 1, 1));
        let err = conv2d(&x, &w, Some(&[0.0; 4]), &spec).unwrap_err();
        assert!(err.to_string().contains("kernel_h"), "{err}");
    }

    #[test]
    fn weight_grad_of_sum_over_ones_counts_positions() {
        let (n, h, w) = (2, 3, 5);
        let x = Tensor::full(Shape::new(n, 2, h, w), 1.0);
        let spec = ConvSpec::pointwise(2, 3);
        let wt = Tensor::full(spec.weight_shape(), 0.3);
        let up = Tensor::full(spec.output_shape(x.shape()).unwrap(), 1.0);
        let g = conv2d_grad(&x, &wt, &spec, &up).unwrap();
        assert!(g.weight.data().iter().all(|&v| v == (n * h * w) as f32));
        assert!(g.bias.unwrap().iter().all(|&v| v == (n * h * w) as f32));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = ConvSpec::new(2, 2, 3);
        let x = Tensor::randn(Shape::new(1, 2, 5, 5), 1.0, &mut rng);
        let w = Tensor::randn(spec.weight_shape(), 1.0, &mut rng);
        let g = conv2d_grad(&x, &w, &spec, &Tensor::zeros(Shape::new(1, 2, 5, 5))).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.unwrap().iter().all(|&v| v == 0.0));
    }
}
