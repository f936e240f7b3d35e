use rtf_core::{Shape, Tensor};

/// Smallest multiple of `factor` that is at least `len`.
pub fn padded_len(len: usize, factor: usize) -> usize {
    len.div_ceil(factor) * factor
}

/// Mirror index without repeating the edge sample: `-1 → 1`, `n → n-2`.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Extend the bottom and right edges to `h × w` by reflection.
pub fn reflect_pad(x: &Tensor, h: usize, w: usize) -> Tensor {
    let s = x.shape();
    assert!(h >= s.h && w >= s.w, "reflect_pad cannot shrink");
    let mut out = Vec::with_capacity(s.n * s.c * h * w);
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            for y in 0..h {
                let row = &plane[reflect(y, s.h) * s.w..][..s.w];
                out.extend((0..w).map(|xx| row[reflect(xx, s.w)]));
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, h, w), out)
}
