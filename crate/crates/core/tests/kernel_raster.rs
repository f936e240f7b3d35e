//! The linear motion kernel against an independent bilinear splat of the segment.

use std::collections::BTreeMap;

use rtf_core::train::{MotionKernel, KERNEL_SUM_TOL};

/// Weights keyed by integer offset `(dy, dx)` from the kernel center.
fn splat(len: usize, angle_deg: f64) -> BTreeMap<(i64, i64), f64> {
    let mut out = BTreeMap::new();
    let (s, c) = angle_deg.to_radians().sin_cos();
    for k in 0..len {
        let t = k as f64 - (len as f64 - 1.0) / 2.0;
        // rows grow downwards, so a counter-clockwise angle moves up
        let (x, y) = (t * c, -t * s);
        let (x, y) = (clean(x), clean(y));
        let (x0, y0) = (x.floor(), y.floor());
        for (oy, wy) in [(0.0, 1.0 - (y - y0)), (1.0, y - y0)] {
            for (ox, wx) in [(0.0, 1.0 - (x - x0)), (1.0, x - x0)] {
                if wy * wx > 0.0 {
                    *out.entry(((y0 + oy) as i64, (x0 + ox) as i64)).or_insert(0.0) += wy * wx / len as f64;
                }
            }
        }
    }
    out
}

fn clean(v: f64) -> f64 {
    if (v - v.round()).abs() < 1e-9 {
        v.round()
    } else {
        v
    }
}

fn entries(k: &MotionKernel) -> BTreeMap<(i64, i64), f64> {
    let s = k.to_image().shape();
    let (ch, cw) = ((s.h / 2) as i64, (s.w / 2) as i64);
    let mut out = BTreeMap::new();
    for y in 0..s.h {
        for x in 0..s.w {
            if k.at(y, x) != 0.0 {
                out.insert((y as i64 - ch, x as i64 - cw), k.at(y, x));
            }
        }
    }
    out
}

fn assert_matches_splat(len: usize, angle: f64) {
    let k = MotionKernel::linear(len, angle).unwrap();
    let got = entries(&k);
    let want = splat(len, angle);
    assert_eq!(
        got.keys().collect::<Vec<_>>(),
        want.keys().collect::<Vec<_>>(),
        "support of len {len} angle {angle}"
    );
    for (key, w) in &want {
        assert!((got[key] - w).abs() < 1e-12, "{key:?}: {} vs {w}", got[key]);
    }
}

#[test]
fn reference_kernel_len9_angle30() {
    let k = MotionKernel::linear(9, 30.0).unwrap();
    assert!((k.sum() - 1.0).abs() <= KERNEL_SUM_TOL);
    assert_matches_splat(9, 30.0);

    // every tap lies within one cell of the segment y = -x·tan 30°, |t| ≤ 4
    let (s, c) = 30f64.to_radians().sin_cos();
    for &(dy, dx) in entries(&k).keys() {
        let (x, y) = (dx as f64, dy as f64);
        let along = x * c - y * s;
        let across = x * s + y * c;
        assert!(across.abs() < 2f64.sqrt(), "({dy}, {dx}) is {across} off the line");
        assert!(along.abs() <= 4.0 + 2f64.sqrt(), "({dy}, {dx}) is {along} along");
    }

    // symmetric samples give a centered, point-symmetric kernel
    let e = entries(&k);
    for (&(dy, dx), &w) in &e {
        assert!((e.get(&(-dy, -dx)).copied().unwrap_or(0.0) - w).abs() < 1e-12);
    }
}

#[test]
fn axis_aligned_kernels_are_boxes() {
    let k = MotionKernel::linear(5, 0.0).unwrap();
    let img = k.to_image().shape();
    assert_eq!((img.h, img.w), (1, 5));
    for x in 0..5 {
        assert!((k.at(0, x) - 0.2).abs() < 1e-15);
    }
    let k = MotionKernel::linear(3, 90.0).unwrap();
    let img = k.to_image().shape();
    assert_eq!((img.h, img.w), (3, 1));
}

#[test]
fn even_lengths_split_between_cells() {
    // samples at ±0.5, ±1.5 fall halfway between columns
    let k = MotionKernel::linear(4, 0.0).unwrap();
    let e = entries(&k);
    assert_eq!(e.len(), 5);
    for (dx, w) in [(-2, 0.125), (-1, 0.25), (0, 0.25), (1, 0.25), (2, 0.125)] {
        assert!((e[&(0, dx)] - w).abs() < 1e-15, "{dx}");
    }
}

#[test]
fn assorted_kernels_match_the_splat() {
    for len in [1, 2, 3, 7, 9, 15, 21] {
        for angle in [0.0, 12.5, 30.0, 45.0, 90.0, 135.0, 200.0, -60.0] {
            assert_matches_splat(len, angle);
        }
    }
}

#[test]
fn length_one_is_the_identity() {
    let k = MotionKernel::linear(1, 77.0).unwrap();
    assert_eq!(entries(&k), entries(&MotionKernel::identity()));
}
