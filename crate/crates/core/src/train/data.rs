//! Paired blur/sharp samples: loading, synthesis, cropping and batching.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blur::{synth_blur, MotionKernel};
use crate::error::{Error, Result};
use crate::io::{read_image, write_image};
use crate::tensor::{ensure_same_shape, Shape, Tensor};

/// Extension of images in a dataset directory.
pub const IMAGE_EXT: &str = "ppm";

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub id: String,
    /// `(1, 3, h, w)` in `[0, 1]`.
    pub blur: Tensor,
    pub sharp: Tensor,
}

impl ImageSample {
    pub fn new(id: impl Into<String>, blur: Tensor, sharp: Tensor) -> Result<Self> {
        ensure_same_shape("image sample", sharp.shape(), blur.shape())?;
        let s = blur.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::invalid(
                "image sample",
                format!("expected a single 3-channel image, got {s}"),
            ));
        }
        for t in [&blur, &sharp] {
            let (lo, hi) = t.min_max();
            if !(lo >= 0.0 && hi <= 1.0) {
                return Err(Error::invalid(
                    "image sample",
                    format!("values must lie in [0, 1], found [{lo}, {hi}]"),
                ));
            }
        }
        Ok(ImageSample {
            id: id.into(),
            blur,
            sharp,
        })
    }

    pub fn hw(&self) -> (usize, usize) {
        let s = self.blur.shape();
        (s.h, s.w)
    }
}

/// The same random `crop × crop` window cut from both images.
pub fn random_crop_pair<R: Rng + ?Sized>(sample: &ImageSample, crop: usize, rng: &mut R) -> Result<ImageSample> {
    let (h, w) = sample.hw();
    if crop == 0 || crop > h || crop > w {
        return Err(Error::invalid(
            "random_crop_pair",
            format!("crop {crop} does not fit image {h}x{w} ({})", sample.id),
        ));
    }
    let top = rng.random_range(0..=h - crop);
    let left = rng.random_range(0..=w - crop);
    Ok(ImageSample {
        id: sample.id.clone(),
        blur: sample.blur.crop(top, left, crop, crop)?,
        sharp: sample.sharp.crop(top, left, crop, crop)?,
    })
}

/// Sample indices for training step `step`: one shuffled pass over the data per
/// epoch, epochs drawn from `seed` alone.
pub fn batch_indices(seed: u64, step: u64, batch: usize, len: usize) -> Vec<usize> {
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch as u64)
        .map(|b| {
            let pos = step * batch as u64 + b;
            let epoch = pos / len as u64;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(epoch);
                let mut order: Vec<usize> = (0..len).collect();
                order.shuffle(&mut rng);
                cached = Some((epoch, order));
            }
            cached.as_ref().expect("just filled").1[(pos % len as u64) as usize]
        })
        .collect()
}

/// A random scene of overlapping rectangles, discs and stripes over a color gradient.
pub fn synthetic_sharp<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Tensor {
    let mut img = vec![0f32; 3 * h * w];
    let corner: [[f32; 3]; 2] = [rng.random(), rng.random()];
    for y in 0..h {
        for x in 0..w {
            let t = (x + y) as f32 / (h + w).max(2) as f32;
            for c in 0..3 {
                img[c * h * w + y * w + x] = corner[0][c] * (1.0 - t) + corner[1][c] * t;
            }
        }
    }
    let shapes = 6 + rng.random_range(0..6);
    for _ in 0..shapes {
        let color: [f32; 3] = rng.random();
        let kind = rng.random_range(0..3);
        let cy = rng.random_range(0.0..h as f32);
        let cx = rng.random_range(0.0..w as f32);
        let ry = rng.random_range(2.0..(h as f32 / 3.0).max(3.0));
        let rx = rng.random_range(2.0..(w as f32 / 3.0).max(3.0));
        let period = rng.random_range(3.0..9.0f32);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f32 - cy, x as f32 - cx);
                let inside = match kind {
                    0 => dy.abs() <= ry && dx.abs() <= rx,
                    1 => (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0,
                    _ => dy.abs() <= ry && dx.abs() <= rx && ((x as f32 / period) as usize).is_multiple_of(2),
                };
                if inside {
                    for c in 0..3 {
                        img[c * h * w + y * w + x] = color[c];
                    }
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), img)
}

/// `count` synthetic pairs of size `h × w`, blurred with `kernel`.
pub fn synthetic_pairs(count: usize, h: usize, w: usize, kernel: &MotionKernel, seed: u64) -> Result<Vec<ImageSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let sharp = synthetic_sharp(h, w, &mut rng);
            let blur = synth_blur(&sharp, kernel)?;
            ImageSample::new(format!("{i:04}"), blur, sharp)
        })
        .collect()
}

/// What [`load_dataset`] skipped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetReport {
    /// Ids present on only one side.
    pub unpaired: Vec<String>,
    /// Ids whose blur and sharp sizes differ.
    pub mismatched: Vec<String>,
}

impl DatasetReport {
    pub fn warnings(&self) -> usize {
        self.unpaired.len() + self.mismatched.len()
    }
}

fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == IMAGE_EXT) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Pairs `<root>/blur/<id>.ppm` with `<root>/sharp/<id>.ppm`, sorted by id.
pub fn load_dataset(root: &Path) -> Result<(Vec<ImageSample>, DatasetReport)> {
    let blur = list_images(&root.join("blur"))?;
    let sharp = list_images(&root.join("sharp"))?;
    let mut report = DatasetReport::default();
    let mut samples = Vec::new();
    for (id, bpath) in &blur {
        let Some(spath) = sharp.get(id) else {
            report.unpaired.push(id.clone());
            continue;
        };
        let b = read_image(bpath)?;
        let s = read_image(spath)?;
        if b.shape() != s.shape() {
            report.mismatched.push(id.clone());
            continue;
        }
        samples.push(ImageSample::new(id.clone(), b, s)?);
    }
    report
        .unpaired
        .extend(sharp.keys().filter(|id| !blur.contains_key(*id)).cloned());
    report.unpaired.sort();
    Ok((samples, report))
}

/// Write samples in the layout [`load_dataset`] reads.
pub fn save_dataset(root: &Path, samples: &[ImageSample]) -> Result<()> {
    for side in ["blur", "sharp"] {
        let dir = root.join(side);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for s in samples {
        let name = format!("{}.{IMAGE_EXT}", s.id);
        write_image(&root.join("blur").join(&name), &s.blur)?;
        write_image(&root.join("sharp").join(&name), &s.sharp)?;
    }
    Ok(())
}
