use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use rtf_core::io::{load_checkpoint, quantize, read_image, write_image};
use rtf_core::network::{Model, STAGES};
use rtf_core::train::{psnr, ssim};
use rtf_core::Tensor;

use crate::pad::{padded_len, reflect_pad};
use crate::{create_dir, ensure_distinct, list_images, usage, DeblurArgs};

/// Smallest image side SSIM accepts.
const SSIM_MIN_SIDE: usize = 11;

/// Reflect-pad to a size the network accepts, run it, crop back.
pub fn deblur_image(model: &Model, blur: &Tensor) -> rtf_core::Result<Tensor> {
    let s = blur.shape();
    let factor = 1 << (STAGES - 1);
    let (ph, pw) = (padded_len(s.h, factor), padded_len(s.w, factor));
    if (ph, pw) == (s.h, s.w) {
        return model.forward(blur);
    }
    model.forward(&reflect_pad(blur, ph, pw))?.crop(0, 0, s.h, s.w)
}

struct Job {
    id: String,
    input: PathBuf,
    output: PathBuf,
    reference: Option<PathBuf>,
}

fn jobs(args: &DeblurArgs) -> anyhow::Result<Vec<Job>> {
    if !args.input.is_dir() {
        if args.output.is_dir() {
            return Err(usage(format!(
                "--output {} is a directory but --input is a file",
                args.output.display()
            )));
        }
        let id = args
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Ok(vec![Job {
            id,
            input: args.input.clone(),
            output: args.output.clone(),
            reference: args.reference.clone(),
        }]);
    }
    if args.output.is_file() {
        return Err(usage(format!(
            "--output {} is a file but --input is a directory",
            args.output.display()
        )));
    }
    let files = list_images(&args.input)?;
    if files.is_empty() {
        return Err(usage(format!("no .ppm images in {}", args.input.display())));
    }
    Ok(files
        .into_iter()
        .map(|input| {
            let name = input.file_name().expect("listed file").to_owned();
            Job {
                id: Path::new(&name)
                    .file_stem()
                    .expect("listed file")
                    .to_string_lossy()
                    .into_owned(),
                output: args.output.join(&name),
                reference: args.reference.as_ref().map(|r| r.join(&name)),
                input,
            }
        })
        .collect())
}

pub fn run(args: &DeblurArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let model = load_checkpoint(&args.model)?.model;
    let jobs = jobs(args)?;
    if args.input.is_dir() {
        create_dir(&args.output)?;
    }
    // read everything first so a bad input fails before any output is written
    let mut loaded = Vec::with_capacity(jobs.len());
    for job in &jobs {
        ensure_distinct(&job.input, &job.output)?;
        let blur = read_image(&job.input)?;
        let reference = match &job.reference {
            Some(p) => {
                let r = read_image(p)?;
                if r.shape() != blur.shape() {
                    return Err(usage(format!(
                        "reference {} is {} but input is {}",
                        p.display(),
                        r.shape(),
                        blur.shape()
                    )));
                }
                Some(r)
            }
            None => None,
        };
        loaded.push((blur, reference));
    }

    let (mut time, mut psnr_sum, mut ssim_sum, mut ssim_count) = (0.0, 0.0, 0.0, 0usize);
    for (job, (blur, reference)) in jobs.iter().zip(&loaded) {
        let t = Instant::now();
        let sharp = deblur_image(&model, blur).with_context(|| format!("deblurring {}", job.input.display()))?;
        let dt = t.elapsed().as_secs_f64();
        time += dt;
        if !sharp.is_finite() {
            return Err(rtf_core::Error::NonFinite(format!("output for {}", job.input.display())).into());
        }
        write_image(&job.output, &sharp)?;
        let s = blur.shape();
        write!(
            out,
            "event=image id={} h={} w={} time_ms={:.3}",
            job.id,
            s.h,
            s.w,
            dt * 1e3
        )?;
        if let Some(r) = reference {
            // score what was written, after 8-bit rounding
            let stored = sharp.map(|v| f32::from(quantize(v)) / 255.0);
            let p = psnr(&stored, r)?;
            psnr_sum += p;
            write!(out, " psnr={p:.4}")?;
            if s.h >= SSIM_MIN_SIDE && s.w >= SSIM_MIN_SIDE {
                let q = ssim(&stored, r)?;
                ssim_sum += q;
                ssim_count += 1;
                write!(out, " ssim={q:.6}")?;
            }
        }
        writeln!(out)?;
    }
    let n = jobs.len() as f64;
    write!(
        out,
        "event=summary images={} mean_time_ms={:.3}",
        jobs.len(),
        time / n * 1e3
    )?;
    if args.reference.is_some() {
        write!(out, " psnr={:.4}", psnr_sum / n)?;
        if ssim_count > 0 {
            write!(out, " ssim={:.6}", ssim_sum / ssim_count as f64)?;
        }
    }
    writeln!(out)?;
    Ok(())
}
