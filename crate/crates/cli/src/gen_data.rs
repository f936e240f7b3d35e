use std::io::Write;

use anyhow::Context;
use rtf_core::io::{read_image, write_gray};
use rtf_core::train::{save_dataset, synth_blur, synthetic_pairs, ImageSample, MotionKernel};

use crate::{create_dir, list_images, resolve_seed, usage, GenDataArgs};

pub fn run(args: &GenDataArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let kernel: MotionKernel = args.kernel.parse()?;
    let samples = match (&args.sharp, args.synthetic) {
        (Some(dir), None) => {
            let files = list_images(dir)?;
            if files.is_empty() {
                return Err(usage(format!("no .ppm images in {}", dir.display())));
            }
            let mut samples = Vec::with_capacity(files.len());
            for f in files {
                let id = f.file_stem().expect("listed file").to_string_lossy().into_owned();
                let sharp = read_image(&f)?;
                let blur = synth_blur(&sharp, &kernel)?;
                samples.push(ImageSample::new(id, blur, sharp)?);
            }
            samples
        }
        (None, Some(count)) => {
            if count == 0 || args.size == 0 {
                return Err(usage("--synthetic and --size must be positive"));
            }
            let seed = resolve_seed(args.seed, 0)?;
            synthetic_pairs(count, args.size, args.size, &kernel, seed)?
        }
        _ => return Err(usage("give exactly one of --sharp or --synthetic")),
    };
    if let Some(dir) = &args.sharp {
        if args.out.canonicalize().ok() == dir.canonicalize().ok() {
            return Err(usage("--out must differ from --sharp"));
        }
    }
    create_dir(&args.out)?;
    save_dataset(&args.out, &samples).with_context(|| format!("writing {}", args.out.display()))?;
    write_gray(&args.out.join("kernel.pgm"), &kernel.to_image())?;
    for s in &samples {
        let (h, w) = s.hw();
        writeln!(out, "event=pair id={} h={h} w={w}", s.id)?;
    }
    writeln!(
        out,
        "event=done pairs={} kernel_h={} kernel_w={} kernel_sum={:.9}",
        samples.len(),
        kernel.h,
        kernel.w,
        kernel.sum()
    )?;
    Ok(())
}
