use std::io::Write;

use rtf_core::bench::{bench, BenchSpec};
use rtf_core::io::load_checkpoint;

use crate::{usage, BenchArgs};

pub fn run(args: &BenchArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    if args.iters == 0 {
        return Err(usage("--iters must be at least 1"));
    }
    let model = load_checkpoint(&args.model)?.model;
    let spec = BenchSpec {
        h: args.h,
        w: args.w,
        batch: args.batch,
        threads: args.threads,
        warmup: args.warmup,
        iters: args.iters,
    };
    let report = bench(&model, &spec)?;
    for (i, s) in report.samples.iter().enumerate() {
        writeln!(out, "event=sample iter={} ms={:.3}", i + 1, s * 1e3)?;
    }
    writeln!(out, "event=report {report}")?;
    Ok(())
}
