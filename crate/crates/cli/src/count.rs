use std::io::Write;

use anyhow::Context;
use rtf_core::network::{count_macs_for, count_params_for, NetworkConfig};

use crate::train::read_config;
use crate::CountArgs;

pub fn run(args: &CountArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            read_config(&text)
                .with_context(|| format!("config {}", p.display()))?
                .network
        }
        None => NetworkConfig::calibrated(),
    };
    let params = count_params_for(&config)?;
    let macs = count_macs_for(&config, args.h, args.w)?;
    writeln!(
        out,
        "params={params} params_m={:.3} macs={macs} gmacs={:.3} h={} w={}",
        params as f64 / 1e6,
        macs as f64 / 1e9,
        args.h,
        args.w
    )?;
    Ok(())
}
