use std::io::Write;

use anyhow::Context;
use rtf_core::io::{load_checkpoint, save_checkpoint};
use rtf_core::network::{KvDoc, Model, NetworkConfig};
use rtf_core::train::{evaluate, identity_baseline, load_dataset, train_steps, OptimState, TrainConfig};

use crate::{resolve_seed, usage, TrainArgs};

/// Network and training settings from one `key=value` file. Unknown keys are errors.
/// `seed` and `total_steps` come back separately because command-line flags
/// may stand in for them.
pub fn read_config(text: &str) -> rtf_core::Result<RunConfig> {
    let mut doc = KvDoc::parse(text)?;
    let seed = doc.take("seed")?;
    let total_steps = doc.take("total_steps")?;
    let network = NetworkConfig::take_from(&mut doc)?;
    let train = TrainConfig::take_from(&mut doc)?;
    doc.finish()?;
    Ok(RunConfig {
        network,
        train,
        seed,
        total_steps,
    })
}

pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub seed: Option<u64>,
    /// Length of the learning-rate schedule, when it differs from `--steps`.
    pub total_steps: Option<u64>,
}

fn one_line(doc: &str) -> String {
    doc.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn run(args: &TrainArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let run = read_config(&text).with_context(|| format!("config {}", args.config.display()))?;
    let (net, mut cfg) = (run.network, run.train);
    cfg.seed = match args.seed.or(run.seed) {
        Some(s) => s,
        None => resolve_seed(None, 0)?,
    };
    cfg.total_steps = run.total_steps.unwrap_or(args.steps);
    cfg.validate()?;

    let (data, report) =
        load_dataset(&args.data).with_context(|| format!("loading dataset {}", args.data.display()))?;
    for id in &report.unpaired {
        writeln!(out, "event=warning kind=unpaired id={id}")?;
    }
    for id in &report.mismatched {
        writeln!(out, "event=warning kind=size_mismatch id={id}")?;
    }
    if data.is_empty() {
        return Err(usage(format!("no usable pairs in {}", args.data.display())));
    }

    let (mut model, mut optim) = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.model.config() != &net {
                return Err(usage(format!(
                    "resume config mismatch: checkpoint {} has [{}] but {} has [{}]",
                    path.display(),
                    one_line(&ckpt.model.config().to_document()),
                    args.config.display(),
                    one_line(&net.to_document())
                )));
            }
            let optim = ckpt
                .optim
                .ok_or_else(|| usage(format!("{} holds no optimizer state to resume from", path.display())))?;
            if optim.step > args.steps {
                return Err(usage(format!(
                    "checkpoint is at step {} which is past --steps {}",
                    optim.step, args.steps
                )));
            }
            (ckpt.model, optim)
        }
        None => {
            let model = Model::build(&net, cfg.seed)?;
            let optim = OptimState::new(&model.params);
            (model, optim)
        }
    };

    let base = identity_baseline(&data)?;
    writeln!(
        out,
        "event=start pairs={} params={} seed={} from_step={} steps={} schedule_steps={} baseline_psnr={:.4} baseline_ssim={:.6}",
        data.len(),
        model.count_params(),
        cfg.seed,
        optim.step,
        args.steps,
        cfg.total_steps,
        base.psnr,
        base.ssim
    )?;

    let every = args.checkpoint_every;
    let target = &args.out;
    train_steps(&mut model, &mut optim, &data, &cfg, args.steps, |log, m, o| {
        let mut line = format!("event=step step={} lr={:.6e} loss={:.8}", log.step, log.lr, log.loss);
        if let Some(p) = log.psnr {
            line.push_str(&format!(" psnr={p:.4}"));
        }
        let _ = writeln!(out, "{line}");
        if every > 0 && log.step % every == 0 && log.step < args.steps {
            save_checkpoint(target, m, Some(o))?;
            let _ = writeln!(out, "event=checkpoint step={} path={}", log.step, target.display());
        }
        Ok(())
    })?;

    save_checkpoint(target, &model, Some(&optim))?;
    writeln!(out, "event=checkpoint step={} path={}", optim.step, target.display())?;
    let eval = evaluate(&model, &data)?;
    writeln!(
        out,
        "event=done step={} psnr={:.4} ssim={:.6} gain_db={:.4}",
        optim.step,
        eval.psnr,
        eval.ssim,
        eval.psnr - base.psnr
    )?;
    Ok(())
}
