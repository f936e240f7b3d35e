//! End-to-end runs of the `rtf` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rtf_core::io::{encode_checkpoint, read_image, save_checkpoint, write_image};
use rtf_core::network::{Model, NetworkConfig};
use rtf_core::train::{synthetic_sharp, OptimState};
use rtf_core::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TINY: &str = "base_width=4\nencoder_depths=1,1,1,1\ncrop=16\nbatch_size=2\nlr_max=2e-3\n";

fn rtf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtf"))
        .args(args)
        .env_remove("RTF_SEED")
        .output()
        .expect("spawn rtf")
}

fn ok(args: &[&str]) -> String {
    let out = rtf(args);
    assert!(
        out.status.success(),
        "rtf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    rtf(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("cfg.txt");
    std::fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p
}

/// Synthetic dataset with 3 pairs of 24×24 under `dir/data`.
fn dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "gen-data",
        "--synthetic",
        "3",
        "--size",
        "24",
        "--out",
        s(&data),
        "--seed",
        "4",
    ]);
    data
}

/// A fresh tiny model written through `train --steps 0`.
fn fresh_model(dir: &Path) -> PathBuf {
    let data = dataset(dir);
    let cfg = write_config(dir, "");
    let model = dir.join("fresh.rtfw");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--steps",
        "0",
        "--out",
        s(&model),
        "--seed",
        "3",
    ]);
    model
}

fn lines_with<'a>(text: &'a str, event: &str) -> Vec<&'a str> {
    text.lines()
        .filter(|l| l.starts_with(&format!("event={event}")))
        .collect()
}

#[test]
fn identity_kernel_dataset_has_identical_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let log = ok(&[
        "gen-data",
        "--synthetic",
        "2",
        "--size",
        "20",
        "--out",
        s(&out),
        "--kernel",
        "linear:len=1,angle=0",
    ]);
    assert_eq!(lines_with(&log, "pair").len(), 2);
    for entry in std::fs::read_dir(out.join("sharp")).unwrap() {
        let p = entry.unwrap().path();
        let blur = out.join("blur").join(p.file_name().unwrap());
        assert_eq!(
            std::fs::read(&p).unwrap(),
            std::fs::read(&blur).unwrap(),
            "{}",
            p.display()
        );
    }
    assert!(out.join("kernel.pgm").is_file());
}

#[test]
fn gen_data_blurs_existing_images() {
    let dir = tempfile::tempdir().unwrap();
    let sharp = dir.path().join("in");
    std::fs::create_dir(&sharp).unwrap();
    let img = synthetic_sharp(18, 22, &mut ChaCha8Rng::seed_from_u64(1));
    write_image(&sharp.join("x.ppm"), &img).unwrap();
    let out = dir.path().join("out");
    let log = ok(&["gen-data", "--sharp", s(&sharp), "--out", s(&out)]);
    assert!(log.contains("event=pair id=x h=18 w=22"), "{log}");
    assert!(log.contains("kernel_sum=1.000000000"), "{log}");
    assert_ne!(
        read_image(&out.join("blur/x.ppm")).unwrap(),
        read_image(&out.join("sharp/x.ppm")).unwrap()
    );
}

#[test]
fn zero_steps_writes_a_fresh_build() {
    let dir = tempfile::tempdir().unwrap();
    let model = fresh_model(dir.path());
    let built = Model::build(&NetworkConfig::tiny(4), 3).unwrap();
    let want = encode_checkpoint(&built, Some(&OptimState::new(&built.params))).unwrap();
    assert_eq!(std::fs::read(model).unwrap(), want);
}

#[test]
fn split_training_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = write_config(dir.path(), "total_steps=6\n");
    let straight = dir.path().join("straight.rtfw");
    let half = dir.path().join("half.rtfw");
    let resumed = dir.path().join("resumed.rtfw");
    let common = |steps: &'static str, out: &Path| {
        vec![
            "train".to_string(),
            "--data".into(),
            s(&data).into(),
            "--config".into(),
            s(&cfg).into(),
            "--steps".into(),
            steps.into(),
            "--out".into(),
            s(out).into(),
            "--seed".into(),
            "5".into(),
        ]
    };
    let run = |v: Vec<String>| ok(&v.iter().map(String::as_str).collect::<Vec<_>>());

    let full_log = run(common("6", &straight));
    run(common("3", &half));
    let mut args = common("6", &resumed);
    args.extend(["--resume".into(), s(&half).into()]);
    let resumed_log = run(args);

    assert_eq!(std::fs::read(&straight).unwrap(), std::fs::read(&resumed).unwrap());
    let steps = |log: &str| {
        lines_with(log, "step")
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>()
    };
    assert_eq!(steps(&full_log)[3..], steps(&resumed_log)[..]);
    assert!(resumed_log.contains("from_step=3"));
}

#[test]
fn deblurs_every_image_in_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let model = fresh_model(dir.path());
    let input = dir.path().join("data/blur");
    let out = dir.path().join("restored");
    let log = ok(&[
        "deblur",
        "--model",
        s(&model),
        "--input",
        s(&input),
        "--output",
        s(&out),
        "--reference",
        s(&input),
    ]);
    assert_eq!(lines_with(&log, "image").len(), 3);
    assert!(log.contains("event=summary images=3"), "{log}");
    // a fresh model is the identity, so the written bytes equal the inputs
    assert!(log.contains("psnr=99.0000"), "{log}");
    for entry in std::fs::read_dir(&input).unwrap() {
        let p = entry.unwrap().path();
        assert_eq!(
            std::fs::read(&p).unwrap(),
            std::fs::read(out.join(p.file_name().unwrap())).unwrap()
        );
    }
}

#[test]
fn odd_sizes_are_padded_and_cropped_back() {
    let dir = tempfile::tempdir().unwrap();
    let model = fresh_model(dir.path());
    let img = synthetic_sharp(250, 250, &mut ChaCha8Rng::seed_from_u64(8));
    let input = dir.path().join("big.ppm");
    write_image(&input, &img).unwrap();
    let output = dir.path().join("big_out.ppm");
    let log = ok(&[
        "deblur",
        "--model",
        s(&model),
        "--input",
        s(&input),
        "--output",
        s(&output),
    ]);
    assert!(log.contains("h=250 w=250"), "{log}");
    assert_eq!(std::fs::read(&input).unwrap(), std::fs::read(&output).unwrap());
}

#[test]
fn count_reports_the_calibrated_budget() {
    let log = ok(&["count"]);
    assert!(log.starts_with("params=5146923 "), "{log}");
    assert!(log.contains(" macs=15165019296 "), "{log}");
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let log = ok(&["count", "--config", s(&cfg), "--h", "16", "--w", "16"]);
    assert!(
        log.starts_with("params=21383 ") && log.contains(" macs=431552 "),
        "{log}"
    );
}

#[test]
fn bench_prints_every_sample_and_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let model = fresh_model(dir.path());
    let log = ok(&[
        "bench",
        "--model",
        s(&model),
        "--h",
        "32",
        "--w",
        "32",
        "--iters",
        "3",
        "--warmup",
        "1",
    ]);
    assert_eq!(lines_with(&log, "sample").len(), 3);
    let report = lines_with(&log, "report");
    assert_eq!(report.len(), 1);
    for key in [
        "h=32",
        "w=32",
        "batch=1",
        "threads=1",
        "iters=3",
        "mean_ms=",
        "median_ms=",
        "p95_ms=",
        "fps=",
    ] {
        assert!(report[0].contains(key), "{key} missing from {}", report[0]);
    }
}

#[test]
fn exit_codes_separate_usage_io_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("nope.rtfw");
    let img = d.join("a.ppm");
    write_image(&img, &Tensor::full(rtf_core::Shape::new(1, 3, 8, 8), 0.5)).unwrap();
    let out = d.join("o.ppm");

    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["deblur", "--model", s(&missing)]), 2);
    assert_eq!(
        code(&[
            "gen-data",
            "--synthetic",
            "1",
            "--out",
            s(&d.join("g")),
            "--kernel",
            "box:3"
        ]),
        2
    );
    assert_eq!(
        code(&[
            "deblur",
            "--model",
            s(&missing),
            "--input",
            s(&img),
            "--output",
            s(&out)
        ]),
        3
    );

    let junk = d.join("junk.rtfw");
    std::fs::write(&junk, b"RTFW\x01garbage").unwrap();
    assert_eq!(
        code(&["deblur", "--model", s(&junk), "--input", s(&img), "--output", s(&out)]),
        3
    );

    let mut model = Model::build(&NetworkConfig::tiny(4), 0).unwrap();
    let head = model.network.head.weight;
    model.params.get_mut(head).data_mut()[0] = f32::NAN;
    let poisoned = d.join("nan.rtfw");
    save_checkpoint(&poisoned, &model, None).unwrap();
    assert_eq!(
        code(&[
            "deblur",
            "--model",
            s(&poisoned),
            "--input",
            s(&img),
            "--output",
            s(&out)
        ]),
        4
    );
    assert_eq!(code(&["--version"]), 0);
}
