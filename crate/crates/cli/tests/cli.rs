//! End-to-end command-line tests against the built binary: exit codes, file
//! outputs, determinism under seeds, fast/oracle parity, PLY round trip.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gsavatar"))
}

fn work_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("gsavatar_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed ({:?}):\n{}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY_DATA: &[&str] = &[
    "--set",
    "dataset.n_frames=4",
    "--set",
    "dataset.resolution=32",
    "--set",
    "dataset.n_points=200",
    "--set",
    "rig.template_vertices=120",
    "--set",
    "dataset.eval_every=4",
];

const TINY_TRAIN: &[&str] = &[
    "--preset",
    "desk",
    "--set",
    "train.epochs=2",
    "--set",
    "model.hidden_width=10",
    "--set",
    "model.hidden_layers=1",
    "--set",
    "lifecycle.max_points=400",
    "--set",
    "lifecycle.scale=0.2",
];

fn gen_data(dir: &Path, seed: u64) {
    let out = bin()
        .args(["gen-data", "--out"])
        .arg(dir)
        .args(TINY_DATA)
        .args(["--seed", &seed.to_string()])
        .output()
        .unwrap();
    ok(&out);
}

fn train(data: &Path, run: &Path, extra: &[&str]) {
    let out = bin()
        .args(["train", "--data"])
        .arg(data)
        .arg("--out")
        .arg(run)
        .args(TINY_TRAIN)
        .args(extra)
        .output()
        .unwrap();
    ok(&out);
}

#[test]
fn gen_data_layout_and_seed_determinism() {
    let dir = work_dir("gendata");
    gen_data(&dir.join("a"), 42);
    for file in ["cameras.json", "latents.csv", "rig.txt", "meta.txt", "frames/frame_0000.png"] {
        assert!(dir.join("a").join(file).exists(), "missing {file}");
    }
    // Identical seed regenerates identical bytes; a new seed changes frames.
    gen_data(&dir.join("b"), 42);
    gen_data(&dir.join("c"), 7);
    let read = |p: &Path| std::fs::read(p.join("frames/frame_0000.png")).unwrap();
    assert_eq!(read(&dir.join("a")), read(&dir.join("b")));
    assert_ne!(read(&dir.join("a")), read(&dir.join("c")));
}

#[test]
fn invalid_config_key_exits_2_and_names_the_key() {
    let dir = work_dir("badkey");
    let out = bin()
        .args(["gen-data", "--out"])
        .arg(dir.join("d"))
        .args(["--set", "dataset.bogus_knob=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dataset.bogus_knob"), "stderr: {stderr}");
}

#[test]
fn config_dump_roundtrips() {
    let out = bin().args(["config", "--dump", "--preset", "desk"]).output().unwrap();
    ok(&out);
    let dump = String::from_utf8(out.stdout).unwrap();
    assert!(dump.contains("train.lr = 0.001"));
    assert!(dump.contains("lifecycle.r0 = 0.1"));
    assert!(dump.contains("lifecycle.max_points = 20000"));
    // Feed the dump back through a config file.
    let dir = work_dir("dump");
    let cfg_path = dir.join("dumped.cfg");
    std::fs::write(&cfg_path, &dump).unwrap();
    let out2 = bin()
        .args(["config", "--dump", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    ok(&out2);
    assert_eq!(dump, String::from_utf8(out2.stdout).unwrap());
}

#[test]
fn train_render_eval_export_pipeline() {
    let dir = work_dir("pipeline");
    gen_data(&dir.join("data"), 42);
    train(&dir.join("data"), &dir.join("run"), &[]);
    let ckpt = dir.join("run/checkpoint.ckpt");
    assert!(ckpt.exists());
    assert!(dir.join("run/metrics.csv").exists());
    assert!(dir.join("run/schedule.csv").exists());

    // Fast and oracle renders agree to well below one 8-bit step.
    let fast_dir = dir.join("fast");
    let out = bin()
        .args(["render", "--checkpoint"])
        .arg(&ckpt)
        .arg("--data")
        .arg(dir.join("data"))
        .arg("--out")
        .arg(&fast_dir)
        .args(["--frames", "0,1"])
        .output()
        .unwrap();
    ok(&out);
    let oracle_dir = dir.join("oracle");
    let out = bin()
        .args(["render", "--checkpoint"])
        .arg(&ckpt)
        .arg("--data")
        .arg(dir.join("data"))
        .arg("--out")
        .arg(&oracle_dir)
        .args(["--frames", "0,1", "--oracle"])
        .output()
        .unwrap();
    ok(&out);
    for f in ["render_0000.png", "render_0001.png"] {
        let a = std::fs::read(fast_dir.join(f)).unwrap();
        let b = std::fs::read(oracle_dir.join(f)).unwrap();
        assert_eq!(a, b, "fast and oracle 8-bit renders must agree ({f})");
    }

    // Resolution override doubles output size.
    let hi_dir = dir.join("hi");
    let out = bin()
        .args(["render", "--checkpoint"])
        .arg(&ckpt)
        .arg("--data")
        .arg(dir.join("data"))
        .arg("--out")
        .arg(&hi_dir)
        .args(["--frames", "0", "--resolution", "64"])
        .output()
        .unwrap();
    ok(&out);
    let img = gsavatar_core::image::Image::load_png(&hi_dir.join("render_0000.png")).unwrap();
    assert_eq!((img.width, img.height), (64, 64));

    // finetune-latents 0 equals plain eval.
    let run_eval = |extra: &[&str]| -> String {
        let out = bin()
            .args(["eval", "--checkpoint"])
            .arg(&ckpt)
            .arg("--data")
            .arg(dir.join("data"))
            .args(extra)
            .output()
            .unwrap();
        ok(&out);
        String::from_utf8(out.stdout).unwrap()
    };
    let plain = run_eval(&[]);
    let zero_steps = run_eval(&["--finetune-latents", "0"]);
    let plain_csv: Vec<&str> = plain.lines().take_while(|l| !l.starts_with("mean:")).collect();
    let zero_csv: Vec<&str> = zero_steps.lines().take_while(|l| !l.starts_with("mean:")).collect();
    assert_eq!(plain_csv, zero_csv);

    // PLY export round-trips and keeps the checkpoint's point count.
    let ply_path = dir.join("cloud.ply");
    let out = bin()
        .args(["export-ply", "--checkpoint"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&ply_path)
        .arg("--canonical")
        .output()
        .unwrap();
    ok(&out);
    let cloud =
        gsavatar_core::ply::import_ply(&ply_path, gsavatar_core::cloud::SpaceTag::Canonical)
            .unwrap();
    assert_eq!(cloud.len(), 400, "point count should match the trained checkpoint");

    // Missing checkpoint is an I/O failure (exit 4).
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(dir.join("nope.ckpt"))
        .arg("--data")
        .arg(dir.join("data"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn numerical_abort_exits_3_with_dump() {
    let dir = work_dir("abort");
    gen_data(&dir.join("data"), 42);
    let out = bin()
        .args(["train", "--data"])
        .arg(dir.join("data"))
        .arg("--out")
        .arg(dir.join("run"))
        .args(TINY_TRAIN)
        .args(["--set", "train.lr=1e300"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("run/abort_dump.txt").exists());
}

#[test]
fn resume_matches_unbroken_run_bitwise() {
    let dir = work_dir("resume");
    gen_data(&dir.join("data"), 42);
    // Unbroken 2 epochs.
    train(&dir.join("data"), &dir.join("run_a"), &[]);
    // Broken: 1 epoch, then resume to 2.
    let out = bin()
        .args(["train", "--data"])
        .arg(dir.join("data"))
        .arg("--out")
        .arg(dir.join("run_b1"))
        .args(TINY_TRAIN)
        .args(["--set", "train.epochs=1"])
        .output()
        .unwrap();
    ok(&out);
    let out = bin()
        .args(["train", "--data"])
        .arg(dir.join("data"))
        .arg("--out")
        .arg(dir.join("run_b2"))
        .args(TINY_TRAIN)
        .args(["--resume"])
        .arg(dir.join("run_b1/checkpoint.ckpt"))
        .output()
        .unwrap();
    ok(&out);
    let a = std::fs::read(dir.join("run_a/checkpoint.ckpt")).unwrap();
    let b = std::fs::read(dir.join("run_b2/checkpoint.ckpt")).unwrap();
    assert_eq!(a, b, "resumed checkpoint differs from unbroken run");
}
