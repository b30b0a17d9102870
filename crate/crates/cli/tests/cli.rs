//! End-to-end checks of the command-line surface: exit codes, idempotence,
//! and the documented file outputs.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvksr"))
}

fn work_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mvksr_cli_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Write a few tiny clean scenes with the library so the CLI has input.
fn make_clean(dir: &Path, n: u64, hw: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let img = mvksr_core::dataset::synth_clean_scene(hw, hw, 600 + i);
        mvksr_core::image::save_png(&img, &dir.join(format!("c{i}.png"))).unwrap();
    }
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in ["synth", "decompose", "train", "restore", "eval", "gradcheck", "bench"] {
        let out = bin().args([sub, "--help"]).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{sub} --help");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--"), "{sub} help must document flags");
    }
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bin().args(["restore", "--definitely-not-a-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_checkpoint_is_io_error() {
    let dir = work_dir("io");
    let out = bin()
        .args(["restore", "--ckpt"])
        .arg(dir.join("missing.ckpt"))
        .arg("--in")
        .arg(dir.join("x.png"))
        .arg("--out")
        .arg(dir.join("y.png"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_is_format_error() {
    let dir = work_dir("crc");
    let ckpt = dir.join("bad.ckpt");
    std::fs::write(&ckpt, b"MVKSgarbage-that-is-not-a-checkpoint").unwrap();
    make_clean(&dir.join("clean"), 1, 16);
    let out = bin()
        .args(["restore", "--ckpt"])
        .arg(&ckpt)
        .arg("--in")
        .arg(dir.join("clean/c0.png"))
        .arg("--out")
        .arg(dir.join("y.png"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn synth_is_idempotent_per_seed() {
    let dir = work_dir("synth");
    make_clean(&dir.join("clean"), 2, 20);
    for out_dir in ["a", "b"] {
        let st = bin()
            .args(["synth", "--clean"])
            .arg(dir.join("clean"))
            .arg("--out")
            .arg(dir.join(out_dir))
            .args(["--kinds", "haze,rain", "--seed", "5"])
            .status()
            .unwrap();
        assert!(st.success());
    }
    for name in ["c0_haze.png", "c0_rain.png", "c1_haze.png", "manifest.txt"] {
        let a = std::fs::read(dir.join("a").join(name)).unwrap();
        let b = std::fs::read(dir.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn decompose_paper_mode_layers_are_complementary() {
    let dir = work_dir("decompose");
    make_clean(&dir.join("clean"), 1, 24);
    let st = bin()
        .args(["decompose", "--in"])
        .arg(dir.join("clean/c0.png"))
        .arg("--out")
        .arg(dir.join("layers"))
        .args(["--mode", "paper"])
        .status()
        .unwrap();
    assert!(st.success());
    for k in [5, 13, 25] {
        let lo = mvksr_core::image::load_png(&dir.join(format!("layers/c0_lo{k}.png"))).unwrap();
        let hi = mvksr_core::image::load_png(&dir.join(format!("layers/c0_hi{k}.png"))).unwrap();
        for (l, h) in lo.data.iter().zip(&hi.data) {
            // exact in f64; one quantization step of slack at the PNG level
            let sum = (l + h) * 255.0;
            assert!((sum - 255.0).abs() <= 1.0, "hi{k}+lo{k} = {sum}");
        }
    }
}

#[test]
fn train_restore_eval_roundtrip() {
    let dir = work_dir("pipeline");
    make_clean(&dir.join("clean"), 3, 32);
    let st = bin()
        .args(["synth", "--clean"])
        .arg(dir.join("clean"))
        .arg("--out")
        .arg(dir.join("data"))
        .args(["--kinds", "mixed", "--seed", "3"])
        .status()
        .unwrap();
    assert!(st.success());

    // config file overrides the flag defaults
    let cfg = dir.join("train.cfg");
    std::fs::write(&cfg, "epochs=1\nbatch=2\npatch=32\nseed=9\n").unwrap();
    let ckpt = dir.join("model.ckpt");
    let out = bin()
        .args(["train", "--manifest"])
        .arg(dir.join("data/manifest.txt"))
        .arg("--out")
        .arg(&ckpt)
        .args(["--epochs", "7", "--blocks", "1"])
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("epoch=0"), "missing epoch log: {stdout}");
    assert!(!stdout.contains("epoch=1 "), "config epochs=1 not honored");
    assert!(ckpt.exists());
    assert!(dir.join("model.state").exists());
    assert!(dir.join("model.log").exists());

    let st = bin()
        .args(["restore", "--ckpt"])
        .arg(&ckpt)
        .arg("--in")
        .arg(dir.join("data/c0_mixed.png"))
        .arg("--out")
        .arg(dir.join("restored.png"))
        .arg("--fast")
        .status()
        .unwrap();
    assert!(st.success());
    let restored = mvksr_core::image::load_png(&dir.join("restored.png")).unwrap();
    assert_eq!((restored.h, restored.w, restored.c), (32, 32, 3));

    let report = dir.join("report.txt");
    let st = bin()
        .args(["eval", "--ckpt"])
        .arg(&ckpt)
        .arg("--manifest")
        .arg(dir.join("data/manifest.txt"))
        .arg("--report")
        .arg(&report)
        .status()
        .unwrap();
    assert!(st.success());
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("mixed.restored.psnr.mean="));
    assert!(text.contains("mixed.baseline.psnr.mean="));
}
