use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use grainseg_core::data::io::{read_gray, write_png};
use grainseg_core::image::GrayImage;
use serde_json::Value;

fn grainseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grainseg"))
        .args(args)
        .env("GRAINSEG_THREADS", "1")
        .output()
        .expect("spawn grainseg")
}

fn ok(args: &[&str]) -> String {
    let out = grainseg(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = grainseg(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error:"), "stderr lacks the error prefix: {err}");
    err
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, seed: u64, count: usize, size: usize) {
    let (seed, count, size) = (seed.to_string(), count.to_string(), size.to_string());
    ok(&[
        "synth", "--output", p(dir), "--seed", &seed, "--count", &count, "--height", &size, "--width", &size,
        "--grain-fraction", "0.4",
    ]);
}

fn sorted_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
}

fn gray(values: &[u8], w: u32, h: u32) -> GrayImage {
    GrayImage::from_raw(w, h, values.to_vec()).unwrap()
}

#[test]
fn synth_is_deterministic_and_writes_triples() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 7, 4, 64);
    synth(&b, 7, 4, 64);
    let (fa, fb) = (sorted_files(&a), sorted_files(&b));
    assert_eq!(fa.len(), 12);
    assert!(fa.iter().all(|f| f.extension().unwrap() == "png"));
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn synth_rejects_bad_fraction_with_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let err = fails(&["synth", "--output", p(tmp.path()), "--grain-fraction", "1.5"]);
    assert!(err.contains("--grain-fraction") && err.contains("Usage"), "{err}");
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn prepare_counts_and_missing_mask() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    synth(&raw, 1, 1, 512);
    let out = ok(&["prepare", "--input", p(&raw), "--output", p(&tmp.path().join("prep")), "--scheme", "set1"]);
    assert_eq!(out.trim(), "samples=8");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("prep/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 8);

    fs::remove_file(raw.join("synth000_mask.png")).unwrap();
    let err = fails(&["prepare", "--input", p(&raw), "--output", p(&tmp.path().join("p2")), "--scheme", "set1"]);
    assert!(err.contains("synth000"), "{err}");
}

/// synth → prepare → train for a tiny two-epoch run; returns the run dir.
fn tiny_run(root: &Path, extra: &[&str]) -> PathBuf {
    let raw = root.join("raw");
    if !raw.exists() {
        synth(&raw, 3, 2, 128);
        ok(&["prepare", "--input", p(&raw), "--output", p(&root.join("prep")), "--scheme", "set4", "--tile", "64"]);
        fs::write(root.join("tiny.cfg"), "# smoke\nstage_widths = 8,16,32,64\nepochs = 2\nbatch_size = 4\nseed = 11\n").unwrap();
    }
    let run = root.join(format!("run{}", fs::read_dir(root).unwrap().count()));
    let mut args = vec![
        "train",
        "--config",
        p(&root.join("tiny.cfg")).to_owned().leak(),
        "--data",
        p(&root.join("prep/manifest.json")).to_owned().leak(),
        "--out",
        p(&run).to_owned().leak(),
    ];
    args.extend_from_slice(extra);
    let out = ok(&args);
    assert_eq!(out.lines().filter(|l| l.starts_with("epoch=")).count(), 2, "{out}");
    run
}

fn losses(run: &Path) -> Vec<f64> {
    let log: Value = serde_json::from_str(&fs::read_to_string(run.join("trainlog.json")).unwrap()).unwrap();
    log["epochs"].as_array().unwrap().iter().map(|e| e["loss"].as_f64().unwrap()).collect()
}

#[test]
fn train_smoke_rerun_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tiny_run(tmp.path(), &[]);
    for f in ["model.dsgs", "trainlog.json", "resolved-config.txt"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let b = tiny_run(tmp.path(), &[]);
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(fs::read(a.join("model.dsgs")).unwrap(), fs::read(b.join("model.dsgs")).unwrap());

    let c = tiny_run(tmp.path(), &["--set", "seed=12"]);
    assert_ne!(losses(&a), losses(&c));
    let resolved = fs::read_to_string(c.join("resolved-config.txt")).unwrap();
    assert!(resolved.contains("seed = 12  # flag; file had 11"), "{resolved}");
    assert!(resolved.contains("epochs = 2  # file line 3"), "{resolved}");
}

#[test]
fn train_rejects_unknown_key_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 2\n\nlr_rate = 0.1\n").unwrap();
    let err = fails(&["train", "--config", p(&cfg), "--data", p(tmp.path()), "--out", p(&tmp.path().join("o"))]);
    assert!(err.contains("lr_rate") && err.contains("line 3"), "{err}");
    let err = fails(&["info", "--set", "lr_rate=0.1"]);
    assert!(err.contains("lr_rate"), "{err}");
}

#[test]
fn predict_writes_binary_maps_of_input_size() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tiny_run(tmp.path(), &[]);
    let raw = tmp.path().join("raw");
    // 100×90 is not a tile multiple: the stitch must crop back.
    ok(&["synth", "--output", p(&tmp.path().join("odd")), "--count", "1", "--height", "100", "--width", "90"]);
    let pred = tmp.path().join("pred");
    let ckpt = run.join("model.dsgs");
    for input in [raw.as_path(), tmp.path().join("odd/synth000_ppl.png").as_path()] {
        ok(&["predict", "--checkpoint", p(&ckpt), "--input", p(input), "--scheme", "test1", "--out", p(&pred), "--tile", "64", "--prob"]);
    }
    let names: Vec<String> = sorted_files(&pred).iter().map(|f| f.file_name().unwrap().to_str().unwrap().to_owned()).collect();
    assert_eq!(
        names,
        ["synth000_ppl_pred.png", "synth000_ppl_prob.png", "synth000_xpl_pred.png", "synth000_xpl_prob.png", "synth001_ppl_pred.png", "synth001_ppl_prob.png", "synth001_xpl_pred.png", "synth001_xpl_prob.png"]
    );
    let odd = read_gray(&pred.join("synth000_ppl_pred.png")).unwrap();
    assert_eq!(odd.dimensions(), (90, 100));
    for f in sorted_files(&pred).iter().filter(|f| f.to_str().unwrap().ends_with("_pred.png")) {
        assert!(read_gray(f).unwrap().as_raw().iter().all(|&v| v == 0 || v == 255), "{}", f.display());
    }

    // A config describing another network is refused.
    let err = fails(&["predict", "--checkpoint", p(&ckpt), "--input", p(&raw), "--out", p(&tmp.path().join("x")), "--set", "stage_widths=8,16,32,32"]);
    assert!(err.contains("checkpoint"), "{err}");
}

#[test]
fn playback_reproduces_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    ok(&["synth", "--output", p(&raw), "--seed", "5", "--count", "2", "--height", "200", "--width", "300"]);
    for scheme in ["test1", "test2"] {
        let pred = tmp.path().join(scheme);
        ok(&["predict", "--playback", p(&raw), "--input", p(&raw), "--scheme", scheme, "--out", p(&pred), "--tile", "64"]);
        for f in sorted_files(&pred) {
            let name = f.file_name().unwrap().to_str().unwrap();
            let id = &name[..8];
            let gt = read_gray(&raw.join(format!("{id}_mask.png"))).unwrap();
            let expect: Vec<u8> = gt.as_raw().iter().map(|&v| if v >= 128 { 255 } else { 0 }).collect();
            assert_eq!(read_gray(&f).unwrap().as_raw(), &expect, "{name}");
        }
        let report = tmp.path().join(format!("{scheme}.json"));
        let table = ok(&["eval", "--pred", p(&pred), "--gt", p(&raw), "--report", p(&report)]);
        assert!(table.lines().any(|l| l.starts_with("avg") && l.matches("1.0000").count() == 5), "{table}");
    }
}

#[test]
fn eval_hand_case_and_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let (pred, gt) = (tmp.path().join("pred"), tmp.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    write_png(&gt.join("a_mask.png"), &gray(&[255, 255, 0, 0], 2, 2)).unwrap();
    write_png(&pred.join("a_pred.png"), &gray(&[255, 0, 0, 0], 2, 2)).unwrap();
    let report = tmp.path().join("r.json");
    ok(&["eval", "--pred", p(&pred), "--gt", p(&gt), "--report", p(&report)]);
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.ends_with('\n'));
    let v: Value = serde_json::from_str(&text).unwrap();
    let row = &v["per_image"][0];
    assert_eq!(row["id"], "a");
    for (key, want) in [("accuracy", 0.75), ("recall", 0.5), ("precision", 1.0), ("f1", 2.0 / 3.0), ("jaccard", 0.5)] {
        assert!((row[key].as_f64().unwrap() - want).abs() < 1e-12, "{key}");
    }

    // Three identical images: every aggregate is 1 with no spread.
    let (pred, gt) = (tmp.path().join("p3"), tmp.path().join("g3"));
    let raw = tmp.path().join("raw");
    synth(&raw, 2, 3, 32);
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    for i in 0..3 {
        let mask = fs::read(raw.join(format!("synth00{i}_mask.png"))).unwrap();
        fs::write(gt.join(format!("synth00{i}_mask.png")), &mask).unwrap();
        fs::write(pred.join(format!("synth00{i}_pred.png")), &mask).unwrap();
    }
    ok(&["eval", "--pred", p(&pred), "--gt", p(&gt), "--report", p(&report)]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for (name, stat) in v["aggregate"].as_object().unwrap() {
        assert_eq!(stat["avg"].as_f64().unwrap(), 1.0, "{name}");
        assert_eq!(stat["std"].as_f64().unwrap(), 0.0, "{name}");
    }
}

#[test]
fn eval_rejects_unmatched_and_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let (pred, gt) = (tmp.path().join("pred"), tmp.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    let report = tmp.path().join("r.json");
    let err = fails(&["eval", "--pred", p(&pred), "--gt", p(&gt), "--report", p(&report)]);
    assert!(err.contains("_pred.png"), "{err}");

    let img = gray(&[0, 255, 0, 255], 2, 2);
    write_png(&gt.join("a_mask.png"), &img).unwrap();
    write_png(&gt.join("b_mask.png"), &img).unwrap();
    write_png(&pred.join("a_ppl_pred.png"), &img).unwrap();
    write_png(&pred.join("zz_pred.png"), &img).unwrap();
    let err = fails(&["eval", "--pred", p(&pred), "--gt", p(&gt), "--report", p(&report)]);
    assert!(err.contains("zz") && err.contains("\"b\""), "{err}");
    assert!(!report.exists());
}

#[test]
fn info_lists_groups_and_totals() {
    let out = ok(&["info"]);
    let total: usize = out.lines().last().unwrap().split_whitespace().last().unwrap().parse().unwrap();
    assert!((total as f64 - 11.5e6).abs() <= 0.05 * 11.5e6, "{total}");
    let groups: Vec<&str> = out.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    for g in ["stem", "encoder1", "encoder4", "decoder4", "decoder1", "final", "total"] {
        assert!(groups.contains(&g), "{g}: {out}");
    }
    let summed: usize = out
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with("total"))
        .map(|l| l.split_whitespace().last().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(summed, total);

    let tiny = ok(&["info", "--set", "stage_widths=8,16,32,64"]);
    assert!(tiny.lines().last().unwrap().ends_with(" 183265"), "{tiny}");
}
