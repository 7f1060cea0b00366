use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bdseg_core::distance_map::{load_dmap, save_dmap, DistanceMap};
use bdseg_core::raster::{load_mask, load_pgm};

fn bdseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdseg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = bdseg(dir, args);
    assert!(
        out.status.success(),
        "bdseg {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL: &[&str] = &["--set", "size=32", "--set", "n_train=3", "--set", "n_test=2"];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn help_lists_configuration_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["train", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["steps", "gamma", "lambda", "lr", "output_prior", "timing_size"] {
        assert!(text.contains(key), "{key} missing from help");
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bdseg(dir.path(), &["synth-gen", "--out", "x", "--set", "lamda=2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error: usage: unknown key `lamda`"));
    assert_eq!(stderr(&out).lines().count(), 1);

    let out = bdseg(dir.path(), &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error: usage: "));

    let out = bdseg(dir.path(), &["synth-gen", "--out", "x", "--set", "size=30"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = bdseg(dir.path(), &["heatmap", "--dmap", "missing.dmap", "--out", "h.pgm"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).starts_with("error: io: "), "{}", stderr(&out));

    fs::write(dir.path().join("bad.pgm"), b"P5\n2 2\n255\n\x00").unwrap();
    let out = bdseg(dir.path(), &["encode-dist", "--mask", "bad.pgm", "--out", "d.dmap"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).starts_with("error: parse: "), "{}", stderr(&out));
}

#[test]
fn empty_mask_has_no_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let map = DistanceMap::new(4, 4, vec![0.01; 16], 1.0).unwrap();
    save_dmap(&map, dir.path().join("flat.dmap")).unwrap();
    let out = bdseg(dir.path(), &["reconstruct", "--dmap", "flat.dmap", "--out", "m.pgm"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).starts_with("error: no-boundary"), "{}", stderr(&out));
}

#[test]
fn heatmap_of_ones_is_white() {
    let dir = tempfile::tempdir().unwrap();
    let map = DistanceMap::new(3, 2, vec![1.0; 6], 1.0).unwrap();
    save_dmap(&map, dir.path().join("ones.dmap")).unwrap();
    ok(dir.path(), &["heatmap", "--dmap", "ones.dmap", "--out", "h.pgm"]);
    let img = load_pgm(dir.path().join("h.pgm")).unwrap();
    assert!(img.data.iter().all(|&v| v == 255.0));
}

#[test]
fn encode_then_reconstruct_recovers_mask() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &with_small(&["synth-gen", "--out", "data"]));
    assert_eq!(fs::read_dir(p.join("data/images")).unwrap().count(), 3);
    ok(p, &["encode-dist", "--mask", "data/masks/00000.pgm", "--out", "d.dmap", "--lambda", "1"]);
    assert_eq!(load_dmap(p.join("d.dmap")).unwrap().lambda, 1.0);
    ok(p, &["reconstruct", "--dmap", "d.dmap", "--out", "r.pgm"]);
    let (truth, rec) = (load_mask(p.join("data/masks/00000.pgm")).unwrap(), load_mask(p.join("r.pgm")).unwrap());
    let inter = truth.data.iter().zip(&rec.data).filter(|(a, b)| **a && **b).count();
    let dice = 2.0 * inter as f64 / (truth.count() + rec.count()) as f64;
    assert!(dice >= 0.95, "dice {dice}");
}

#[test]
fn augment_writes_expected_count() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &with_small(&["synth-gen", "--out", "data"]));
    ok(p, &["augment", "--data", "data", "--out", "aug"]);
    assert_eq!(fs::read_dir(p.join("aug/masks")).unwrap().count(), 15);
}

#[test]
fn eval_and_compare_csv_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &with_small(&["synth-gen", "--out", "data"]));
    let out = ok(p, &["eval", "--pred", "data/masks", "--truth", "data/masks"]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "name,dice,jaccard,precision,sensitivity,md,assd");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("00000,1,1,1,1,0,0"));
    assert!(lines[4].starts_with("mean±std,1.0000±0.0000"));
    fs::write(p.join("a.csv"), &text).unwrap();

    ok(p, &["compare", "--a", "a.csv", "--b", "a.csv", "--out", "cmp.csv"]);
    let cmp = fs::read_to_string(p.join("cmp.csv")).unwrap();
    let rows: Vec<&str> = cmp.lines().collect();
    assert_eq!(rows[0], "metric,W,p");
    assert_eq!(rows.len(), 7);
    assert!(rows[1..].iter().all(|r| r.ends_with(",0,1")), "{cmp}");
}

#[test]
fn train_predict_and_rerun_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let net = [
        "--set", "encoder=2,3,3", "--set", "deconv=4,3,2", "--set", "head=2", "--set", "pixel_width=3",
        "--set", "steps=6", "--set", "batch=2", "--set", "augment=false",
    ];
    for out in ["m1.bnet", "m2.bnet"] {
        let trace = out.replace("bnet", "csv");
        let mut args = with_small(&["train", "--out", out, "--trace", &trace]);
        args.extend_from_slice(&net);
        ok(p, &args);
    }
    assert_eq!(fs::read(p.join("m1.bnet")).unwrap(), fs::read(p.join("m2.bnet")).unwrap());
    let trace = fs::read_to_string(p.join("m1.csv")).unwrap();
    assert_eq!(trace, fs::read_to_string(p.join("m2.csv")).unwrap());
    assert_eq!(trace.lines().count(), 8);
    assert!(trace.lines().nth(7).unwrap().starts_with("6,0,1,"));

    ok(p, &with_small(&["synth-gen", "--out", "data"]));
    ok(p, &["predict", "--model", "m1.bnet", "--image", "data/images/00001.pgm", "--out", "d.dmap", "--mask-out", "m.pgm"]);
    let d = load_dmap(p.join("d.dmap")).unwrap();
    assert_eq!((d.width, d.height), (32, 32));
    assert!(d.data.iter().all(|&v| v > 0.0 && v <= 1.0));
    assert_eq!(load_mask(p.join("m.pgm")).unwrap().width, 32);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("run.cfg"), "# small\nsize = 16\nn_train = 2\n").unwrap();
    ok(p, &["synth-gen", "--config", "run.cfg", "--set", "n_train=4", "--out", "d"]);
    assert_eq!(fs::read_dir(p.join("d/images")).unwrap().count(), 4);
    assert_eq!(load_pgm(p.join("d/images/00000.pgm")).unwrap().width, 16);

    fs::write(p.join("bad.cfg"), "size = 16\nsteps\n").unwrap();
    let out = bdseg(p, &["synth-gen", "--config", "bad.cfg", "--out", "e"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"));
}
