use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use gammaquant::imaging::{quantize_mosaic, write_pgm};
use gammaquant::quant::Lut;
use gammaquant::{BitDepth, ExperimentResult, QuantizerSpec, RawImage};

fn gquant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gquant"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gquant(args);
    assert!(
        out.status.success(),
        "gquant {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn export_lut_of_same_depth_linear_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lut.txt");
    ok(&[
        "export-lut",
        "--spec",
        r#"{"kind":"linear","bits":4}"#,
        "--in-bits",
        "4",
        "--out",
        p(&out),
    ]);
    let lut = Lut::read(&out).unwrap();
    let codes: Vec<u32> = lut.codes.iter().map(|c| c.0).collect();
    assert_eq!(codes, (0..16).collect::<Vec<_>>());
    assert!(fs::read_to_string(&out)
        .unwrap()
        .starts_with("lut v1 in_bits=4 out_bits=4 kind=linear"));
}

#[test]
fn gen_then_train_then_eval_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth.json");
    fs::write(&synth, r#"{"num_subjects": 2, "duration_s": 60}"#).unwrap();
    let exp = dir.path().join("exp.json");
    fs::write(&exp, r#"{"epochs": 3, "seeds": [0, 1], "bit_depths": [2]}"#).unwrap();
    let data = dir.path().join("data");
    let runs = dir.path().join("runs");

    let t = Instant::now();
    ok(&["gen", "--config", p(&synth), "--out", p(&data)]);
    assert!(data.join("manifest.json").exists());
    let out = ok(&[
        "train",
        "--config",
        p(&exp),
        "--data",
        p(&data),
        "--out",
        p(&runs),
    ]);
    assert!(
        t.elapsed() < Duration::from_secs(60),
        "took {:?}",
        t.elapsed()
    );
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("gamma_signed_per_axis"));

    let res = ExperimentResult::load(&runs.join("result.json")).unwrap();
    assert_eq!(res.format, "result v1");
    // two variants, one depth, two folds, two seeds
    assert_eq!(res.runs.len(), 8);
    assert_eq!(res.aggregates.len(), 2);
    let checkpoints: Vec<_> = fs::read_dir(runs.join("checkpoints")).unwrap().collect();
    assert_eq!(checkpoints.len(), 8);
    let traj = runs.join("trajectories/gamma_signed_per_axis_2bit_subject00_seed0.csv");
    let text = fs::read_to_string(traj).unwrap();
    assert_eq!(text.lines().next(), Some("epoch,unit,gamma,mu"));
    assert_eq!(text.lines().count(), 1 + 4 * 3);

    // the held-out subject scored from the checkpoint matches the training record
    let ck = runs.join("checkpoints/gamma_signed_per_axis_2bit_subject00_seed0.json");
    let report = dir.path().join("eval.json");
    ok(&[
        "eval",
        "--checkpoint",
        p(&ck),
        "--data",
        p(&data),
        "--out",
        p(&report),
    ]);
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let rec = res
        .runs
        .iter()
        .find(|r| r.variant == "gamma_signed_per_axis" && r.subject == "subject00" && r.seed == 0)
        .unwrap();
    assert_eq!(rep["macro_f1"].as_f64(), rec.macro_f1);
    assert_eq!(
        rep["confusion"],
        serde_json::to_value(&rec.confusion).unwrap()
    );

    let again = dir.path().join("again");
    ok(&[
        "train",
        "--config",
        p(&exp),
        "--data",
        p(&data),
        "--out",
        p(&again),
        "--jobs",
        "2",
    ]);
    assert_eq!(
        fs::read(runs.join("result.json")).unwrap(),
        fs::read(again.join("result.json")).unwrap()
    );

    let cmp = ok(&[
        "compare",
        "--result-a",
        p(&runs.join("result.json")),
        "--result-b",
        p(&again.join("result.json")),
    ]);
    let cmp = String::from_utf8(cmp.stdout).unwrap();
    assert!(cmp.contains("2-bit"));
    assert!(cmp.contains("A: linear") && cmp.contains("B: gamma_signed_per_axis"));
}

#[test]
fn quantize_pgm_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let codes: Vec<u16> = (0..64u32)
        .map(|i| (i.wrapping_mul(2654435761) % 4096) as u16)
        .collect();
    let raw = RawImage::new(8, 8, BitDepth::new(12).unwrap(), codes).unwrap();
    let input = dir.path().join("in.pgm");
    write_pgm(&raw, &input).unwrap();

    let spec = QuantizerSpec::gamma_unsigned(0.136, BitDepth::new(4).unwrap()).unwrap();
    let spec_file = dir.path().join("spec.json");
    fs::write(&spec_file, serde_json::to_string(&spec).unwrap()).unwrap();
    let cli_out = dir.path().join("cli.pgm");
    ok(&[
        "quantize",
        "--spec",
        p(&spec_file),
        "--in",
        p(&input),
        "--out",
        p(&cli_out),
    ]);

    let lib_out = dir.path().join("lib.pgm");
    write_pgm(&quantize_mosaic(&raw, &spec).unwrap(), &lib_out).unwrap();
    assert_eq!(fs::read(&cli_out).unwrap(), fs::read(&lib_out).unwrap());
    assert_eq!(
        fs::read("".to_owned() + p(&cli_out) + ".meta").unwrap(),
        fs::read("".to_owned() + p(&lib_out) + ".meta").unwrap()
    );
}

#[test]
fn quantize_csv_and_export_curves() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("rec.csv");
    fs::write(
        &input,
        "subject,timestamp,ax0,label\ns1,0,-1,a\ns1,0.02,0.1,b\ns1,0.04,1,a\n",
    )
    .unwrap();
    let out = dir.path().join("q.csv");
    let spec = r#"{"kind":"linear","bits":2,"domain":"signed"}"#;
    ok(&[
        "quantize",
        "--spec",
        spec,
        "--in",
        p(&input),
        "--out",
        p(&out),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let codes: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(codes, ["0", "2", "3"]);

    let curves = dir.path().join("curves.csv");
    ok(&[
        "curves",
        "--spec",
        r#"{"kind":"gamma_unsigned","bits":4,"gamma":0.3}"#,
        "--spec",
        r#"{"kind":"log","bits":4,"eps_log":0.000244140625}"#,
        "--samples",
        "11",
        "--out",
        p(&curves),
    ]);
    let text = fs::read_to_string(&curves).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 5);
}

#[test]
fn exit_codes_follow_the_contract() {
    assert_eq!(gquant(&["--help"]).status.code(), Some(0));
    assert_eq!(gquant(&["gen", "--bogus"]).status.code(), Some(1));
    assert_eq!(gquant(&["frobnicate"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = gquant(&[
        "export-lut",
        "--spec",
        p(&missing),
        "--out",
        p(&dir.path().join("l.txt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let bad = dir.path().join("bad.pgm");
    fs::write(&bad, b"P2\n2 2\n255\n0 0 0 0\n").unwrap();
    let out = gquant(&[
        "quantize",
        "--spec",
        r#"{"kind":"linear","bits":2}"#,
        "--in",
        p(&bad),
        "--out",
        p(&dir.path().join("o.pgm")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.pgm"));

    let out = gquant(&[
        "export-lut",
        "--spec",
        r#"{"kind":"linear","bits":2}"#,
        "--in-bits",
        "40",
        "--out",
        p(&dir.path().join("l.txt")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
