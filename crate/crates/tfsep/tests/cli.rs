mod common;

use std::fs;

use common::{p, run, write_corpus, write_noise, TINY};
use tfsep::manifest::Manifest;

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn evaluate_without_checkpoint_names_the_flag() {
    let o = run(&["evaluate", "--manifest", "m.jsonl", "--out", "x"]);
    assert_ne!(o.status.code(), Some(0));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--checkpoint"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_user_error_naming_the_key() {
    let o = run(&["inspect", "--set", "separator.depth=3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("separator.depth"), "{}", stderr(&o));
}

#[test]
fn missing_manifest_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--manifest", p(&dir.path().join("none.jsonl")), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn inspect_default_config_reports_about_ten_million() {
    let o = run(&["inspect"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    let total: usize = out
        .lines()
        .find(|l| l.trim_start().starts_with("total"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert!((8_500_000..=11_500_000).contains(&total), "{total}");
    assert!(out.contains("separator.centers = 4"));
}

#[test]
fn mix_train_separate_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = write_corpus(&root.join("corpus"), 4, 2, 0.3, 16000);
    let noise = write_noise(&root.join("noise"), 2, 1.0, 8000);
    let data = root.join("data");

    let o = run(&["mix", "--corpus", p(&corpus), "--out", p(&data), "--count", "2", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest_path = data.join("train.jsonl");
    let first = fs::read(&manifest_path).unwrap();
    let m = Manifest::load(&manifest_path).unwrap();
    assert_eq!(m.records.len(), 2);
    assert_eq!(m.records[0].out_len, 2400);
    assert!(m.records.iter().all(|r| r.speakers[0] != r.speakers[1]));

    let o = run(&["mix", "--corpus", p(&corpus), "--out", p(&data), "--count", "2", "--seed", "5"]);
    assert!(o.status.success());
    assert_eq!(fs::read(&manifest_path).unwrap(), first);

    let run_dir = root.join("run");
    let mut args = vec!["train", "--manifest", p(&manifest_path), "--out", p(&run_dir), "--epochs", "1"];
    args.extend_from_slice(TINY);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = run_dir.join("best.ckpt");
    assert!(ckpt.exists() && run_dir.join("last.ckpt").exists());
    let log = fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    let entry: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(entry["epoch"], 1);
    assert_eq!(entry["step"], 2);
    for key in ["train_loss", "valid_loss", "valid_si_snr_i", "lr"] {
        assert!(entry[key].is_number(), "{key}");
    }
    let resolved = fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(resolved.contains("encoder.conv_channels = 8") && resolved.contains("train.epochs = 1"));

    let o = run(&["train", "--manifest", p(&manifest_path), "--out", p(&run_dir), "--resume", p(&run_dir.join("last.ckpt")), "--epochs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap().lines().count(), 2);

    let sep_dir = root.join("sep");
    let mix_wav = m.resolve(&m.records[0].mixture);
    let o = run(&["separate", "--checkpoint", p(&ckpt), "--input", p(&mix_wav), "--out", p(&sep_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for i in 1..=2 {
        let w = tfsep::wav::read(&sep_dir.join(format!("train00000_spk{i}.wav"))).unwrap();
        assert_eq!(w.len(), 2400);
    }

    let eval_a = root.join("eval_a");
    let eval_b = root.join("eval_b");
    for out in [&eval_a, &eval_b] {
        let o = run(&[
            "evaluate", "--checkpoint", p(&ckpt), "--manifest", p(&manifest_path), "--out", p(out),
            "--noise-dir", p(&noise), "--conditions", "clean,20",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ra = fs::read(eval_a.join("report.json")).unwrap();
    assert_eq!(ra, fs::read(eval_b.join("report.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["conditions"][1]["condition"], "20dB");
    let table = fs::read_to_string(eval_a.join("table.txt")).unwrap();
    assert!(table.contains("Time + Freq") && table.contains("20 dB"));

    let o = run(&["inspect", "--checkpoint", p(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn data_root_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("corpus"), 2, 1, 0.2, 8000);
    let out = dir.path().join("out");
    let o = common::bin()
        .env("TFSEP_DATA_ROOT", dir.path())
        .args(["mix", "--corpus", "corpus", "--out", p(&out), "--count", "3", "--split", "test"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let m = Manifest::load(&out.join("test.jsonl")).unwrap();
    assert!(!m.header.speaker_disjoint);
    assert_eq!(m.records.len(), 3);
}

#[test]
fn one_speaker_corpus_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("corpus"), 1, 3, 0.2, 8000);
    let o = run(&["mix", "--corpus", p(&dir.path().join("corpus")), "--out", p(&dir.path().join("o")), "--count", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("speakers"), "{}", stderr(&o));
}
