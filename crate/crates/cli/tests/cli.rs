use std::path::Path;
use std::process::{Command, Output};

use promptvoc_core::dsp::{read_wav, write_wav, WavEncoding, Waveform};
use promptvoc_core::features::{write_feature_file, FeatureMatrix};
use serde_json::Value;

fn promptvoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptvoc")).args(args).output().expect("spawn promptvoc")
}

fn records(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn dump_config_defaults_to_desk() {
    let out = promptvoc(&["dump-config"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("preset = desk"), "{text}");
}

#[test]
fn paper_preset_parameter_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("paper.cfg");
    std::fs::write(&cfg, "preset = paper\n").unwrap();
    let out = promptvoc(&["count-params", "--config", p(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = &records(&out)[0];
    let total = r["total"].as_u64().unwrap();
    assert!((30_000_000..=50_000_000).contains(&total), "{total}");
    assert_eq!(r["frontend"].as_u64().unwrap() + r["generator"].as_u64().unwrap(), total);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&promptvoc(&["no-such-command"])), 1);
    assert_eq!(code(&promptvoc(&["dump-config", "--set", "train.nope=1"])), 1);
    assert_eq!(code(&promptvoc(&["dump-config", "--set", "missing-equals"])), 1);
    assert_eq!(code(&promptvoc(&["resynth", "--input", "a.wav", "--out", "b.wav"])), 1);
    assert_eq!(code(&promptvoc(&["--help"])), 0);
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.safetensors");
    let out = promptvoc(&["resynth", "--checkpoint", p(&missing), "--input", "x.wav", "--out", "y.wav"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn secs_on_feature_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ftr");
    let b = dir.path().join("b.ftr");
    let z = dir.path().join("z.ftr");
    write_feature_file(&a, &FeatureMatrix::new(1, 3, vec![1.0, 2.0, -0.5]).unwrap()).unwrap();
    write_feature_file(&b, &FeatureMatrix::new(1, 3, vec![-1.0, -2.0, 0.5]).unwrap()).unwrap();
    write_feature_file(&z, &FeatureMatrix::new(1, 3, vec![0.0; 3]).unwrap()).unwrap();
    let out = promptvoc(&["eval-secs", "--a", p(&a), "--b", p(&a)]);
    assert_eq!(code(&out), 0);
    assert!((records(&out)[0]["secs"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let out = promptvoc(&["eval-secs", "--a", p(&a), "--b", p(&b)]);
    assert!((records(&out)[0]["secs"].as_f64().unwrap() + 1.0).abs() < 1e-9);
    assert_eq!(code(&promptvoc(&["eval-secs", "--a", p(&a), "--b", p(&z)])), 3);
}

#[test]
fn pcorr_of_silence_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s.wav");
    write_wav(&s, &Waveform::silence(24_000, 24_000), WavEncoding::Pcm16).unwrap();
    let out = promptvoc(&["eval-pcorr", "--source", p(&s), "--converted", p(&s)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn corpus_to_conversion_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    let out = promptvoc(&["toy-corpus", "--out", p(&corpus), "--speakers", "2", "--per-speaker", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(records(&out)[0]["train"], 4);

    let train_dir = corpus.join("train");
    let heldout_dir = corpus.join("heldout");
    let quick = ["--set", "tokenizer.max_iter=3", "--set", "train.checkpoint_every=1", "--deterministic"];
    let tok = root.join("tok.safetensors");
    let mut args = vec!["fit-tokenizer", "--input", p(&train_dir), "--out", p(&tok)];
    args.extend(quick);
    let out = promptvoc(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let feats = root.join("feats");
    let out = promptvoc(&["extract-features", "--checkpoint", p(&tok), "--input", p(&heldout_dir), "--out", p(&feats)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(records(&out).len(), 2);
    assert!(feats.join("manifest.tsv").is_file());

    let run = root.join("run");
    let mut args = vec![
        "train", "--input", p(&train_dir), "--out", p(&run), "--analysis", p(&tok), "--steps", "2",
    ];
    args.extend(quick);
    let out = promptvoc(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = &records(&out)[0];
    assert_eq!(r["step"], 2);
    let ckpt = r["checkpoint"].as_str().unwrap().to_string();

    // Resume from the run directory for one more step.
    let out = promptvoc(&["train", "--input", p(&train_dir), "--out", p(&run), "--checkpoint", p(&run), "--steps", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(records(&out)[0]["start_step"], 2);
    assert_eq!(records(&out)[0]["step"], 3);

    let mut held: Vec<_> = std::fs::read_dir(&heldout_dir).unwrap().map(|e| e.unwrap().path()).collect();
    held.sort();
    let src = held.iter().find(|f| p(f).contains("spk0_")).unwrap().clone();
    let refw = held.iter().find(|f| p(f).contains("spk1_")).unwrap().clone();
    let src_len = read_wav(&src).unwrap().len();
    let resynth = root.join("resynth.wav");
    let out = promptvoc(&["resynth", "--checkpoint", &ckpt, "--input", p(&src), "--out", p(&resynth)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let w = read_wav(&resynth).unwrap();
    assert_eq!(w.len(), src_len.div_ceil(240) * 240);
    assert!(w.samples().iter().all(|v| v.is_finite() && v.abs() <= 1.0));

    let conv = root.join("conv.wav");
    let out = promptvoc(&["convert", "--checkpoint", &ckpt, "--source", p(&src), "--reference", p(&refw), "--out", p(&conv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_wav(&conv).unwrap().len(), w.len());

    let short = root.join("short.wav");
    write_wav(&short, &read_wav(&refw).unwrap().slice(0, 12_000), WavEncoding::Float32).unwrap();
    let out = promptvoc(&["convert", "--checkpoint", &ckpt, "--source", p(&src), "--reference", p(&short), "--out", p(&conv)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("1 s"));
}
