//! `promptvoc`: feature extraction, training, resynthesis, conversion and evaluation.
//!
//! Results go to stdout as one JSON object per line; diagnostics go to stderr.
//! Exit codes: 0 success, 1 usage, 2 data/format, 3 numeric.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use promptvoc_core::checkpoint::Archive;
use promptvoc_core::config::Config;
use promptvoc_core::data::{build_manifest, toy_corpus, write_toy_corpus, Manifest, ManifestEntry, ToyConfig};
use promptvoc_core::dsp::{load_wav, write_wav, WavEncoding, Waveform};
use promptvoc_core::features::{read_feature_file, write_feature_file, write_token_file, FeatureMatrix};
use promptvoc_core::frontend::Frontend;
use promptvoc_core::generator::Generator;
use promptvoc_core::model::{Analysis, Critic};
use promptvoc_core::nn::params::ParamStore;
use promptvoc_core::trainer::{latest_checkpoint, Trainer};
use promptvoc_core::vc::{eval_pcorr, secs, VoiceModel};
use promptvoc_core::Error;

#[derive(Parser, Debug)]
#[command(name = "promptvoc", version, about = "Prompted discrete-token vocoder")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Config file (`section.key = value` lines, optional leading `preset = desk|paper`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model checkpoint (or a fitted tokenizer archive where only analysis is needed).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded kernels and `train.deterministic = true`.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Extra `section.key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the content tokenizer and prompt projection on a directory of wavs.
    FitTokenizer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write token (`.tok`) and prompt feature (`.ftr`) files for a wav or a directory of wavs.
    ExtractFeatures {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a directory of wavs; `--checkpoint` resumes, a directory resumes from its latest step.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fitted tokenizer archive; fitted from the corpus when absent.
        #[arg(long)]
        analysis: Option<PathBuf>,
        /// Total steps (defaults to `train.steps`).
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Re-render a wav, prompted by itself or by `--prompt`.
    Resynth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Content from `--source`, voice from `--reference`.
    Convert {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pitch correlation between a source and a converted wav.
    EvalPcorr {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        converted: PathBuf,
    },
    /// Cosine similarity of two speaker embeddings stored as feature files (rows are averaged).
    EvalSecs {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Trainable parameter counts of the configured model.
    CountParams,
    /// Print the effective config.
    DumpConfig,
    /// Write the synthetic multi-speaker corpus (`train/`, `heldout/`) to a directory.
    ToyCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        speakers: usize,
        #[arg(long, default_value_t = 8)]
        per_speaker: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(Error::Config(_)) => 1,
            Failure::Core(e) if e.is_numeric_error() => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type Out = Result<(), Failure>;

fn emit(v: Value) {
    println!("{v}");
}

fn config(g: &Global) -> Result<Config, Failure> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::desk(),
    };
    apply_overrides(&mut cfg, g)?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut Config, g: &Global) -> Result<(), Failure> {
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = g.seed {
        cfg.train.seed = s;
    }
    if g.deterministic {
        cfg.train.deterministic = true;
    }
    cfg.validate()?;
    Ok(())
}

fn need_checkpoint(g: &Global) -> Result<&Path, Failure> {
    g.checkpoint
        .as_deref()
        .ok_or_else(|| Failure::Usage("this command needs --checkpoint PATH".into()))
}

fn wav_paths(input: &Path) -> Result<Vec<PathBuf>, Failure> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let m = build_manifest(input, 0.0, f64::INFINITY)?;
    Ok(m.entries.into_iter().map(|e| e.audio_path).collect())
}

fn corpus(cfg: &Config, dir: &Path) -> Result<(Manifest, Vec<(String, Waveform)>), Failure> {
    let m = build_manifest(dir, cfg.data.min_s, cfg.data.max_s)?;
    let waves = m
        .entries
        .iter()
        .map(|e| Ok((e.id.clone(), load_wav(&e.audio_path, cfg.mel.sample_rate)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    Ok((m, waves))
}

/// Analysis plus the config it was fitted under.
fn load_analysis(path: &Path) -> Result<(Config, Analysis), Failure> {
    let a = Archive::load(path)?;
    let cfg = Config::parse(a.meta("config")?)?;
    let analysis = Analysis::from_archive(&a, &cfg)?;
    Ok((cfg, analysis))
}

fn fit_tokenizer(g: &Global, input: &Path, out: &Path) -> Out {
    let cfg = config(g)?;
    let (_, named) = corpus(&cfg, input)?;
    let waves: Vec<Waveform> = named.into_iter().map(|(_, w)| w).collect();
    let analysis = Analysis::fit(&waves, &cfg)?;
    let mut a = Archive::new();
    analysis.to_archive(&mut a)?;
    a.meta.insert("config".into(), cfg.dump());
    a.save(out)?;
    emit(json!({
        "command": "fit-tokenizer",
        "out": out.display().to_string(),
        "utterances": waves.len(),
        "groups": analysis.tokenizer.groups(),
        "prompt_dim": analysis.extractor.dim(),
    }));
    Ok(())
}

fn extract_features(g: &Global, input: &Path, out: &Path) -> Out {
    let (cfg, analysis) = load_analysis(need_checkpoint(g)?)?;
    fs::create_dir_all(out).map_err(Error::from)?;
    let mut entries = Vec::new();
    for p in wav_paths(input)? {
        let w = load_wav(&p, cfg.mel.sample_rate)?;
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("utt").to_string();
        let tokens = analysis.tokens(&w)?;
        let prompt = analysis.prompt(&w)?;
        let tok_path = out.join(format!("{stem}.tok"));
        let ftr_path = out.join(format!("{stem}.ftr"));
        write_token_file(&tok_path, &tokens)?;
        write_feature_file(
            &ftr_path,
            &FeatureMatrix::new(prompt.n_frames(), prompt.dim(), prompt.values().to_vec())?,
        )?;
        emit(json!({
            "command": "extract-features",
            "id": stem,
            "frames": tokens.n_frames(),
            "tokens": tok_path.display().to_string(),
            "prompt": ftr_path.display().to_string(),
        }));
        entries.push(ManifestEntry {
            id: stem,
            duration_s: w.duration_s(),
            audio_path: p,
            tokens_path: Some(tok_path),
            prompt_path: Some(ftr_path),
        });
    }
    Manifest { entries }.write(out.join("manifest.tsv"))?;
    Ok(())
}

fn train(g: &Global, input: &Path, out: &Path, analysis: Option<&Path>, steps: Option<u64>) -> Out {
    fs::create_dir_all(out).map_err(Error::from)?;
    let resume_from = match &g.checkpoint {
        Some(p) if p.is_dir() => latest_checkpoint(p)?,
        Some(p) => Some(p.clone()),
        None => None,
    };
    let mut tr = match resume_from {
        Some(ckpt) => {
            let a = Archive::load(&ckpt)?;
            let mut cfg = Config::parse(a.meta("config")?)?;
            apply_overrides(&mut cfg, g)?;
            let (_, named) = corpus(&cfg, input)?;
            let mut tr = Trainer::resume(&ckpt, &named)?;
            tr.cfg = cfg;
            tr
        }
        None => {
            let cfg = config(g)?;
            let (_, named) = corpus(&cfg, input)?;
            let analysis = match analysis {
                Some(p) => load_analysis(p)?.1,
                None => {
                    let waves: Vec<Waveform> = named.iter().map(|(_, w)| w.clone()).collect();
                    Analysis::fit(&waves, &cfg)?
                }
            };
            Trainer::new(cfg, analysis, &named)?
        }
    };
    let until = steps.unwrap_or(tr.cfg.train.steps);
    let log = out.join("metrics.jsonl");
    let start = tr.step;
    let metrics = tr.run(until, Some(&log), Some(out))?;
    let last = metrics.last();
    emit(json!({
        "command": "train",
        "start_step": start,
        "step": tr.step,
        "checkpoint": latest_checkpoint(out)?.map(|p| p.display().to_string()),
        "metrics_log": log.display().to_string(),
        "final": last.map(|m| serde_json::to_value(m).unwrap_or(Value::Null)),
    }));
    Ok(())
}

fn load_model(g: &Global) -> Result<VoiceModel, Failure> {
    let mut m = VoiceModel::load(need_checkpoint(g)?)?;
    if !g.overrides.is_empty() || g.seed.is_some() || g.deterministic {
        apply_overrides(&mut m.cfg, g)?;
    }
    Ok(m)
}

fn write_out(path: &Path, w: &Waveform) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    write_wav(path, w, WavEncoding::Float32)?;
    Ok(())
}

fn resynth(g: &Global, input: &Path, prompt: Option<&Path>, out: &Path) -> Out {
    let m = load_model(g)?;
    let src = load_wav(input, m.sample_rate())?;
    let p = prompt.map(|p| load_wav(p, m.sample_rate())).transpose()?;
    let w = m.resynthesize(&src, p.as_ref())?;
    write_out(out, &w)?;
    emit(json!({
        "command": "resynth",
        "out": out.display().to_string(),
        "samples": w.len(),
        "duration_s": w.duration_s(),
    }));
    Ok(())
}

fn convert(g: &Global, source: &Path, reference: &Path, out: &Path) -> Out {
    let m = load_model(g)?;
    let src = load_wav(source, m.sample_rate())?;
    let r = load_wav(reference, m.sample_rate())?;
    let w = m.convert(&src, &r)?;
    write_out(out, &w)?;
    emit(json!({
        "command": "convert",
        "out": out.display().to_string(),
        "samples": w.len(),
        "duration_s": w.duration_s(),
    }));
    Ok(())
}

fn eval_pcorr_cmd(g: &Global, source: &Path, converted: &Path) -> Out {
    let cfg = config(g)?;
    let a = load_wav(source, cfg.mel.sample_rate)?;
    let b = load_wav(converted, cfg.mel.sample_rate)?;
    let r = eval_pcorr(&a, &b, cfg.vc.f0_min, cfg.vc.f0_max)?;
    emit(json!({
        "command": "eval-pcorr",
        "source": source.display().to_string(),
        "converted": converted.display().to_string(),
        "pcorr": r,
    }));
    Ok(())
}

fn pooled(m: &FeatureMatrix) -> Result<Vec<f32>, Failure> {
    if m.rows == 0 {
        return Err(Error::EmptyInput("embedding file").into());
    }
    let mut acc = vec![0.0f64; m.cols];
    for r in 0..m.rows {
        for (a, v) in acc.iter_mut().zip(m.row(r)) {
            *a += *v as f64;
        }
    }
    Ok(acc.into_iter().map(|a| (a / m.rows as f64) as f32).collect())
}

fn eval_secs(a: &Path, b: &Path) -> Out {
    let ea = pooled(&read_feature_file(a)?)?;
    let eb = pooled(&read_feature_file(b)?)?;
    let s = secs(&ea, &eb)?;
    emit(json!({
        "command": "eval-secs",
        "a": a.display().to_string(),
        "b": b.display().to_string(),
        "secs": s,
    }));
    Ok(())
}

fn count_params(g: &Global) -> Out {
    let cfg = config(g)?;
    let mut store = ParamStore::shapes_only();
    {
        let mut root = store.root();
        Frontend::new(&mut root.pp("frontend"), &cfg.frontend)?;
        Generator::new(&mut root.pp("generator"), &cfg.generator)?;
    }
    let critic = Critic::new(&cfg, 0)?;
    emit(json!({
        "command": "count-params",
        "preset": cfg.preset,
        "frontend": store.num_params_with_prefix("frontend."),
        "generator": store.num_params_with_prefix("generator."),
        "total": store.num_params(),
        "discriminators": critic.store.num_params(),
    }));
    Ok(())
}

fn dump_config(g: &Global) -> Out {
    let cfg = match &g.checkpoint {
        Some(p) => {
            let a = Archive::load(p)?;
            let mut cfg = Config::parse(a.meta("config")?)?;
            apply_overrides(&mut cfg, g)?;
            cfg
        }
        None => config(g)?,
    };
    print!("{}", cfg.dump());
    Ok(())
}

fn toy(out: &Path, speakers: usize, per_speaker: usize) -> Out {
    let tc = ToyConfig {
        n_speakers: speakers,
        train_per_speaker: per_speaker,
        ..ToyConfig::default()
    };
    let c = toy_corpus(&tc)?;
    let (train, heldout) = write_toy_corpus(&c, out)?;
    train.write(out.join("train.tsv"))?;
    heldout.write(out.join("heldout.tsv"))?;
    emit(json!({
        "command": "toy-corpus",
        "out": out.display().to_string(),
        "train": train.len(),
        "heldout": heldout.len(),
        "speakers": c.speakers.iter().map(|s| json!({"index": s.index, "f0_hz": s.f0_hz, "tilt": s.tilt})).collect::<Vec<_>>(),
    }));
    Ok(())
}

fn run(cli: Cli) -> Out {
    let g = &cli.global;
    if g.deterministic {
        // Fixed summation order in the parallel kernels.
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    match &cli.cmd {
        Command::FitTokenizer { input, out } => fit_tokenizer(g, input, out),
        Command::ExtractFeatures { input, out } => extract_features(g, input, out),
        Command::Train { input, out, analysis, steps } => train(g, input, out, analysis.as_deref(), *steps),
        Command::Resynth { input, prompt, out } => resynth(g, input, prompt.as_deref(), out),
        Command::Convert { source, reference, out } => convert(g, source, reference, out),
        Command::EvalPcorr { source, converted } => eval_pcorr_cmd(g, source, converted),
        Command::EvalSecs { a, b } => eval_secs(a, b),
        Command::CountParams => count_params(g),
        Command::DumpConfig => dump_config(g),
        Command::ToyCorpus { out, speakers, per_speaker } => toy(out, *speakers, *per_speaker),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
