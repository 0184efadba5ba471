//! Corpus manifests: one tab-separated record per utterance.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use crate::dsp::audio::wav_duration_s;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub audio_path: PathBuf,
    pub duration_s: f64,
    pub tokens_path: Option<PathBuf>,
    pub prompt_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

fn opt_path(s: &str) -> Option<PathBuf> {
    (s != "-" && !s.is_empty()).then(|| PathBuf::from(s))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("-".to_string(), |p| p.display().to_string())
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_duration_s(&self) -> f64 {
        self.entries.iter().map(|e| e.duration_s).sum()
    }

    /// Lines of `id <TAB> path <TAB> duration [<TAB> tokens <TAB> prompt]`; `-` marks a missing path.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.audio_path.display(),
                e.duration_s,
                show(&e.tokens_path),
                show(&e.prompt_path)
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 && cols.len() != 5 {
                return Err(Error::Format(format!("manifest line {}: expected 3 or 5 fields, got {}", n + 1, cols.len())));
            }
            let duration_s: f64 = cols[2]
                .parse()
                .map_err(|_| Error::Format(format!("manifest line {}: bad duration {:?}", n + 1, cols[2])))?;
            if !seen.insert(cols[0].to_string()) {
                return Err(Error::Format(format!("manifest line {}: duplicate id {}", n + 1, cols[0])));
            }
            entries.push(ManifestEntry {
                id: cols[0].to_string(),
                audio_path: PathBuf::from(cols[1]),
                duration_s,
                tokens_path: cols.get(3).and_then(|s| opt_path(s)),
                prompt_path: cols.get(4).and_then(|s| opt_path(s)),
            });
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_tsv())?)
    }
}

/// Scans `root` for `.wav` files and keeps those lasting `[min_s, max_s]` seconds.
pub fn build_manifest(root: impl AsRef<Path>, min_s: f64, max_s: f64) -> Result<Manifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Missing(format!("corpus directory {}", root.display())));
    }
    let mut paths: Vec<PathBuf> = WalkDir::new(root)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    let mut entries = Vec::new();
    for p in paths {
        let d = wav_duration_s(&p)?;
        if d < min_s || d > max_s {
            continue;
        }
        let id = p
            .strip_prefix(root)
            .unwrap_or(&p)
            .with_extension("")
            .to_string_lossy()
            .replace('\\', "/");
        entries.push(ManifestEntry {
            id,
            audio_path: p,
            duration_s: d,
            tokens_path: None,
            prompt_path: None,
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyInput("manifest: no utterances within the duration limits"));
    }
    Ok(Manifest { entries })
}
