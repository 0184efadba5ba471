//! Adversarial training: a discriminator update, then a generator update, per step.

pub mod optim;

use std::cell::RefCell;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Archive;
use crate::config::Config;
use crate::data::{collate, crop, make_training_example, pack_batches, Batch, TrainingExample, Utterance, FRAME_HOP};
use crate::disc::{aux_weight, feature_matching_loss, lsgan_d_loss, lsgan_g_loss};
use crate::dsp::audio::Waveform;
use crate::error::{Error, Result};
use crate::model::{Analysis, Critic, Vocoder};
use crate::nn::layers::{global_norm, Ctx};
use crate::nn::mel::MelTransform;
use crate::nn::params::ParamStore;

pub use optim::AdamW;

/// Loss terms and optimizer diagnostics of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Step index the update was computed at (0-based).
    pub step: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub feat_match: f64,
    pub mel: f64,
    pub aux_mel: f64,
    pub aux_weight: f64,
    pub g_total: f64,
    pub grad_norm_d: f64,
    pub grad_norm_g: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

impl Metrics {
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("d_loss", self.d_loss),
            ("g_adv", self.g_adv),
            ("feat_match", self.feat_match),
            ("mel", self.mel),
            ("aux_mel", self.aux_mel),
            ("g_total", self.g_total),
        ]
    }
}

/// SplitMix64 finalizer over two words; used to derive per-step and per-utterance seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn finite(name: &str, v: f64, step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("loss term {name} = {v} at step {step}")))
    }
}

/// Mean absolute difference over valid frames; `mask` is `(batch, frames)`.
pub fn masked_mel_l1(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (_, n_mels, _) = pred.dims3()?;
    let m = mask.unsqueeze(1)?.broadcast_as(pred.shape())?;
    let num = (pred - target)?.abs()?.mul(&m)?.sum_all()?;
    let den = (mask.sum_all()?.affine(n_mels as f64, 0.0)?).clamp(1.0, f64::MAX)?;
    Ok(num.div(&den)?)
}

fn sample_mask(frame_mask: &Tensor) -> Result<Tensor> {
    let (b, t) = frame_mask.dims2()?;
    Ok(frame_mask.unsqueeze(2)?.broadcast_as((b, t, FRAME_HOP))?.reshape((b, t * FRAME_HOP))?)
}

fn frames_are_full(batch: &Batch) -> bool {
    let t = batch.max_frames();
    batch.frames.iter().all(|&f| f == t)
}

/// Generator, discriminators, optimizers and the data they train on.
pub struct Trainer {
    pub cfg: Config,
    pub analysis: Analysis,
    pub vocoder: Vocoder,
    pub critic: Critic,
    pub opt_g: AdamW,
    pub opt_d: AdamW,
    /// Completed steps.
    pub step: u64,
    utterances: Vec<Utterance>,
    mel: MelTransform,
    epoch_cache: RefCell<Option<(u64, Vec<Vec<TrainingExample>>)>>,
}

impl Trainer {
    /// Fresh models; `corpus` is tokenized and featurized up front.
    pub fn new(cfg: Config, analysis: Analysis, corpus: &[(String, Waveform)]) -> Result<Self> {
        cfg.validate()?;
        let utterances = prepare(&analysis, corpus)?;
        let seed = cfg.train.seed;
        let vocoder = Vocoder::new(&cfg, mix_seed(seed, 1))?;
        let critic = Critic::new(&cfg, mix_seed(seed, 2))?;
        let mel = MelTransform::new(&cfg.mel, &Device::Cpu)?;
        let t = &cfg.train;
        Ok(Self {
            opt_g: AdamW::new(t.beta1, t.beta2, t.weight_decay),
            opt_d: AdamW::new(t.beta1, t.beta2, t.weight_decay),
            cfg,
            analysis,
            vocoder,
            critic,
            step: 0,
            utterances,
            mel,
            epoch_cache: RefCell::new(None),
        })
    }

    /// Rebuilds the full training state stored by [`Trainer::save`].
    pub fn resume(path: impl AsRef<Path>, corpus: &[(String, Waveform)]) -> Result<Self> {
        let a = Archive::load(path)?;
        let cfg = Config::parse(a.meta("config")?)?;
        let analysis = Analysis::from_archive(&a, &cfg)?;
        let mut tr = Self::new(cfg, analysis, corpus)?;
        tr.load_archive(&a)?;
        Ok(tr)
    }

    fn load_archive(&mut self, a: &Archive) -> Result<()> {
        let dev = Device::Cpu;
        self.vocoder.store.load(&a.with_prefix("g.", &dev)?)?;
        self.critic.store.load(&a.with_prefix("d.", &dev)?)?;
        self.opt_g.load_archive("opt_g.", a)?;
        self.opt_d.load_archive("opt_d.", a)?;
        self.step = a.meta("step")?.parse().map_err(|_| Error::Format("step metadata".into()))?;
        Ok(())
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::new();
        a.insert_all("g.", &self.vocoder.store.snapshot()?)?;
        a.insert_all("d.", &self.critic.store.snapshot()?)?;
        self.opt_g.to_archive("opt_g.", &mut a)?;
        self.opt_d.to_archive("opt_d.", &mut a)?;
        self.analysis.to_archive(&mut a)?;
        a.meta.insert("step".into(), self.step.to_string());
        a.meta.insert("config".into(), self.cfg.dump());
        Ok(a)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    fn epoch_groups(&self, epoch: u64) -> Result<Vec<Vec<TrainingExample>>> {
        let seed = self.cfg.train.seed;
        let data = &self.cfg.data;
        let sampler = data.sampler();
        let mut order: Vec<usize> = (0..self.utterances.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch)));
        let mut examples = Vec::with_capacity(order.len());
        for &i in &order {
            // Each utterance owns its stream, so examples do not depend on batch composition.
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ i as u64, epoch.wrapping_add(0x1000)));
            let ex = make_training_example(&self.utterances[i], &sampler, data.target, &mut rng)?;
            examples.push(crop(&ex, data.segment_frames, &mut rng));
        }
        let chunk = if data.batch_size == 0 { examples.len() } else { data.batch_size };
        let mut groups = Vec::new();
        for part in examples.chunks(chunk) {
            let durations: Vec<f64> = part.iter().map(TrainingExample::duration_s).collect();
            for g in pack_batches(&durations, data.batch_seconds)? {
                groups.push(g.into_iter().map(|i| part[i].clone()).collect());
            }
        }
        Ok(groups)
    }

    /// Batches are fixed by `(seed, step)` alone, so resumed runs see the same data.
    pub fn batch_for_step(&self, step: u64) -> Result<Batch> {
        let per_epoch = self.steps_per_epoch()?;
        let epoch = step / per_epoch;
        let pos = (step % per_epoch) as usize;
        let mut cache = self.epoch_cache.borrow_mut();
        if cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            *cache = Some((epoch, self.epoch_groups(epoch)?));
        }
        let groups = &cache.as_ref().expect("filled above").1;
        let members: Vec<&TrainingExample> = groups[pos % groups.len()].iter().collect();
        collate(&members, self.analysis.tokenizer.codebooks(), &Device::Cpu)
    }

    pub fn steps_per_epoch(&self) -> Result<u64> {
        if self.utterances.is_empty() {
            return Err(Error::EmptyInput("training utterances"));
        }
        let bs = self.cfg.data.batch_size;
        if bs > 0 {
            Ok(self.utterances.len().div_ceil(bs) as u64)
        } else {
            let cache = self.epoch_cache.borrow();
            match cache.as_ref() {
                Some((_, g)) => Ok(g.len() as u64),
                None => {
                    drop(cache);
                    Ok(self.epoch_groups(0)?.len() as u64)
                }
            }
        }
    }

    /// Learning rates at `step`, decayed once per epoch (or every `decay_every` steps).
    pub fn learning_rates(&self, step: u64) -> Result<(f64, f64)> {
        let t = &self.cfg.train;
        let period = if t.decay_every > 0 { t.decay_every } else { self.steps_per_epoch()? };
        let f = t.lr_decay.powi((step / period) as i32);
        Ok((t.lr_g * f, t.lr_d * f))
    }

    /// Generator forward on a batch with padded samples zeroed.
    fn generate(&self, batch: &Batch, ctx: &Ctx) -> Result<(Tensor, Tensor)> {
        let out = self.vocoder.forward(
            &batch.content,
            Some(&batch.content_mask),
            &batch.prompt,
            &batch.prompt_mask,
            &batch.speaker,
            ctx,
        )?;
        let wave = if frames_are_full(batch) {
            out.wave
        } else {
            out.wave.mul(&sample_mask(&batch.content_mask)?)?
        };
        Ok((wave, out.frontend.mel_pred))
    }

    /// One discriminator update against `fake` (detached here). Returns `(loss, grad norm)`.
    pub fn discriminator_step(&mut self, real: &Tensor, fake: &Tensor, lr: f64) -> Result<(f64, f64)> {
        let r = self.critic.forward(real)?;
        let f = self.critic.forward(&fake.detach())?;
        let loss = lsgan_d_loss(&r.scores, &f.scores)?;
        let v = finite("d_loss", scalar(&loss)?, self.step)?;
        let grads = loss.backward()?;
        let norm = grad_norm(&self.critic.store, &grads)?;
        self.opt_d.step(&self.critic.store, &grads, lr)?;
        Ok((v, norm))
    }

    /// One full training step on `batch`.
    pub fn train_step(&mut self, batch: &Batch) -> Result<Metrics> {
        let step = self.step;
        let (lr_g, lr_d) = self.learning_rates(step)?;
        let ctx = Ctx::train(mix_seed(self.cfg.train.seed, step ^ 0xd0d0));
        let (fake, mel_pred) = self.generate(batch, &ctx)?;
        let real = &batch.target;
        let (d_loss, grad_norm_d) = self.discriminator_step(real, &fake, lr_d)?;

        let w = &self.cfg.loss;
        let r = self.critic.forward(real)?;
        let f = self.critic.forward(&fake)?;
        let adv = lsgan_g_loss(&f.scores)?;
        let fm = feature_matching_loss(&r.feats, &f.feats)?;
        let real_mel = self.mel.forward(real)?.detach();
        let mel = masked_mel_l1(&self.mel.forward(&fake)?, &real_mel, &batch.content_mask)?;
        let aux = masked_mel_l1(&mel_pred, &real_mel, &batch.content_mask)?;
        let aw = aux_weight(step, w);
        let total = (adv.affine(w.adv, 0.0)?
            + fm.affine(w.feat_match, 0.0)?
            + mel.affine(w.mel, 0.0)?
            + aux.affine(aw, 0.0)?)?;
        let g_adv = finite("g_adv", scalar(&adv)?, step)?;
        let feat_match = finite("feat_match", scalar(&fm)?, step)?;
        let mel_v = finite("mel", scalar(&mel)?, step)?;
        let aux_v = finite("aux_mel", scalar(&aux)?, step)?;
        let g_total = finite("g_total", scalar(&total)?, step)?;
        let grads = total.backward()?;
        let grad_norm_g = grad_norm(&self.vocoder.store, &grads)?;
        if !grad_norm_g.is_finite() {
            return Err(Error::NonFinite(format!("generator gradient norm at step {step}")));
        }
        self.opt_g.step(&self.vocoder.store, &grads, lr_g)?;
        self.step += 1;
        Ok(Metrics {
            step,
            d_loss,
            g_adv,
            feat_match,
            mel: mel_v,
            aux_mel: aux_v,
            aux_weight: aw,
            g_total,
            grad_norm_d,
            grad_norm_g,
            lr_g,
            lr_d,
        })
    }

    /// Runs until `until` completed steps, appending one JSON record per step
    /// to `log` and checkpointing every `checkpoint_every` steps into `ckpt_dir`.
    pub fn run(&mut self, until: u64, log: Option<&Path>, ckpt_dir: Option<&Path>) -> Result<Vec<Metrics>> {
        let mut writer = match log {
            Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
            None => None,
        };
        let every = self.cfg.train.checkpoint_every;
        let mut out = Vec::new();
        while self.step < until {
            let batch = self.batch_for_step(self.step)?;
            let m = self.train_step(&batch)?;
            if let Some(w) = writer.as_mut() {
                let line = serde_json::to_string(&m).map_err(|e| Error::Format(e.to_string()))?;
                writeln!(w, "{line}")?;
            }
            out.push(m);
            if let Some(dir) = ckpt_dir {
                if (every > 0 && self.step % every == 0) || self.step == until {
                    self.save(checkpoint_path(dir, self.step))?;
                }
            }
        }
        Ok(out)
    }
}

fn grad_norm(store: &ParamStore, grads: &candle_core::backprop::GradStore) -> Result<f64> {
    global_norm(store.vars().filter_map(|(_, v)| grads.get(v.as_tensor())))
}

/// Tokens and prompt features for each named waveform.
pub fn prepare(analysis: &Analysis, corpus: &[(String, Waveform)]) -> Result<Vec<Utterance>> {
    corpus
        .iter()
        .map(|(id, w)| {
            Ok(Utterance {
                id: id.clone(),
                wave: w.clone(),
                tokens: Some(analysis.tokens(w)?),
                prompt: Some(analysis.prompt(w)?),
            })
        })
        .collect()
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:08}.safetensors"))
}

/// Most recent `step_*.safetensors` in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<PathBuf> = None;
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("step_") && name.ends_with(".safetensors") && best.as_ref().is_none_or(|b| p > *b) {
            best = Some(p);
        }
    }
    Ok(best)
}

pub fn read_metrics_log(path: impl AsRef<Path>) -> Result<Vec<Metrics>> {
    BufReader::new(File::open(path)?)
        .lines()
        .map(|l| serde_json::from_str(&l?).map_err(|e| Error::Format(format!("metrics log: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{toy_corpus, ToyConfig};
    use crate::nn::layers::to_f32_vec;

    fn tiny(mutate: impl Fn(&mut Config)) -> (Config, Analysis, Vec<(String, Waveform)>) {
        let mut cfg = Config::desk();
        cfg.tokenizer.max_iter = 3;
        cfg.data.batch_size = 2;
        cfg.data.segment_frames = 16;
        mutate(&mut cfg);
        let corpus = toy_corpus(&ToyConfig {
            n_speakers: 2,
            train_per_speaker: 2,
            heldout_per_speaker: 0,
            ..ToyConfig::default()
        })
        .unwrap();
        let waves: Vec<Waveform> = corpus.train.iter().map(|u| u.wave.clone()).collect();
        let analysis = Analysis::fit(&waves, &cfg).unwrap();
        let named = corpus.train.iter().map(|u| (u.id.clone(), u.wave.clone())).collect();
        (cfg, analysis, named)
    }

    fn flat(store: &ParamStore) -> Vec<(String, Vec<f32>)> {
        store.snapshot().unwrap().iter().map(|(k, t)| (k.clone(), to_f32_vec(t).unwrap())).collect()
    }

    #[test]
    fn fresh_runs_and_resumed_runs_agree() {
        let (cfg, analysis, named) = tiny(|_| {});
        let dir = tempfile::tempdir().unwrap();
        let mut a = Trainer::new(cfg.clone(), analysis.clone(), &named).unwrap();
        let full = a.run(3, None, None).unwrap();
        assert_eq!(a.step, 3);
        assert!(full.iter().all(|m| m.terms().iter().all(|(_, v)| v.is_finite())));

        let mut b = Trainer::new(cfg, analysis, &named).unwrap();
        let head = b.run(2, None, Some(dir.path())).unwrap();
        assert_eq!(head[..], full[..2]);
        let ckpt = latest_checkpoint(dir.path()).unwrap().unwrap();
        assert_eq!(ckpt, checkpoint_path(dir.path(), 2));

        let mut c = Trainer::resume(&ckpt, &named).unwrap();
        assert_eq!(c.step, 2);
        let tail = c.run(3, None, None).unwrap();
        assert_eq!(tail[..], full[2..]);
    }

    #[test]
    fn metrics_log_round_trips() {
        let (cfg, analysis, named) = tiny(|_| {});
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("m.jsonl");
        let mut t = Trainer::new(cfg, analysis, &named).unwrap();
        let m = t.run(1, Some(&log), None).unwrap();
        assert_eq!(read_metrics_log(&log).unwrap(), m);
    }

    #[test]
    fn discriminator_update_leaves_generator_untouched() {
        let (cfg, analysis, named) = tiny(|_| {});
        let mut t = Trainer::new(cfg, analysis, &named).unwrap();
        let batch = t.batch_for_step(0).unwrap();
        let g0 = flat(&t.vocoder.store);
        let d0 = flat(&t.critic.store);
        let fake = batch.target.affine(0.5, 0.0).unwrap();
        t.discriminator_step(&batch.target, &fake, 1e-3).unwrap();
        assert_eq!(flat(&t.vocoder.store), g0);
        assert_ne!(flat(&t.critic.store), d0);
    }

    #[test]
    fn aux_term_vanishes_after_warmup() {
        let (cfg, analysis, named) = tiny(|c| c.loss.aux_warmup_steps = 0);
        let mut t = Trainer::new(cfg.clone(), analysis, &named).unwrap();
        let b = t.batch_for_step(0).unwrap();
        let m = t.train_step(&b).unwrap();
        assert_eq!(m.aux_weight, 0.0);
        assert!(m.aux_mel > 0.0);
        let w = &cfg.loss;
        let expected = w.adv * m.g_adv + w.feat_match * m.feat_match + w.mel * m.mel;
        assert!((m.g_total - expected).abs() <= 1e-4 * expected.abs().max(1.0), "{} vs {expected}", m.g_total);
    }

    #[test]
    fn learning_rate_decays_per_epoch() {
        let (cfg, analysis, named) = tiny(|_| {});
        let t = Trainer::new(cfg.clone(), analysis, &named).unwrap();
        let per = t.steps_per_epoch().unwrap();
        let (g0, _) = t.learning_rates(0).unwrap();
        let (g1, _) = t.learning_rates(per).unwrap();
        assert_eq!(g0, cfg.train.lr_g);
        assert!((g1 - cfg.train.lr_g * cfg.train.lr_decay).abs() < 1e-15);
    }
}
