//! Trains the desk model on the synthetic corpus and prints per-step timing.
//!
//! cargo run --release -p promptvoc-core --example toy_train -- [steps]

use std::time::Instant;

use promptvoc_core::config::Config;
use promptvoc_core::data::{toy_corpus, ToyConfig};
use promptvoc_core::model::Analysis;
use promptvoc_core::trainer::Trainer;

fn main() -> promptvoc_core::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let mut cfg = Config::desk();
    for kv in std::env::args().skip(2) {
        if let Some((k, v)) = kv.split_once('=') {
            cfg.set(k, v)?;
        }
    }
    let corpus = toy_corpus(&ToyConfig::default())?;
    let waves: Vec<_> = corpus.train.iter().map(|u| u.wave.clone()).collect();
    let t0 = Instant::now();
    let analysis = Analysis::fit(&waves, &cfg)?;
    let named: Vec<_> = corpus.train.iter().map(|u| (u.id.clone(), u.wave.clone())).collect();
    let mut tr = Trainer::new(cfg, analysis, &named)?;
    println!(
        "setup {:.2}s, generator side {} params, critic {} params",
        t0.elapsed().as_secs_f64(),
        tr.vocoder.store.num_params(),
        tr.critic.store.num_params()
    );
    let t1 = Instant::now();
    let mut aux = Vec::new();
    for _ in 0..steps {
        let b = tr.batch_for_step(tr.step)?;
        let m = tr.train_step(&b)?;
        aux.push(m.aux_mel);
        if m.step % 10 == 0 || m.step + 1 == steps {
            println!(
                "step {:5} d {:.3} adv {:.3} fm {:.3} mel {:.3} aux {:.3} ({:.3}s/step)",
                m.step,
                m.d_loss,
                m.g_adv,
                m.feat_match,
                m.mel,
                m.aux_mel,
                t1.elapsed().as_secs_f64() / (m.step + 1) as f64
            );
        }
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    let k = aux.len().min(100);
    println!("aux first {k}: {:.4}, last {k}: {:.4}", mean(&aux[..k]), mean(&aux[aux.len() - k..]));
    Ok(())
}
