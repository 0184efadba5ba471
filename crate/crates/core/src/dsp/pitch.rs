//! Normalized-autocorrelation pitch tracking and the pitch-correlation metric.

use crate::dsp::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PitchConfig {
    pub f0_min: f64,
    pub f0_max: f64,
    /// Analysis window length in seconds.
    pub window_s: f64,
    /// Frame hop in seconds.
    pub hop_s: f64,
    /// Minimum normalized autocorrelation peak for a frame to count as voiced.
    pub threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            f0_min: 50.0,
            f0_max: 600.0,
            window_s: 0.025,
            hop_s: 0.010,
            threshold: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    /// Per-frame estimate in Hz; 0 marks an unvoiced frame.
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
    /// Hop in samples.
    pub hop: usize,
}

impl PitchContour {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced_f0(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0.iter().zip(&self.voiced).filter(|(_, v)| **v).map(|(f, _)| *f)
    }

    /// Median of the voiced estimates, if any frame is voiced.
    pub fn median_voiced_f0(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.voiced_f0().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(v[v.len() / 2])
    }
}

pub fn track_pitch(w: &Waveform, f0_min: f64, f0_max: f64) -> Result<PitchContour> {
    track_pitch_with(
        w,
        &PitchConfig {
            f0_min,
            f0_max,
            ..PitchConfig::default()
        },
    )
}

pub fn track_pitch_with(w: &Waveform, cfg: &PitchConfig) -> Result<PitchContour> {
    let sr = w.sample_rate() as f64;
    if !(cfg.f0_min > 0.0 && cfg.f0_min < cfg.f0_max && cfg.f0_max <= sr / 4.0) {
        return Err(Error::Config(format!(
            "pitch range [{}, {}] invalid at {} Hz",
            cfg.f0_min, cfg.f0_max, sr
        )));
    }
    let win = (cfg.window_s * sr).round() as usize;
    let hop = (cfg.hop_s * sr).round() as usize;
    let x = w.samples();
    if x.len() < win {
        return Err(Error::TooShort(format!(
            "{} samples is shorter than one {win}-sample analysis window",
            x.len()
        )));
    }
    let lag_min = (sr / cfg.f0_max).floor() as usize;
    let lag_max = (sr / cfg.f0_min).ceil() as usize;
    let n_frames = x.len().div_ceil(hop);
    let half = win / 2;
    let sample = |i: isize| -> f64 {
        if i < 0 || i as usize >= x.len() {
            0.0
        } else {
            x[i as usize] as f64
        }
    };

    let mut f0 = vec![0.0; n_frames];
    let mut voiced = vec![false; n_frames];
    let span = win + lag_max + 2;
    let mut seg = vec![0.0f64; span];
    let mut ncc = vec![0.0f64; lag_max + 2];
    for f in 0..n_frames {
        let start = (f * hop) as isize - half as isize;
        for (i, s) in seg.iter_mut().enumerate() {
            *s = sample(start + i as isize);
        }
        let e0: f64 = seg[..win].iter().map(|v| v * v).sum();
        if e0 < 1e-10 * win as f64 {
            continue;
        }
        // Energy of the lagged window, updated incrementally.
        let mut e1: f64 = seg[lag_min - 1..lag_min - 1 + win].iter().map(|v| v * v).sum();
        for lag in lag_min - 1..=lag_max + 1 {
            if lag > lag_min - 1 {
                let out = seg[lag - 1];
                let inc = seg[lag + win - 1];
                e1 += inc * inc - out * out;
            }
            let r: f64 = seg[..win]
                .iter()
                .zip(&seg[lag..lag + win])
                .map(|(a, b)| a * b)
                .sum();
            ncc[lag] = if e1 > 0.0 { r / (e0 * e1.max(0.0)).sqrt() } else { 0.0 };
        }
        let best = (lag_min..=lag_max)
            .map(|l| ncc[l])
            .fold(f64::NEG_INFINITY, f64::max);
        if best < cfg.threshold {
            continue;
        }
        // Smallest-lag local peak close to the global maximum guards against octave errors.
        let pick = (lag_min..=lag_max)
            .find(|&l| ncc[l] >= 0.9 * best && ncc[l] >= ncc[l - 1] && ncc[l] >= ncc[l + 1])
            .unwrap_or_else(|| {
                (lag_min..=lag_max)
                    .max_by(|&a, &b| ncc[a].total_cmp(&ncc[b]))
                    .unwrap()
            });
        let (a, b, c) = (ncc[pick - 1], ncc[pick], ncc[pick + 1]);
        let denom = a - 2.0 * b + c;
        let delta = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let hz = (sr / (pick as f64 + delta)).clamp(cfg.f0_min, cfg.f0_max);
        f0[f] = hz;
        voiced[f] = true;
    }
    Ok(PitchContour { f0, voiced, hop })
}

/// Pearson correlation of two contours over the frames voiced in both.
pub fn pitch_correlation(a: &PitchContour, b: &PitchContour) -> Result<f64> {
    if a.hop != b.hop {
        return Err(Error::Dim(format!(
            "pitch contours use different hops ({} vs {})",
            a.hop, b.hop
        )));
    }
    let n = a.len().min(b.len());
    let pairs: Vec<(f64, f64)> = (0..n)
        .filter(|&i| a.voiced[i] && b.voiced[i])
        .map(|i| (a.f0[i], b.f0[i]))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "{} commonly voiced frames (need at least 2)",
            pairs.len()
        )));
    }
    let m = pairs.len() as f64;
    let (ma, mb) = pairs
        .iter()
        .fold((0.0, 0.0), |(x, y), (p, q)| (x + p / m, y + q / m));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (p, q) in &pairs {
        let (da, db) = (p - ma, q - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::UndefinedMetric(
            "pitch contour has zero variance over common voiced frames".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contour(f0: Vec<f64>) -> PitchContour {
        let voiced = f0.iter().map(|&f| f > 0.0).collect();
        PitchContour { f0, voiced, hop: 240 }
    }

    #[test]
    fn silence_is_unvoiced() {
        let c = track_pitch(&Waveform::silence(24_000, 24_000), 50.0, 600.0).unwrap();
        assert_eq!(c.len(), 100);
        assert!(c.voiced.iter().all(|v| !v));
        assert!(c.f0.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn too_short_and_bad_ranges_are_rejected() {
        let w = Waveform::silence(100, 24_000);
        assert!(matches!(track_pitch(&w, 50.0, 600.0), Err(Error::TooShort(_))));
        let w = Waveform::silence(2400, 24_000);
        assert!(track_pitch(&w, 600.0, 50.0).is_err());
        assert!(track_pitch(&w, 50.0, 7000.0).is_err());
    }

    #[test]
    fn correlation_of_affine_contours_is_one() {
        let a = contour((0..50).map(|i| 100.0 + (i as f64 * 0.3).sin() * 20.0).collect());
        let b = contour(a.f0.iter().map(|f| 2.0 * f + 50.0).collect());
        assert!((pitch_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!((pitch_correlation(&a, &b).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(
            pitch_correlation(&a, &b).unwrap(),
            pitch_correlation(&b, &a).unwrap()
        );
    }

    #[test]
    fn reversed_sweep_is_anticorrelated() {
        let a = contour((0..80).map(|i| 100.0 + 2.0 * i as f64).collect());
        let b = contour(a.f0.iter().rev().copied().collect());
        assert!(pitch_correlation(&a, &b).unwrap() <= -0.9);
    }

    #[test]
    fn degenerate_contours_are_undefined() {
        let a = contour(vec![0.0, 120.0, 0.0, 0.0]);
        let b = contour(vec![0.0, 130.0, 140.0, 0.0]);
        assert!(matches!(pitch_correlation(&a, &b), Err(Error::UndefinedMetric(_))));
        let flat = contour(vec![100.0; 10]);
        let ramp = contour((0..10).map(|i| 100.0 + i as f64).collect());
        assert!(matches!(pitch_correlation(&flat, &ramp), Err(Error::UndefinedMetric(_))));
        let other_hop = PitchContour { hop: 160, ..ramp.clone() };
        assert!(matches!(pitch_correlation(&ramp, &other_hop), Err(Error::Dim(_))));
    }
}
