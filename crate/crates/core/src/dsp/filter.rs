//! Kaiser-windowed sinc low-pass design.
//!
//! Frequencies are expressed as fractions of the Nyquist frequency. The
//! passband ends at `cutoff_norm` and the stopband begins at
//! `cutoff_norm + transition_norm`; the ideal sinc cutoff sits halfway in
//! between.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Linear-phase FIR low-pass filter with odd length and unity DC gain.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    taps: Vec<f64>,
    cutoff_norm: f64,
    transition_norm: f64,
    atten_db: f64,
}

impl FirFilter {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn taps_f32(&self) -> Vec<f32> {
        self.taps.iter().map(|&t| t as f32).collect()
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Index of the center tap (the group delay in samples).
    pub fn center(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn cutoff_norm(&self) -> f64 {
        self.cutoff_norm
    }

    pub fn transition_norm(&self) -> f64 {
        self.transition_norm
    }

    pub fn atten_db(&self) -> f64 {
        self.atten_db
    }

    pub fn dc_gain(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Magnitude response at `freq_norm` (fraction of Nyquist), evaluated from the DTFT.
    pub fn magnitude(&self, freq_norm: f64) -> f64 {
        let w = PI * freq_norm;
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &h) in self.taps.iter().enumerate() {
            let phase = w * n as f64;
            re += h * phase.cos();
            im -= h * phase.sin();
        }
        (re * re + im * im).sqrt()
    }

    pub fn response_db(&self, freq_norm: f64) -> f64 {
        20.0 * self.magnitude(freq_norm).max(1e-300).log10()
    }
}

/// Kaiser window shape parameter for a stopband attenuation of `atten_db`.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

pub fn kaiser_window(len: usize, beta: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = bessel_i0(beta);
    let m = (len - 1) as f64;
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Designs a Kaiser-windowed sinc low-pass filter.
pub fn design_lowpass(cutoff_norm: f64, transition_norm: f64, atten_db: f64) -> Result<FirFilter> {
    if !(cutoff_norm > 0.0 && cutoff_norm < 1.0) {
        return Err(Error::InvalidDesign(format!(
            "cutoff {cutoff_norm} must lie in (0, 1)"
        )));
    }
    if !(transition_norm > 0.0) {
        return Err(Error::InvalidDesign(format!(
            "transition width {transition_norm} must be positive"
        )));
    }
    if cutoff_norm + transition_norm >= 1.0 {
        return Err(Error::InvalidDesign(format!(
            "cutoff + transition = {} reaches Nyquist",
            cutoff_norm + transition_norm
        )));
    }
    if !(atten_db >= 40.0) {
        return Err(Error::InvalidDesign(format!(
            "attenuation {atten_db} dB below the 40 dB minimum"
        )));
    }

    let delta_w = PI * transition_norm;
    let mut len = ((atten_db - 7.95) / (2.285 * delta_w)).ceil() as usize + 1;
    if len % 2 == 0 {
        len += 1;
    }
    let beta = kaiser_beta(atten_db);
    let window = kaiser_window(len, beta);
    let fc = cutoff_norm + transition_norm / 2.0;
    let center = len / 2;

    // Fill the left half and mirror so the taps are symmetric bit for bit.
    let mut taps = vec![0.0; len];
    for n in 0..=center {
        let t = n as f64 - center as f64;
        let h = fc * sinc(fc * t) * window[n];
        taps[n] = h;
        taps[len - 1 - n] = h;
    }
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    Ok(FirFilter {
        taps,
        cutoff_norm,
        transition_norm,
        atten_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_matches_known_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) and I0(5) from tables.
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-13);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-10);
    }

    #[test]
    fn rejects_designs_reaching_nyquist() {
        assert!(matches!(
            design_lowpass(0.9, 0.1, 60.0),
            Err(Error::InvalidDesign(_))
        ));
        assert!(design_lowpass(0.0, 0.1, 60.0).is_err());
        assert!(design_lowpass(0.5, 0.1, 30.0).is_err());
    }

    #[test]
    fn design_is_symmetric_with_unity_dc() {
        for &(c, t, a) in &[(0.5, 0.1, 80.0), (0.45, 0.1, 60.0), (0.2, 0.3, 40.0), (0.7, 0.05, 90.0)]
        {
            let f = design_lowpass(c, t, a).unwrap();
            assert_eq!(f.len() % 2, 1);
            let taps = f.taps();
            for i in 0..taps.len() {
                assert_eq!(taps[i], taps[taps.len() - 1 - i]);
            }
            assert!((f.dc_gain() - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn stopband_meets_target_on_dense_grid() {
        let f = design_lowpass(0.5, 0.1, 80.0).unwrap();
        let worst = (0..=4000)
            .map(|i| 0.6 + 0.4 * i as f64 / 4000.0)
            .map(|w| f.response_db(w))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst <= -77.0, "worst stopband response {worst} dB");
        assert!(f.response_db(0.25).abs() < 0.01);
    }
}
