//! Band-limited sample-rate conversion.
//!
//! Windowed-sinc interpolation with a Kaiser window (β = 9, ≈ 90 dB
//! stopband). The prototype kernel is tabulated once at 256 points per
//! zero crossing and looked up with linear interpolation, which is a
//! polyphase bank with 256 phases.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::{AudioError, Waveform};

const ZERO_CROSSINGS: usize = 24;
const POINTS_PER_CROSSING: usize = 256;
const KAISER_BETA: f64 = 9.0;
/// Pull the cutoff slightly below Nyquist so the transition band has room.
const ROLLOFF: f64 = 0.945;

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 1..=40 {
        let f = half / k as f64;
        term *= f * f;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// One-sided prototype kernel: sinc(u) · kaiser(u / ZERO_CROSSINGS), with u
/// in zero-crossing units, sampled every 1/POINTS_PER_CROSSING.
fn prototype() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ZERO_CROSSINGS * POINTS_PER_CROSSING + 1;
        let i0_beta = bessel_i0(KAISER_BETA);
        (0..n)
            .map(|i| {
                let u = i as f64 / POINTS_PER_CROSSING as f64;
                let sinc = if u == 0.0 { 1.0 } else { (PI * u).sin() / (PI * u) };
                let frac = u / ZERO_CROSSINGS as f64;
                let window = bessel_i0(KAISER_BETA * (1.0 - frac * frac).sqrt()) / i0_beta;
                sinc * window
            })
            .collect()
    })
}

fn kernel(table: &[f64], u: f64) -> f64 {
    let pos = u.abs() * POINTS_PER_CROSSING as f64;
    let idx = pos as usize;
    if idx + 1 >= table.len() {
        return 0.0;
    }
    let frac = pos - idx as f64;
    table[idx] * (1.0 - frac) + table[idx + 1] * frac
}

/// Resample to `target_rate`. Output length is round(N · target / source);
/// identical rates return a copy. Signal outside the input is treated as
/// silence.
pub fn resample(waveform: &Waveform, target_rate: u32) -> Result<Waveform, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::ZeroSampleRate);
    }
    let source_rate = waveform.sample_rate();
    if source_rate == target_rate {
        return Ok(waveform.clone());
    }

    let ratio = target_rate as f64 / source_rate as f64;
    let out_len = (waveform.len() as f64 * ratio).round() as usize;
    // Cutoff in cycles per *input* sample; shrink it when downsampling so
    // the kernel also anti-aliases.
    let cutoff = 0.5 * ratio.min(1.0) * ROLLOFF;
    let radius = ZERO_CROSSINGS as f64 / (2.0 * cutoff);
    let table = prototype();

    let left_in = waveform.left();
    let right_in = waveform.right();
    let len = waveform.len() as isize;
    let mut left = Vec::with_capacity(out_len);
    let mut right = Vec::with_capacity(out_len);

    for m in 0..out_len {
        let center = m as f64 / ratio;
        let j_min = (center - radius).ceil() as isize;
        let j_max = (center + radius).floor() as isize;
        let mut weight_sum = 0.0;
        let mut acc_l = 0.0;
        let mut acc_r = 0.0;
        for j in j_min..=j_max {
            let u = 2.0 * cutoff * (j as f64 - center);
            let w = kernel(table, u);
            weight_sum += w;
            if j >= 0 && j < len {
                acc_l += w * left_in[j as usize];
                acc_r += w * right_in[j as usize];
            }
        }
        // Normalizing by the full-support weight sum pins DC gain to one
        // and keeps zero-padding semantics at the edges.
        left.push(acc_l / weight_sum);
        right.push(acc_r / weight_sum);
    }

    Waveform::new(left, right, target_rate)
}
