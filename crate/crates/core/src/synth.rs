//! Deterministic signal generators for tests, demo assets, and synthetic
//! datasets. Nothing here is part of the measurement pipeline.

use rand::Rng;

use crate::audio::Waveform;

pub fn sine(freq_hz: f64, amp: f64, rate: u32, len: usize) -> Waveform {
    stereo_sine(freq_hz, amp, amp, rate, len)
}

pub fn stereo_sine(freq_hz: f64, amp_l: f64, amp_r: f64, rate: u32, len: usize) -> Waveform {
    let phase = |n: usize| 2.0 * std::f64::consts::PI * freq_hz * n as f64 / rate as f64;
    Waveform::new(
        (0..len).map(|n| amp_l * phase(n).sin()).collect(),
        (0..len).map(|n| amp_r * phase(n).sin()).collect(),
        rate,
    )
    .unwrap()
}

/// Uniform white noise in ±amp, channels independent.
pub fn white_noise(rng: &mut impl Rng, amp: f64, rate: u32, len: usize) -> Waveform {
    let channel = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-amp..amp)).collect()
    };
    Waveform::new(channel(rng), channel(rng), rate).unwrap()
}

/// Pink-ish noise via Paul Kellet's economy three-pole filter, roughly
/// ±amp peak. Channels independent.
pub fn pink_noise(rng: &mut impl Rng, amp: f64, rate: u32, len: usize) -> Waveform {
    let channel = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        let (mut b0, mut b1, mut b2) = (0.0f64, 0.0f64, 0.0f64);
        (0..len)
            .map(|_| {
                let white: f64 = rng.gen_range(-1.0..1.0);
                b0 = 0.99765 * b0 + white * 0.0990460;
                b1 = 0.96300 * b1 + white * 0.2965164;
                b2 = 0.57000 * b2 + white * 1.0526913;
                (b0 + b1 + b2 + white * 0.1848) * amp * 0.25
            })
            .collect()
    };
    Waveform::new(channel(rng), channel(rng), rate).unwrap()
}

/// Single-sample impulses at the given times, identical in both channels.
pub fn clicks_at(times_s: &[f64], amp: f64, rate: u32, len: usize) -> Waveform {
    let mut s = vec![0.0f64; len];
    for &t in times_s {
        let i = (t * rate as f64).round() as usize;
        if i < len {
            s[i] = amp;
        }
    }
    Waveform::from_mono(s, rate).unwrap()
}

/// Evenly spaced clicks, starting half a period in.
pub fn click_train(period_s: f64, amp: f64, rate: u32, len: usize) -> Waveform {
    let mut times = Vec::new();
    let mut t = period_s / 2.0;
    let total = len as f64 / rate as f64;
    while t < total {
        times.push(t);
        t += period_s;
    }
    clicks_at(&times, amp, rate, len)
}
