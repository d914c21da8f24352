//! Integrated loudness per ITU-R BS.1770-4: K-weighting (high shelf +
//! high-pass), 400 ms gating blocks with 75% overlap, absolute gate at
//! −70 LUFS, relative gate at −10 LU.

use crate::audio::Waveform;

use super::SigStatsError;

pub const GATING_BLOCK_S: f64 = 0.400;
pub const GATING_HOP_S: f64 = 0.100;
const ABSOLUTE_GATE_LUFS: f64 = -70.0;
const RELATIVE_GATE_LU: f64 = -10.0;
const LOUDNESS_OFFSET_DB: f64 = -0.691;

/// Integrated loudness, or the sentinel for material the gate removed
/// entirely (e.g. digital silence).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loudness {
    Lufs(f64),
    Unmeasurable,
}

impl Loudness {
    pub fn lufs(self) -> Option<f64> {
        match self {
            Loudness::Lufs(v) => Some(v),
            Loudness::Unmeasurable => None,
        }
    }
}

/// One stage of the K-weighting cascade, direct-form I with zero initial
/// state.
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    /// Head-effect high shelf. Parametric fit published with pyloudnorm;
    /// reproduces the standard's 48 kHz table and generalizes to any rate.
    fn high_shelf(sample_rate: f64) -> Self {
        let gain_db = 3.999_843_853_97;
        let q = 0.707_175_236_955_419_3;
        let center_hz = 1_681.974_450_955_531_9;

        let k = (std::f64::consts::PI * center_hz / sample_rate).tan();
        let vh = 10f64.powf(gain_db / 20.0);
        let vb = vh.powf(0.499_666_774_155);
        let a0 = 1.0 + k / q + k * k;
        Self {
            b0: (vh + vb * k / q + k * k) / a0,
            b1: 2.0 * (k * k - vh) / a0,
            b2: (vh - vb * k / q + k * k) / a0,
            a1: 2.0 * (k * k - 1.0) / a0,
            a2: (1.0 - k / q + k * k) / a0,
        }
    }

    /// RLB high-pass; numerator fixed at [1, −2, 1] as in the standard.
    fn high_pass(sample_rate: f64) -> Self {
        let q = 0.500_327_037_325_395_3;
        let center_hz = 38.135_470_876_139_82;

        let k = (std::f64::consts::PI * center_hz / sample_rate).tan();
        let a0 = 1.0 + k / q + k * k;
        Self {
            b0: 1.0,
            b1: -2.0,
            b2: 1.0,
            a1: 2.0 * (k * k - 1.0) / a0,
            a2: (1.0 - k / q + k * k) / a0,
        }
    }

    fn process(&self, input: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x0| {
                let y0 = self.b0 * x0 + self.b1 * x1 + self.b2 * x2
                    - self.a1 * y1
                    - self.a2 * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

fn block_loudness(power: f64) -> f64 {
    LOUDNESS_OFFSET_DB + 10.0 * power.log10()
}

/// Integrated loudness of a stereo waveform.
///
/// Errors if shorter than one gating block; returns
/// [`Loudness::Unmeasurable`] when every block is gated away.
pub fn integrated_loudness(x: &Waveform) -> Result<Loudness, SigStatsError> {
    let rate = x.sample_rate() as f64;
    let block = (GATING_BLOCK_S * rate).round() as usize;
    let hop = ((GATING_HOP_S * rate).round() as usize).max(1);
    if x.len() < block {
        return Err(SigStatsError::TooShort { needed: block, got: x.len() });
    }

    let shelf = Biquad::high_shelf(rate);
    let highpass = Biquad::high_pass(rate);
    // Per-sample channel-summed square of the K-weighted signal, as a
    // prefix sum so every block power is O(1).
    let mut cumulative = Vec::with_capacity(x.len() + 1);
    cumulative.push(0.0f64);
    let mut acc = 0.0f64;
    {
        let l = highpass.process(&shelf.process(x.left()));
        let r = highpass.process(&shelf.process(x.right()));
        for i in 0..x.len() {
            acc += l[i] * l[i] + r[i] * r[i];
            cumulative.push(acc);
        }
    }

    let mut block_powers = Vec::new();
    let mut start = 0usize;
    while start + block <= x.len() {
        block_powers.push((cumulative[start + block] - cumulative[start]) / block as f64);
        start += hop;
    }

    // Absolute gate.
    let above_absolute: Vec<f64> = block_powers
        .iter()
        .copied()
        .filter(|&p| block_loudness(p) > ABSOLUTE_GATE_LUFS)
        .collect();
    if above_absolute.is_empty() {
        return Ok(Loudness::Unmeasurable);
    }

    // Relative gate, −10 LU under the absolute-gated mean.
    let mean_power = above_absolute.iter().sum::<f64>() / above_absolute.len() as f64;
    let relative_gate = block_loudness(mean_power) + RELATIVE_GATE_LU;
    let (sum, n) = above_absolute
        .iter()
        .filter(|&&p| block_loudness(p) > relative_gate)
        .fold((0.0f64, 0usize), |(s, n), &p| (s + p, n + 1));
    if n == 0 {
        return Ok(Loudness::Unmeasurable);
    }
    Ok(Loudness::Lufs(block_loudness(sum / n as f64)))
}

/// Scale `x` by one broadband gain so its integrated loudness lands on
/// `target` LUFS. Returns the scaled waveform and the gain in dB.
pub fn normalize_loudness(
    x: &Waveform,
    target_lufs: f64,
) -> Result<(Waveform, f64), SigStatsError> {
    match integrated_loudness(x)? {
        Loudness::Unmeasurable => Err(SigStatsError::Unmeasurable),
        Loudness::Lufs(measured) => {
            let gain_db = target_lufs - measured;
            Ok((x.scaled(10f64.powf(gain_db / 20.0)), gain_db))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn stereo_sine(freq: f64, amp_l: f64, amp_r: f64, rate: u32, secs: f64) -> Waveform {
        let len = (secs * rate as f64).round() as usize;
        let phase = |n: usize| 2.0 * std::f64::consts::PI * freq * n as f64 / rate as f64;
        Waveform::new(
            (0..len).map(|n| amp_l * phase(n).sin()).collect(),
            (0..len).map(|n| amp_r * phase(n).sin()).collect(),
            rate,
        )
        .unwrap()
    }

    #[test]
    fn shelf_matches_standard_table_at_48k() {
        let f = Biquad::high_shelf(48_000.0);
        assert_abs_diff_eq!(f.b0, 1.535_124_859_586_97, epsilon = 1e-6);
        assert_abs_diff_eq!(f.b1, -2.691_696_189_406_38, epsilon = 1e-6);
        assert_abs_diff_eq!(f.b2, 1.198_392_810_852_85, epsilon = 1e-6);
        assert_abs_diff_eq!(f.a1, -1.690_659_293_182_41, epsilon = 1e-6);
        assert_abs_diff_eq!(f.a2, 0.732_480_774_215_85, epsilon = 1e-6);
    }

    #[test]
    fn highpass_matches_standard_table_at_48k() {
        let f = Biquad::high_pass(48_000.0);
        assert_eq!(f.b0, 1.0);
        assert_eq!(f.b1, -2.0);
        assert_eq!(f.b2, 1.0);
        assert_abs_diff_eq!(f.a1, -1.990_047_454_833_98, epsilon = 1e-6);
        assert_abs_diff_eq!(f.a2, 0.990_072_250_366_21, epsilon = 1e-6);
    }

    #[test]
    fn compliance_case_left_only_997_hz() {
        let x = stereo_sine(997.0, 1.0, 0.0, 44_100, 5.0);
        let l = integrated_loudness(&x).unwrap().lufs().unwrap();
        assert_abs_diff_eq!(l, -3.01, epsilon = 0.1);
    }

    #[test]
    fn both_channels_add_three_db() {
        let x = stereo_sine(997.0, 1.0, 1.0, 44_100, 5.0);
        let l = integrated_loudness(&x).unwrap().lufs().unwrap();
        assert_abs_diff_eq!(l, -0.01, epsilon = 0.1);
    }

    #[test]
    fn gain_linearity() {
        let x = stereo_sine(997.0, 0.5, 0.5, 44_100, 3.0);
        let base = integrated_loudness(&x).unwrap().lufs().unwrap();
        for c in [0.5, 2.0] {
            let shifted = integrated_loudness(&x.scaled(c)).unwrap().lufs().unwrap();
            assert_abs_diff_eq!(shifted - base, 20.0 * c.log10(), epsilon = 0.2);
        }
    }

    #[test]
    fn silence_is_unmeasurable() {
        let x = Waveform::silence(44_100, 44_100);
        assert_eq!(integrated_loudness(&x).unwrap(), Loudness::Unmeasurable);
        assert!(matches!(
            normalize_loudness(&x, -24.0),
            Err(SigStatsError::Unmeasurable)
        ));
    }

    #[test]
    fn shorter_than_one_block_errors() {
        let x = Waveform::silence(1000, 44_100);
        assert!(matches!(
            integrated_loudness(&x),
            Err(SigStatsError::TooShort { .. })
        ));
    }

    #[test]
    fn normalize_hits_target() {
        let x = stereo_sine(441.0, 0.3, 0.3, 44_100, 2.0);
        let (out, _) = normalize_loudness(&x, -24.0).unwrap();
        let re = integrated_loudness(&out).unwrap().lufs().unwrap();
        assert_abs_diff_eq!(re, -24.0, epsilon = 0.2);
        // gain = target − measured, so re-normalizing 4 LU down reports
        // a gain of −4 dB.
        let (lower, g2) = normalize_loudness(&out, -28.0).unwrap();
        assert_abs_diff_eq!(g2, -4.0, epsilon = 0.2);
        let re2 = integrated_loudness(&lower).unwrap().lufs().unwrap();
        assert_abs_diff_eq!(re2, -28.0, epsilon = 0.2);
    }
}
