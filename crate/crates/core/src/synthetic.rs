//! Deterministic speech-like test material.
//!
//! Voiced segments drive a cascade of formant resonators with a glottal
//! pulse train; unvoiced segments filter noise through a high resonance;
//! short pauses separate them, and a faint noise floor stands in for the
//! recording background. Not intelligible, but it has the spectral
//! envelope, pitch structure and on/off dynamics that LPC coding relies on.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::signal::{PcmSignal, SAMPLE_RATE};

const FS: f64 = SAMPLE_RATE as f64;

/// Formant frequencies (Hz) of a few vowels.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [300.0, 870.0, 2240.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
];

struct Resonator {
    b1: f64,
    b2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64) -> Self {
        let r = (-PI * bandwidth / FS).exp();
        let theta = 2.0 * PI * freq / FS;
        Self { b1: 2.0 * r * theta.cos(), b2: -r * r, gain: 1.0 - r, y1: 0.0, y2: 0.0 }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.b1 * self.y1 + self.b2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Raised-cosine fade of `ramp` samples at both ends.
fn envelope(len: usize, ramp: usize, t: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let edge = t.min(len - 1 - t);
    if edge >= ramp {
        1.0
    } else {
        0.5 * (1.0 - (PI * edge as f64 / ramp as f64).cos())
    }
}

/// Restores the voiced level lost to the radiation zero near DC.
const RADIATION_GAIN: f64 = 5.0;

fn voiced(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
    let mut formants: Vec<Resonator> = vowel
        .iter()
        .map(|&f| Resonator::new(f * rng.random_range(0.9..1.1), rng.random_range(60.0..120.0)))
        .collect();
    let f0_start = rng.random_range(95.0..230.0);
    let f0_end = f0_start * rng.random_range(0.8..1.2);
    let aspiration = Normal::new(0.0, 0.02).expect("valid sigma");
    let mut phase = 0.0;
    let mut glottal = [0.0; 2];
    let mut last = 0.0;
    (0..len)
        .map(|t| {
            let f0 = f0_start + (f0_end - f0_start) * t as f64 / len as f64;
            phase += f0 / FS;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            // Two real poles give the -12 dB/octave tilt of glottal flow.
            glottal[0] = 0.9 * glottal[0] + pulse;
            glottal[1] = 0.9 * glottal[1] + glottal[0];
            let src = glottal[1] + aspiration.sample(rng);
            let y = formants.iter_mut().fold(src, |x, r| r.tick(x) * 4.0);
            // Lip radiation is roughly a differentiator (+6 dB/octave).
            let out = RADIATION_GAIN * (y - 0.98 * last);
            last = y;
            out
        })
        .collect()
}

fn unvoiced(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut res = Resonator::new(rng.random_range(2500.0..5500.0), rng.random_range(800.0..1800.0));
    let noise = Normal::new(0.0, 1.0).expect("valid sigma");
    (0..len).map(|_| res.tick(noise.sample(rng)) * 0.08).collect()
}

/// Background noise level relative to the 0.5 peak (about -50 dB).
const NOISE_FLOOR: f64 = 1.5e-3;

/// One utterance of `n` samples, peak-normalized to 0.5, over a faint
/// white noise floor.
pub fn utterance(n: usize, seed: u64) -> PcmSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let kind: f64 = rng.random();
        let len = (rng.random_range(0.08..0.35) * FS) as usize;
        let seg = if kind < 0.6 {
            voiced(&mut rng, len)
        } else if kind < 0.85 {
            unvoiced(&mut rng, len)
        } else {
            vec![0.0; len]
        };
        let level = rng.random_range(0.3..1.0);
        out.extend(seg.iter().enumerate().map(|(t, v)| v * level * envelope(len, 160, t)));
    }
    out.truncate(n);
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    let noise = Normal::new(0.0, NOISE_FLOOR).expect("valid sigma");
    out.iter_mut().for_each(|v| *v = (*v + noise.sample(&mut rng)).clamp(-0.5, 0.5));
    PcmSignal::from_samples(out).expect("finite")
}

/// `count` utterances of `seconds` each.
pub fn corpus(count: usize, seconds: f64, seed: u64) -> Vec<PcmSignal> {
    (0..count).map(|k| utterance((seconds * FS) as usize, seed.wrapping_mul(1000).wrapping_add(k as u64))).collect()
}
