//! Waveform-level BPPM receiver: frame synthesis, symbol-by-symbol
//! detection, GMSD with closed-form fading estimates, and MSD with the
//! fading marginalized by Gauss-Hermite quadrature.
//!
//! The received signal is sampled on the grid of the link templates
//! (T_c/32) with white Gaussian noise per sample, scaled so that an
//! integrate-and-dump over one chip has variance sigma_Tc^2. All inner
//! products of shifted templates reduce to the template autocorrelation at
//! multiples of half a bit.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ber_analytic::{LinkResponse, SAMPLES_PER_CHIP};
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, GaussHermite};

pub const SAMPLES_PER_BIT: usize = 2 * SAMPLES_PER_CHIP;
/// Largest window searched exhaustively.
pub const MAX_WINDOW: usize = 12;
pub const MAX_MSD_WINDOW: usize = 8;
pub const MSD_ORDER: usize = 30;

/// Receiver-side description of a link at a given transmitted power.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub step: f64,
    pub chip_duration: f64,
    /// Received optical power of a "0" pulse (W), before fading.
    pub template: Vec<f64>,
    pub responsivity: f64,
    pub memory: usize,
    /// Charge variance per chip (C^2).
    pub chip_variance: f64,
    /// Template autocorrelation at lags of j half bits.
    acf: Vec<f64>,
}

impl Waveform {
    pub fn new(link: &LinkResponse, power: f64, chip_variance: f64) -> Self {
        let template: Vec<f64> = link.template.iter().map(|v| v * power).collect();
        let half = SAMPLES_PER_CHIP;
        let lags = template.len().div_ceil(half) + 1;
        let acf = (0..lags)
            .map(|j| {
                let l = j * half;
                if l >= template.len() {
                    return 0.0;
                }
                link.step * template.iter().zip(&template[l..]).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Self {
            step: link.step,
            chip_duration: link.step * SAMPLES_PER_CHIP as f64,
            template,
            responsivity: link.responsivity,
            memory: link.memory,
            chip_variance,
            acf,
        }
    }

    /// Noise variance of one grid sample (A^2).
    pub fn sample_variance(&self) -> f64 {
        self.chip_variance / (self.step * self.chip_duration)
    }

    /// x_00 at a lag of `d` bits.
    pub fn x00(&self, d: i64) -> f64 {
        self.acf.get(2 * d.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }

    pub fn x11(&self, d: i64) -> f64 {
        self.x00(d)
    }

    /// x_01(dT) = integral of Gamma0(u) Gamma1(u - dT).
    pub fn x01(&self, d: i64) -> f64 {
        self.acf.get((2 * d + 1).unsigned_abs() as usize).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveformFrame {
    pub samples: Vec<f64>,
    /// Every transmitted bit, lead-in first.
    pub bits: Vec<bool>,
    /// Number of leading bits that act as a known preamble.
    pub lead: usize,
    pub fading: f64,
    pub noise_variance: f64,
}

impl WaveformFrame {
    pub fn payload(&self) -> &[bool] {
        &self.bits[self.lead..]
    }
}

/// Builds the received samples for `bits` under fading `h`. Noise is added
/// when an RNG is supplied.
pub fn synthesize_frame<R: Rng + ?Sized>(wf: &Waveform, bits: &[bool], lead: usize, h: f64, rng: Option<&mut R>) -> WaveformFrame {
    let s = SAMPLES_PER_BIT;
    let len = (bits.len() + wf.memory + 1) * s;
    let mut y = vec![0.0; len];
    let gain = wf.responsivity * h;
    for (k, &b) in bits.iter().enumerate() {
        let off = k * s + if b { s / 2 } else { 0 };
        for (v, t) in y[off..].iter_mut().zip(&wf.template) {
            *v += gain * t;
        }
    }
    let mut noise_variance = 0.0;
    if let Some(rng) = rng {
        noise_variance = wf.sample_variance();
        let sd = noise_variance.sqrt();
        for v in y.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sd * z;
        }
    }
    WaveformFrame {
        samples: y,
        bits: bits.to_vec(),
        lead,
        fading: h,
        noise_variance,
    }
}

/// Matched-filter statistics of one detection window. Inner products run
/// over the window's own samples: earlier bits enter through their decided
/// values, later bits start after the window ends.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationBank {
    pub start: usize,
    pub len: usize,
    lin_hist: f64,
    q_hist: f64,
    /// Indexed by 2i + b for window bit i taking value b.
    lin: Vec<f64>,
    cross: Vec<f64>,
    gram: Vec<f64>,
}

impl CorrelationBank {
    /// `decided` holds every bit before `start`.
    pub fn new(wf: &Waveform, frame: &WaveformFrame, start: usize, len: usize, decided: &[bool]) -> Self {
        let s = SAMPLES_PER_BIT;
        let a = start * s;
        let width = len * s;
        let y = &frame.samples[a..a + width];
        let dot = |u: &[f64], v: &[f64]| wf.step * u.iter().zip(v).map(|(x, z)| x * z).sum::<f64>();

        let reach = wf.template.len().div_ceil(s) + 1;
        let mut hist = vec![0.0; width];
        for k in start.saturating_sub(reach)..start {
            add_pulse(&mut hist, a, k, decided[k], &wf.template);
        }
        let pulses: Vec<Vec<f64>> = (0..2 * len)
            .map(|j| {
                let mut u = vec![0.0; width];
                add_pulse(&mut u, a, start + j / 2, j % 2 == 1, &wf.template);
                u
            })
            .collect();
        let mut gram = vec![0.0; 4 * len * len];
        for i in 0..2 * len {
            for j in i..2 * len {
                let g = dot(&pulses[i], &pulses[j]);
                gram[i * 2 * len + j] = g;
                gram[j * 2 * len + i] = g;
            }
        }
        Self {
            start,
            len,
            lin_hist: dot(y, &hist),
            q_hist: dot(&hist, &hist),
            lin: pulses.iter().map(|u| dot(y, u)).collect(),
            cross: pulses.iter().map(|u| dot(&hist, u)).collect(),
            gram,
        }
    }

    /// Matched correlation and energy of a candidate for the window bits.
    pub fn terms(&self, bits: &[bool]) -> (f64, f64) {
        let idx: Vec<usize> = bits.iter().enumerate().map(|(i, &b)| 2 * i + b as usize).collect();
        let mut lin = self.lin_hist;
        let mut q = self.q_hist;
        for &i in &idx {
            lin += self.lin[i];
            q += 2.0 * self.cross[i];
            for &j in &idx {
                q += self.gram[i * 2 * self.len + j];
            }
        }
        (lin, q)
    }
}

/// Adds the pulse of bit `k` to a segment that starts at sample `a`.
fn add_pulse(seg: &mut [f64], a: usize, k: usize, b: bool, template: &[f64]) {
    let off = k * SAMPLES_PER_BIT + if b { SAMPLES_PER_CHIP } else { 0 };
    let end = a + seg.len();
    let lo = off.max(a);
    let hi = (off + template.len()).min(end);
    for n in lo..hi {
        seg[n - a] += template[n - off];
    }
}

/// Closed-form fading estimate for a candidate; `None` when the candidate
/// has no energy or a non-positive estimate.
pub fn gmsd_estimate_fading(wf: &Waveform, bank: &CorrelationBank, bits: &[bool]) -> Option<f64> {
    let (lin, q) = bank.terms(bits);
    let h = lin / (wf.responsivity * q);
    (q > 0.0 && h > 0.0 && h.is_finite()).then_some(h)
}

/// GMSD estimation function G(b, h) up to a positive constant.
pub fn gmsd_metric(wf: &Waveform, bank: &CorrelationBank, bits: &[bool], h: f64) -> f64 {
    let (lin, q) = bank.terms(bits);
    2.0 * h * lin - wf.responsivity * h * h * q
}

/// Symbol-by-symbol decisions for every bit of the frame; ties go to 0.
pub fn sbsd_detect(wf: &Waveform, frame: &WaveformFrame) -> Vec<bool> {
    let s = SAMPLES_PER_BIT;
    let c = SAMPLES_PER_CHIP;
    (0..frame.bits.len())
        .map(|k| {
            let f: f64 = frame.samples[k * s..k * s + c].iter().sum();
            let g: f64 = frame.samples[k * s + c..(k + 1) * s].iter().sum();
            g * wf.step > f * wf.step
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    /// Decisions for the payload bits.
    pub bits: Vec<bool>,
    /// Windows where every candidate was rejected and SBSD was used.
    pub fallbacks: usize,
}

fn check_window(p: usize, max: usize) -> Result<()> {
    if p == 0 || p > max {
        return Err(Error::Refused(format!("detection window {p} outside 1..={max}")));
    }
    Ok(())
}

fn candidate(mask: usize, p: usize) -> impl Iterator<Item = bool> {
    (0..p).map(move |k| mask >> (p - 1 - k) & 1 == 1)
}

/// Runs a windowed detector over the payload. `score` returns the metric
/// of a candidate or `None` to reject it. Candidates are visited in
/// lexicographic order and only a strictly larger score replaces the best,
/// so ties go to the smallest candidate. The preamble and earlier
/// decisions feed back into later windows.
fn windowed(wf: &Waveform, frame: &WaveformFrame, p: usize, mut score: impl FnMut(&CorrelationBank, &[bool]) -> Option<f64>) -> Detection {
    let n = frame.bits.len();
    let mut decided: Vec<bool> = frame.bits[..frame.lead].to_vec();
    let mut fallbacks = 0;
    let mut sbsd: Option<Vec<bool>> = None;
    let mut start = frame.lead;
    let mut bits = Vec::with_capacity(p);
    while start < n {
        let len = p.min(n - start);
        let bank = CorrelationBank::new(wf, frame, start, len, &decided);
        let mut best: Option<(f64, usize)> = None;
        for mask in 0..1usize << len {
            bits.clear();
            bits.extend(candidate(mask, len));
            if let Some(g) = score(&bank, &bits) {
                if best.is_none_or(|(bg, _)| g > bg) {
                    best = Some((g, mask));
                }
            }
        }
        match best {
            Some((_, mask)) => decided.extend(candidate(mask, len)),
            None => {
                fallbacks += 1;
                let s = sbsd.get_or_insert_with(|| sbsd_detect(wf, frame));
                decided.extend_from_slice(&s[start..start + len]);
            }
        }
        start += len;
    }
    Detection {
        bits: decided[frame.lead..].to_vec(),
        fallbacks,
    }
}

/// Generalized multiple-symbol detection with window `p`.
pub fn gmsd_detect(wf: &Waveform, frame: &WaveformFrame, p: usize) -> Result<Detection> {
    check_window(p, MAX_WINDOW)?;
    Ok(windowed(wf, frame, p, |bank, bits| {
        let (lin, q) = bank.terms(bits);
        (q > 0.0 && lin > 0.0).then(|| lin * lin / (wf.responsivity * q))
    }))
}

/// Detection with a known fading coefficient (genie receiver).
pub fn known_fading_detect(wf: &Waveform, frame: &WaveformFrame, p: usize, h: f64) -> Result<Detection> {
    check_window(p, MAX_WINDOW)?;
    Ok(windowed(wf, frame, p, |bank, bits| Some(gmsd_metric(wf, bank, bits, h))))
}

/// Maximum-likelihood multiple-symbol detection with the lognormal fading
/// marginalized over `MSD_ORDER` Gauss-Hermite nodes.
pub fn msd_detect(wf: &Waveform, frame: &WaveformFrame, p: usize, log_amplitude_variance: f64) -> Result<Detection> {
    check_window(p, MAX_MSD_WINDOW)?;
    let rule = GaussHermite::cached(MSD_ORDER);
    let v = log_amplitude_variance;
    let nodes: Vec<(f64, f64)> = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| ((2.0 * (-v + (2.0 * v).sqrt() * x)).exp(), (w / PI.sqrt()).ln()))
        .collect();
    let r = wf.responsivity;
    // log-likelihood scale T_c / (2 sigma_Tc^2); noiseless frames take the
    // limit, where only the best node matters
    let scale = if frame.noise_variance > 0.0 {
        Some(wf.chip_duration / (2.0 * wf.chip_variance))
    } else {
        None
    };
    Ok(windowed(wf, frame, p, |bank, bits| {
        let (lin, q) = bank.terms(bits);
        let ll = |h: f64| 2.0 * r * h * lin - r * r * h * h * q;
        Some(match scale {
            Some(c) => log_sum_exp(nodes.iter().map(|&(h, lw)| lw + c * ll(h))),
            None => nodes.iter().map(|&(h, _)| ll(h)).fold(f64::NEG_INFINITY, f64::max),
        })
    }))
}
