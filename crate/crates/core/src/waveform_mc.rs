//! Monte Carlo BER of the waveform detectors.
//!
//! Every frame draws its own block-fading coefficient, bits and noise from
//! a per-frame stream, and all detectors see the same frames. Frames run in
//! fixed-size batches; after each batch the run stops once every detector
//! has collected the requested number of errors or the frame budget is hit.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ber_analytic::LinkResponse;
use crate::curve::{dbm_to_watts, BerCurve, BerPoint, Method, SequenceMode};
use crate::detection::{gmsd_detect, msd_detect, sbsd_detect, synthesize_frame, Waveform, MAX_MSD_WINDOW, MAX_WINDOW};
use crate::error::{Error, Result};
use crate::fading::sample_one;
use crate::rng::{Domain, StreamFactory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Detector {
    Sbsd,
    Gmsd(usize),
    Msd(usize),
}

impl Detector {
    pub fn name(self) -> &'static str {
        match self {
            Detector::Sbsd => "SBSD",
            Detector::Gmsd(_) => "GMSD",
            Detector::Msd(_) => "MSD",
        }
    }

    pub fn window(self) -> usize {
        match self {
            Detector::Sbsd => 1,
            Detector::Gmsd(p) | Detector::Msd(p) => p,
        }
    }

    fn check(self) -> Result<()> {
        let (p, max) = match self {
            Detector::Sbsd => return Ok(()),
            Detector::Gmsd(p) => (p, MAX_WINDOW),
            Detector::Msd(p) => (p, MAX_MSD_WINDOW),
        };
        if p == 0 || p > max {
            return Err(Error::Refused(format!("{} window {p} outside 1..={max}", self.name())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Payload bits per fading block.
    pub payload_bits: usize,
    /// Random preamble bits; defaults to the channel memory.
    pub lead_bits: Option<usize>,
    pub min_errors: u64,
    pub max_frames: u64,
    pub batch: usize,
    pub seed: u64,
    /// Drop receiver noise (smoke runs).
    pub noiseless: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            payload_bits: 1000,
            lead_bits: None,
            min_errors: 100,
            max_frames: 1_000_000,
            batch: 64,
            seed: 0,
            noiseless: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTally {
    pub detector: Detector,
    pub frames: u64,
    pub bits: u64,
    pub errors: u64,
    pub fallbacks: u64,
    pub degenerate: bool,
}

impl McTally {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }

    /// Wilson score interval at standard-normal quantile `z`.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        wilson(self.errors, self.bits, z)
    }
}

pub fn wilson(errors: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub const Z95: f64 = 1.959_963_984_540_054;
pub const Z99: f64 = 2.575_829_303_548_901;

/// Simulates one power point for all detectors on shared frames.
pub fn simulate_point(wf: &Waveform, fading_variance: f64, cfg: &McConfig, detectors: &[Detector], streams: StreamFactory) -> Result<Vec<McTally>> {
    for d in detectors {
        d.check()?;
    }
    if cfg.payload_bits == 0 || cfg.batch == 0 {
        return Err(Error::Domain("payload and batch must be positive".into()));
    }
    let lead = cfg.lead_bits.unwrap_or(wf.memory);
    let mut tallies: Vec<McTally> = detectors
        .iter()
        .map(|&detector| McTally {
            detector,
            frames: 0,
            bits: 0,
            errors: 0,
            fallbacks: 0,
            degenerate: cfg.noiseless,
        })
        .collect();
    let mut next = 0u64;
    while next < cfg.max_frames {
        let end = (next + cfg.batch as u64).min(cfg.max_frames);
        let batch: Vec<Vec<(u64, u64)>> = (next..end)
            .into_par_iter()
            .map(|i| run_frame(wf, fading_variance, cfg, detectors, lead, &streams, i))
            .collect::<Result<_>>()?;
        for frame in batch {
            for (t, (e, f)) in tallies.iter_mut().zip(frame) {
                t.frames += 1;
                t.bits += cfg.payload_bits as u64;
                t.errors += e;
                t.fallbacks += f;
            }
        }
        next = end;
        if tallies.iter().all(|t| t.errors >= cfg.min_errors) {
            break;
        }
    }
    Ok(tallies)
}

fn run_frame(
    wf: &Waveform,
    fading_variance: f64,
    cfg: &McConfig,
    detectors: &[Detector],
    lead: usize,
    streams: &StreamFactory,
    index: u64,
) -> Result<Vec<(u64, u64)>> {
    let mut rng = streams.stream(Domain::Frame, index);
    let h = sample_one(fading_variance, &mut rng);
    let bits: Vec<bool> = (0..lead + cfg.payload_bits).map(|_| rng.gen()).collect();
    let frame = synthesize_frame(wf, &bits, lead, h, (!cfg.noiseless).then_some(&mut rng));
    let count = |decided: &[bool]| decided.iter().zip(frame.payload()).filter(|(a, b)| a != b).count() as u64;
    detectors
        .iter()
        .map(|&d| {
            Ok(match d {
                Detector::Sbsd => (count(&sbsd_detect(wf, &frame)[lead..]), 0),
                Detector::Gmsd(p) => {
                    let r = gmsd_detect(wf, &frame, p)?;
                    (count(&r.bits), r.fallbacks as u64)
                }
                Detector::Msd(p) => {
                    let r = msd_detect(wf, &frame, p, fading_variance)?;
                    (count(&r.bits), r.fallbacks as u64)
                }
            })
        })
        .collect()
}

/// One BER curve per detector over a power sweep (dBm).
pub fn simulate_curves(
    link: &LinkResponse,
    chip_variance: f64,
    fading_variance: f64,
    powers_dbm: &[f64],
    cfg: &McConfig,
    detectors: &[Detector],
    scenario_hash: &str,
) -> Result<Vec<BerCurve>> {
    let root = StreamFactory::new(cfg.seed);
    let mut curves: Vec<BerCurve> = detectors
        .iter()
        .map(|d| BerCurve {
            method: Method::WaveformMc,
            detector: Some(d.name().to_string()),
            window: Some(d.window()),
            configuration: "1x1".into(),
            scenario_hash: scenario_hash.to_string(),
            sequence_mode: SequenceMode::Sampled,
            points: Vec::new(),
        })
        .collect();
    for (i, &dbm) in powers_dbm.iter().enumerate() {
        let wf = Waveform::new(link, dbm_to_watts(dbm), chip_variance);
        let tallies = simulate_point(&wf, fading_variance, cfg, detectors, root.child(i as u64))?;
        for (curve, t) in curves.iter_mut().zip(tallies) {
            curve.points.push(BerPoint {
                power_dbm: dbm,
                power_w: dbm_to_watts(dbm),
                ber: t.ber(),
                frames: Some(t.frames),
                bits: Some(t.bits),
                errors: Some(t.errors),
                interval: Some(t.interval(Z95)),
                degenerate: t.degenerate,
            });
        }
    }
    Ok(curves)
}
