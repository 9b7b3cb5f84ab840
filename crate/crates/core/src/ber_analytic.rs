//! Gaussian-noise BER of BPPM links with equal gain combining.
//!
//! Each link's received pulse is the FFIR convolved with a chip-long
//! rectangle of height 2P, sampled on a grid of T_c/32. Integrating it
//! chip by chip gives the signal and ISI charges (the gamma terms). The
//! conditional BER for a bit and its history is a Q function of a
//! fading-weighted sum of those charges; averaging over histories and
//! lognormal fading gives the BER.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{dbm_to_watts, BerCurve, BerPoint, Method, SequenceMode};
use crate::error::{Error, Result};
use crate::fading::lognormal_sum_approx;
use crate::metrics::{full_loss_profile, FfirHistogram, GridResponse};
use crate::numerics::{integrate_adaptive, q_function, GaussHermite};
use crate::rng::{Domain, StreamFactory};
use crate::scenario::{ModemConfig, Scenario};

pub const SAMPLES_PER_CHIP: usize = 32;
/// Histories are enumerated up to this memory and sampled beyond it.
pub const MAX_EXHAUSTIVE_MEMORY: usize = 12;
pub const SAMPLED_HISTORIES: usize = 4096;
/// Largest M*N accepted by the tensor Gauss-Hermite rule.
pub const MAX_TENSOR_LINKS: usize = 4;
pub const DEFAULT_GHQ_ORDER: usize = 30;
/// Term count up to which the Monte Carlo oracle evaluates every term.
pub const MC_FULL_TERMS: usize = 64;
pub const DEFAULT_MC_DRAWS: u64 = 10_000_000;

/// Received pulse shape and chip charges of one (transmitter, receiver)
/// link, per watt of transmitted power.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkResponse {
    /// Grid step (s).
    pub step: f64,
    /// Received optical power for the "0" pulse, sampled on the grid,
    /// spanning L + 1 bits.
    pub template: Vec<f64>,
    /// Charge in chip n after the start of the "0" pulse (C/W).
    pub chips: Vec<f64>,
    pub memory: usize,
    pub responsivity: f64,
}

impl LinkResponse {
    pub fn from_ffir(ffir: &FfirHistogram, modem: &ModemConfig, responsivity: f64) -> Result<Self> {
        let tc = modem.chip_duration();
        let step = tc / SAMPLES_PER_CHIP as f64;
        if ffir.is_zero() {
            return Ok(Self::from_grid(&GridResponse { step, taps: vec![] }, 0, responsivity));
        }
        let memory = full_loss_profile(ffir, modem.bit_duration)?.memory();
        let horizon = (memory + 1) as f64 * modem.bit_duration;
        Ok(Self::from_grid(&GridResponse::from_ffir(ffir, step, horizon), memory, responsivity))
    }

    /// Ideal channel passing `mass` of the pulse without spreading.
    pub fn delta(modem: &ModemConfig, responsivity: f64, mass: f64) -> Self {
        let step = modem.chip_duration() / SAMPLES_PER_CHIP as f64;
        Self::from_grid(&GridResponse::delta(step, mass), 0, responsivity)
    }

    pub fn from_grid(grid: &GridResponse, memory: usize, responsivity: f64) -> Self {
        let len = (memory + 1) * 2 * SAMPLES_PER_CHIP;
        let mut template: Vec<f64> = grid.pulse_response(SAMPLES_PER_CHIP).into_iter().map(|v| 2.0 * v).collect();
        template.resize(len, 0.0);
        let chips = template
            .chunks(SAMPLES_PER_CHIP)
            .map(|c| responsivity * grid.step * c.iter().sum::<f64>())
            .collect();
        Self {
            step: grid.step,
            template,
            chips,
            memory,
            responsivity,
        }
    }

    fn chip(&self, n: usize) -> f64 {
        self.chips.get(n).copied().unwrap_or(0.0)
    }

    /// Charges in the (first, second) chip of the current slot.
    pub fn slot_charges(&self, b0: bool, history: &[bool]) -> (f64, f64) {
        let (mut f, mut s) = if b0 { (0.0, self.chip(0)) } else { (self.chip(0), self.chip(1)) };
        for (i, &b) in history.iter().take(self.memory).enumerate() {
            let k = i + 1;
            if b {
                f += self.chip(2 * k - 1);
                s += self.chip(2 * k);
            } else {
                f += self.chip(2 * k);
                s += self.chip(2 * k + 1);
            }
        }
        (f, s)
    }

    /// Correct-minus-wrong chip charge per watt; `history[0]` is the
    /// previous bit.
    pub fn bracket(&self, b0: bool, history: &[bool]) -> f64 {
        let (f, s) = self.slot_charges(b0, history);
        if b0 {
            s - f
        } else {
            f - s
        }
    }

    pub fn gamma(&self, power: f64) -> GammaCoefficients {
        let c = |n| power * self.chip(n);
        GammaCoefficients {
            f_s0: c(0),
            s_s0: c(1),
            f_s1: 0.0,
            s_s1: c(0),
            isi: (1..=self.memory)
                .map(|k| IsiTerms {
                    f_i0: c(2 * k),
                    s_i0: c(2 * k + 1),
                    f_i1: c(2 * k - 1),
                    s_i1: c(2 * k),
                })
                .collect(),
        }
    }
}

/// Integrated signal and ISI charges (C) at a given transmitted power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCoefficients {
    pub f_s0: f64,
    pub s_s0: f64,
    pub f_s1: f64,
    pub s_s1: f64,
    /// Index 0 is the previous bit (k = -1).
    pub isi: Vec<IsiTerms>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsiTerms {
    pub f_i0: f64,
    pub s_i0: f64,
    pub f_i1: f64,
    pub s_i1: f64,
}

impl GammaCoefficients {
    pub fn memory(&self) -> usize {
        self.isi.len()
    }

    /// Sum of ISI differences C^(k) over the history.
    pub fn isi_sum(&self, history: &[bool]) -> f64 {
        self.isi
            .iter()
            .zip(history)
            .map(|(t, &b)| if b { t.f_i1 - t.s_i1 } else { t.f_i0 - t.s_i0 })
            .sum()
    }

    pub fn bracket(&self, b0: bool, history: &[bool]) -> f64 {
        let c = self.isi_sum(history);
        if b0 {
            self.s_s1 - self.f_s1 - c
        } else {
            self.f_s0 - self.s_s0 + c
        }
    }
}

/// Charge variance per chip (C^2) and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseVariance {
    pub thermal: f64,
    pub background: f64,
    pub dark: f64,
}

impl NoiseVariance {
    pub fn for_scenario(s: &Scenario) -> Self {
        let k = &s.constants;
        let n = &s.noise;
        let b = s.modem.bandwidth();
        let tc2 = s.modem.chip_duration().powi(2);
        Self {
            thermal: 4.0 * k.boltzmann * n.temperature * b * tc2 / n.load_resistance,
            background: 2.0 * k.electron_charge * s.responsivity() * n.background_power() * b * tc2,
            dark: 2.0 * k.electron_charge * n.dark_current * b * tc2,
        }
    }

    pub fn total(&self) -> f64 {
        self.thermal + self.background + self.dark
    }
}

pub fn conditional_ber_siso(gamma: &GammaCoefficients, sigma2: f64, h: f64, history: &[bool], b0: bool) -> f64 {
    q_function(h * gamma.bracket(b0, history) / (2.0 * sigma2).sqrt())
}

/// Conditional BER of an M x N EGC link; `gammas` and `fading` are
/// row-major over transmitters and each gamma already carries P_i.
pub fn conditional_ber_mimo(gammas: &[GammaCoefficients], receivers: usize, sigma2: f64, fading: &[f64], history: &[bool], b0: bool) -> f64 {
    let arg: f64 = gammas.iter().zip(fading).map(|(g, h)| h * g.bracket(b0, history)).sum();
    q_function(arg / (2.0 * receivers as f64 * sigma2).sqrt())
}

/// Bit histories used for sequence averaging; `histories[i][0]` is the
/// most recent bit.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySet {
    pub mode: SequenceMode,
    pub histories: Vec<Vec<bool>>,
}

pub fn history_set(memory: usize) -> HistorySet {
    if memory <= MAX_EXHAUSTIVE_MEMORY {
        let histories = (0..1u32 << memory)
            .map(|mask| (0..memory).map(|k| mask >> k & 1 == 1).collect())
            .collect();
        HistorySet {
            mode: SequenceMode::Exhaustive,
            histories,
        }
    } else {
        let mut rng = StreamFactory::new(0).stream(Domain::History, memory as u64);
        let histories = (0..SAMPLED_HISTORIES)
            .map(|_| (0..memory).map(|_| rng.gen::<bool>()).collect())
            .collect();
        HistorySet {
            mode: SequenceMode::Sampled,
            histories,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Averaging {
    /// Gauss-Hermite rule with V nodes per link (tensor product for MIMO).
    Ghqf(usize),
    /// Adaptive quadrature for SISO, Monte Carlo over fading for MIMO.
    Exact,
    /// Single equivalent lognormal per conditional term.
    LognormalSum,
}

impl Averaging {
    pub fn method(self) -> Method {
        match self {
            Averaging::Ghqf(_) => Method::AnalyticGhqf,
            Averaging::Exact => Method::AnalyticExact,
            Averaging::LognormalSum => Method::LognormalSum,
        }
    }
}

/// All links of an M x N system together with noise and fading.
#[derive(Debug, Clone)]
pub struct LinkSystem {
    pub transmitters: usize,
    pub receivers: usize,
    /// Row-major over transmitters.
    pub links: Vec<LinkResponse>,
    pub variances: Vec<f64>,
    pub noise: NoiseVariance,
    pub histories: HistorySet,
    /// Brackets per term (b0 x history), each of length M*N.
    terms: Vec<Vec<f64>>,
}

impl LinkSystem {
    pub fn new(transmitters: usize, receivers: usize, links: Vec<LinkResponse>, variances: Vec<f64>, noise: NoiseVariance) -> Result<Self> {
        let mn = transmitters * receivers;
        if links.len() != mn || variances.len() != mn {
            return Err(Error::Domain(format!("expected {mn} links")));
        }
        let memory = links.iter().map(|l| l.memory).max().unwrap_or(0);
        let histories = history_set(memory);
        let terms = [false, true]
            .iter()
            .flat_map(|&b0| {
                histories
                    .histories
                    .iter()
                    .map(move |h| (b0, h))
                    .collect::<Vec<_>>()
            })
            .map(|(b0, h)| links.iter().map(|l| l.bracket(b0, h)).collect())
            .collect();
        Ok(Self {
            transmitters,
            receivers,
            links,
            variances,
            noise,
            histories,
            terms,
        })
    }

    pub fn from_ffirs(scenario: &Scenario, ffirs: &[FfirHistogram]) -> Result<Self> {
        let r = scenario.responsivity();
        let links = ffirs
            .iter()
            .map(|f| LinkResponse::from_ffir(f, &scenario.modem, r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            scenario.layout.transmitters,
            scenario.layout.receivers,
            links,
            scenario.fading.log_amplitude_variance.clone(),
            NoiseVariance::for_scenario(scenario),
        )
    }

    pub fn memory(&self) -> usize {
        self.links.iter().map(|l| l.memory).max().unwrap_or(0)
    }

    /// Factor turning a bracket into a Q argument at total power `power`.
    pub fn scale(&self, power: f64) -> f64 {
        power / self.transmitters as f64 / (2.0 * self.receivers as f64 * self.noise.total()).sqrt()
    }

    /// Q arguments per term, per unit fading, at total power `power`.
    pub fn term_weights(&self, power: f64) -> Vec<Vec<f64>> {
        let s = self.scale(power);
        self.terms.iter().map(|t| t.iter().map(|b| s * b).collect()).collect()
    }

    pub fn conditional_ber(&self, power: f64, fading: &[f64]) -> f64 {
        let w = self.term_weights(power);
        mean(w.iter().map(|t| q_function(dot(t, fading))))
    }

    pub fn average_ber(&self, power: f64, averaging: Averaging) -> Result<f64> {
        let mn = self.links.len();
        if self.variances.iter().all(|&v| v == 0.0) {
            return Ok(self.conditional_ber(power, &vec![1.0; mn]));
        }
        let weights = self.term_weights(power);
        match averaging {
            Averaging::Ghqf(v) => {
                if v < 2 {
                    return Err(Error::Domain("Gauss-Hermite order must be at least 2".into()));
                }
                if mn > MAX_TENSOR_LINKS {
                    return Err(Error::Refused(format!(
                        "tensor Gauss-Hermite over {mn} links exceeds the limit of {MAX_TENSOR_LINKS}; use the lognormal-sum or exact method"
                    )));
                }
                Ok(self.tensor_ghqf(&weights, v))
            }
            Averaging::Exact if mn == 1 => Ok(mean(weights.iter().map(|t| exact_siso(t[0], self.variances[0])))),
            Averaging::Exact => Ok(self.monte_carlo(power, DEFAULT_MC_DRAWS, 0).0),
            Averaging::LognormalSum => {
                let terms = weights
                    .iter()
                    .map(|t| lognormal_sum_term(t, &self.variances))
                    .collect::<Result<Vec<_>>>()?;
                Ok(mean(terms))
            }
        }
    }

    fn tensor_ghqf(&self, weights: &[Vec<f64>], order: usize) -> f64 {
        let rule = GaussHermite::cached(order);
        let norm = PI.sqrt();
        // fading value and normalized weight of every node on every link
        let nodes: Vec<Vec<(f64, f64)>> = self
            .variances
            .iter()
            .map(|&v| {
                rule.nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, &w)| ((2.0 * x * (2.0 * v).sqrt() - 2.0 * v).exp(), w / norm))
                    .collect()
            })
            .collect();
        let dims = nodes.len();
        let total = order.pow(dims as u32);
        let parts: Vec<f64> = (0..total)
            .into_par_iter()
            .map(|mut idx| {
                let mut h = [0.0; MAX_TENSOR_LINKS];
                let mut w = 1.0;
                for (d, link) in nodes.iter().enumerate() {
                    let (hv, wv) = link[idx % order];
                    idx /= order;
                    h[d] = hv;
                    w *= wv;
                }
                w * mean(weights.iter().map(|t| q_function(dot(t, &h[..dims]))))
            })
            .collect();
        parts.iter().sum()
    }

    /// Monte Carlo average over fading; returns (mean, standard error).
    /// With more than `MC_FULL_TERMS` (bit, history) terms each draw also
    /// picks one term uniformly, which keeps the estimate unbiased at a
    /// cost independent of the channel memory.
    pub fn monte_carlo(&self, power: f64, draws: u64, seed: u64) -> (f64, f64) {
        let weights = self.term_weights(power);
        let factory = StreamFactory::new(seed);
        let chunk = 100_000u64;
        let chunks = draws.div_ceil(chunk);
        let sample_terms = weights.len() > MC_FULL_TERMS;
        let sums: Vec<(f64, f64)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = factory.stream(Domain::Oracle, c);
                let n = chunk.min(draws - c * chunk);
                let mut h = vec![0.0; self.variances.len()];
                let (mut s, mut s2) = (0.0, 0.0);
                for _ in 0..n {
                    for (hv, &v) in h.iter_mut().zip(&self.variances) {
                        *hv = crate::fading::sample_one(v, &mut rng);
                    }
                    let p = if sample_terms {
                        q_function(dot(&weights[rng.gen_range(0..weights.len())], &h))
                    } else {
                        mean(weights.iter().map(|t| q_function(dot(t, &h))))
                    };
                    s += p;
                    s2 += p * p;
                }
                (s, s2)
            })
            .collect();
        let (s, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let n = draws as f64;
        let m = s / n;
        let var = (s2 / n - m * m).max(0.0) * n / (n - 1.0);
        (m, (var / n).sqrt())
    }

    pub fn curve(&self, powers_dbm: &[f64], averaging: Averaging, scenario_hash: &str) -> Result<BerCurve> {
        let points = powers_dbm
            .iter()
            .map(|&p| Ok(BerPoint::analytic(p, self.average_ber(dbm_to_watts(p), averaging)?.clamp(0.0, 0.5))))
            .collect::<Result<Vec<_>>>()?;
        Ok(BerCurve {
            method: averaging.method(),
            detector: None,
            window: None,
            configuration: format!("{}x{}", self.transmitters, self.receivers),
            scenario_hash: scenario_hash.to_string(),
            sequence_mode: self.histories.mode,
            points,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// E[Q(a h)] for normalized lognormal h, by adaptive quadrature over the
/// standardized log-amplitude.
pub fn exact_siso(a: f64, variance: f64) -> f64 {
    if variance == 0.0 {
        return q_function(a);
    }
    let sd = variance.sqrt();
    let f = |x: f64| {
        let h = (2.0 * (sd * x - variance)).exp();
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt() * q_function(a * h)
    };
    integrate_adaptive(f, -10.0, 10.0, 1e-10, 0.0)
}

/// E[Q(sum g_ij h_ij)] with the positive and negative parts of the sum
/// each replaced by an equivalent lognormal.
fn lognormal_sum_term(weights: &[f64], variances: &[f64]) -> Result<f64> {
    let split = |positive: bool| -> Result<Option<crate::fading::EquivalentLognormal>> {
        let g: Vec<f64> = weights
            .iter()
            .map(|&w| if (w > 0.0) == positive && w != 0.0 { w.abs() } else { 0.0 })
            .collect();
        if g.iter().all(|&x| x == 0.0) {
            Ok(None)
        } else {
            lognormal_sum_approx(&g, variances).map(Some)
        }
    };
    let rule = GaussHermite::cached(DEFAULT_GHQ_ORDER);
    Ok(match (split(true)?, split(false)?) {
        (None, None) => 0.5,
        (Some(p), None) => rule.expect_normal(p.mu, p.var, |z| q_function((2.0 * z).exp())),
        (None, Some(n)) => rule.expect_normal(n.mu, n.var, |z| q_function(-(2.0 * z).exp())),
        (Some(p), Some(n)) => rule.expect_normal(p.mu, p.var, |zp| {
            rule.expect_normal(n.mu, n.var, |zn| q_function((2.0 * zp).exp() - (2.0 * zn).exp()))
        }),
    })
}
