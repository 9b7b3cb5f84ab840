//! Shot-noise-aware BER via the saddle-point approximation.
//!
//! Each half slot yields Poisson photoelectron counts plus Gaussian thermal
//! noise. A bit is in error when the chip that should be dark collects more
//! than the chip carrying the pulse. With A = u_wrong - u_right,
//!
//!   Phi(s) = var s^2 + m_w (e^s - 1) + m_r (e^-s - 1) - ln s,
//!
//! and P(A > 0) ~ exp(Phi(s0)) / sqrt(2 pi Phi''(s0)) at the positive root
//! s0 of Phi'.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ber_analytic::{Averaging, LinkSystem, MAX_TENSOR_LINKS};
use crate::curve::{dbm_to_watts, BerCurve, BerPoint, Method};
use crate::error::{Error, Result};
use crate::fading::lognormal_sum_approx;
use crate::numerics::{integrate_adaptive, q_function, GaussHermite};
use crate::rng::{Domain, StreamFactory};
use crate::scenario::Scenario;

/// Poisson means of the two half slots and the thermal variance, in
/// photoelectron counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountModel {
    /// Mean of the chip that should be empty.
    pub wrong: f64,
    /// Mean of the chip carrying the pulse.
    pub right: f64,
    /// Thermal variance of one half-slot statistic (counts^2).
    pub thermal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleResult {
    pub s: f64,
    pub phi: f64,
    pub phi2: f64,
    pub ber: f64,
    /// Set when the statistic has non-negative mean or no root was
    /// bracketed: the BER is in the 0.5 regime.
    pub weak: bool,
}

/// Log-MGF of a Poisson(m) plus Normal(0, var) half-slot count.
pub fn log_mgf_half_slot(mean: f64, variance: f64, s: f64) -> f64 {
    0.5 * variance * s * s + mean * s.exp_m1()
}

impl CountModel {
    fn phi(&self, s: f64) -> f64 {
        self.thermal * s * s + self.wrong * s.exp_m1() + self.right * (-s).exp_m1() - s.ln()
    }

    fn dphi(&self, s: f64) -> f64 {
        2.0 * self.thermal * s + self.wrong * s.exp() - self.right * (-s).exp() - 1.0 / s
    }

    fn d2phi(&self, s: f64) -> f64 {
        2.0 * self.thermal + self.wrong * s.exp() + self.right * (-s).exp() + 1.0 / (s * s)
    }

    /// Upper end of the root search: where the growing exponential reaches
    /// 1e15 times the larger mean.
    fn search_cap(&self) -> f64 {
        let big = self.wrong.max(self.right).max(1.0);
        if self.wrong > 0.0 {
            (1e15 * big / self.wrong).ln().max(1.0)
        } else {
            1e15_f64.ln() * big.max(1.0 / self.thermal.max(1e-300).sqrt())
        }
    }
}

/// Saddle-point tail probability P(u_wrong - u_right > 0).
pub fn saddle_ber(model: &CountModel) -> SaddleResult {
    let weak_result = |s: f64| SaddleResult {
        s,
        phi: f64::NAN,
        phi2: f64::NAN,
        ber: 0.5,
        weak: true,
    };
    let lo0 = 1e-12;
    let cap = model.search_cap();
    let mut hi = 1.0f64.min(cap);
    while model.dphi(hi) <= 0.0 {
        if hi >= cap {
            return weak_result(hi);
        }
        hi = (hi * 2.0).min(cap);
    }
    let mut lo = lo0;
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let d = model.dphi(s);
        let d2 = model.d2phi(s);
        if d.abs() < 1e-10 * d2.abs() {
            break;
        }
        if d < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = s - d / d2;
        s = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    let phi = model.phi(s);
    let phi2 = model.d2phi(s);
    let ber = phi.exp() / (2.0 * PI * phi2).sqrt();
    // a statistic with non-negative mean errs at least half the time
    let weak = model.wrong >= model.right || !(ber < 0.5);
    SaddleResult {
        s,
        phi,
        phi2,
        ber: if weak { 0.5 } else { ber },
        weak,
    }
}

fn ln_poisson(k: usize, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * mean.ln() - mean - libm::lgamma(k as f64 + 1.0)
}

/// Exact P(u_wrong - u_right > 0) by summing the Skellam distribution of
/// the count difference against the Gaussian thermal tail. Counts are
/// truncated at `max_count`.
pub fn brute_force_ber(model: &CountModel, max_count: usize) -> f64 {
    let pw: Vec<f64> = (0..=max_count).map(|k| ln_poisson(k, model.wrong).exp()).collect();
    let pr: Vec<f64> = (0..=max_count).map(|k| ln_poisson(k, model.right).exp()).collect();
    let sd = (2.0 * model.thermal).sqrt();
    let mut total = 0.0;
    for (d, _) in (-(max_count as i64)..=max_count as i64).zip(0..) {
        // P(K_w - K_r = d)
        let p: f64 = if d >= 0 {
            let d = d as usize;
            (0..=max_count - d).map(|j| pw[j + d] * pr[j]).sum()
        } else {
            let d = (-d) as usize;
            (0..=max_count - d).map(|j| pw[j] * pr[j + d]).sum()
        };
        if p > 0.0 {
            let tail = if sd > 0.0 {
                q_function(-(d as f64) / sd)
            } else if d > 0 {
                1.0
            } else if d == 0 {
                0.5
            } else {
                0.0
            };
            total += p * tail;
        }
    }
    total
}

/// Count-domain noise of a receiver array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountNoise {
    /// Background photoelectron rate summed over the array (1/s).
    pub background_rate: f64,
    /// Dark-current electron rate of one receiver (1/s).
    pub dark_rate: f64,
    /// Thermal variance of one receiver per half slot (counts^2).
    pub thermal: f64,
    pub receivers: usize,
    pub chip_duration: f64,
    pub electron_charge: f64,
}

impl CountNoise {
    pub fn for_scenario(s: &Scenario) -> Self {
        let k = &s.constants;
        let n = &s.noise;
        let photon_energy = k.planck * k.light_speed / s.source.wavelength;
        let tc = s.modem.chip_duration();
        let b = s.modem.bandwidth();
        Self {
            background_rate: 2.0 * n.quantum_efficiency * n.background_power() * b * tc / photon_energy,
            dark_rate: 2.0 * n.dark_current * b * tc / k.electron_charge,
            thermal: 4.0 * k.boltzmann * n.temperature * b * tc * tc / (n.load_resistance * k.electron_charge.powi(2)),
            receivers: s.layout.receivers,
            chip_duration: tc,
            electron_charge: k.electron_charge,
        }
    }

    /// Background plus dark counts per half slot.
    pub fn background_mean(&self) -> f64 {
        (self.background_rate + self.receivers as f64 * self.dark_rate) * self.chip_duration
    }

    /// Thermal variance of the combined statistic per half slot.
    pub fn combined_thermal(&self) -> f64 {
        self.receivers as f64 * self.thermal
    }
}

/// Photon-counting view of a [`LinkSystem`].
pub struct PhotonCounting<'a> {
    pub system: &'a LinkSystem,
    pub noise: CountNoise,
    /// Per term (b0 x history): per-link (wrong, right) charges per watt.
    terms: Vec<Vec<(f64, f64)>>,
}

impl<'a> PhotonCounting<'a> {
    pub fn new(system: &'a LinkSystem, noise: CountNoise) -> Self {
        let terms = [false, true]
            .iter()
            .flat_map(|&b0| system.histories.histories.iter().map(move |h| (b0, h)))
            .map(|(b0, h)| {
                system
                    .links
                    .iter()
                    .map(|l| {
                        let (f, s) = l.slot_charges(b0, h);
                        if b0 {
                            (f, s)
                        } else {
                            (s, f)
                        }
                    })
                    .collect()
            })
            .collect();
        Self { system, noise, terms }
    }

    /// Count models for every term at total power `power` and fading `h`.
    fn models(&self, power: f64, h: &[f64]) -> impl Iterator<Item = CountModel> + '_ {
        let per_tx = power / self.system.transmitters as f64 / self.noise.electron_charge;
        let bg = self.noise.background_mean();
        let thermal = self.noise.combined_thermal();
        let h = h.to_vec();
        self.terms.iter().map(move |t| {
            let (w, r) = t.iter().zip(&h).fold((0.0, 0.0), |(w, r), ((cw, cr), hv)| (w + hv * cw, r + hv * cr));
            CountModel {
                wrong: bg + per_tx * w,
                right: bg + per_tx * r,
                thermal,
            }
        })
    }

    pub fn conditional_ber(&self, power: f64, h: &[f64]) -> f64 {
        let n = self.terms.len() as f64;
        self.models(power, h).map(|m| saddle_ber(&m).ber).sum::<f64>() / n
    }

    pub fn average_ber(&self, power: f64, averaging: Averaging) -> Result<f64> {
        let vars = &self.system.variances;
        let mn = vars.len();
        if vars.iter().all(|&v| v == 0.0) {
            return Ok(self.conditional_ber(power, &vec![1.0; mn]));
        }
        match averaging {
            Averaging::Ghqf(v) if v < 2 => Err(Error::Domain("Gauss-Hermite order must be at least 2".into())),
            Averaging::Ghqf(_) if mn > MAX_TENSOR_LINKS => Err(Error::Refused(format!(
                "tensor Gauss-Hermite over {mn} links exceeds the limit of {MAX_TENSOR_LINKS}"
            ))),
            Averaging::Ghqf(v) => Ok(self.tensor_ghqf(power, v)),
            Averaging::Exact if mn == 1 => {
                let var = vars[0];
                let sd = var.sqrt();
                Ok(integrate_adaptive(
                    |x| {
                        let h = (2.0 * (sd * x - var)).exp();
                        (-0.5 * x * x).exp() / (2.0 * PI).sqrt() * self.conditional_ber(power, &[h])
                    },
                    -10.0,
                    10.0,
                    1e-8,
                    0.0,
                ))
            }
            Averaging::Exact => Ok(self.monte_carlo(power, 1_000_000, 0)),
            Averaging::LognormalSum => self.lognormal_sum(power),
        }
    }

    fn tensor_ghqf(&self, power: f64, order: usize) -> f64 {
        let rule = GaussHermite::cached(order);
        let norm = PI.sqrt();
        let vars = &self.system.variances;
        let dims = vars.len();
        let total = order.pow(dims as u32);
        let parts: Vec<f64> = (0..total)
            .into_par_iter()
            .map(|mut idx| {
                let mut h = vec![0.0; dims];
                let mut w = 1.0;
                for (d, &v) in vars.iter().enumerate() {
                    let q = idx % order;
                    idx /= order;
                    h[d] = (2.0 * rule.nodes[q] * (2.0 * v).sqrt() - 2.0 * v).exp();
                    w *= rule.weights[q] / norm;
                }
                w * self.conditional_ber(power, &h)
            })
            .collect();
        parts.iter().sum()
    }

    fn monte_carlo(&self, power: f64, draws: u64, seed: u64) -> f64 {
        let factory = StreamFactory::new(seed);
        let chunk = 10_000u64;
        let parts: Vec<f64> = (0..draws.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let mut rng = factory.stream(Domain::Oracle, c);
                let n = chunk.min(draws - c * chunk);
                (0..n)
                    .map(|_| {
                        let h: Vec<f64> = self
                            .system
                            .variances
                            .iter()
                            .map(|&v| crate::fading::sample_one(v, &mut rng))
                            .collect();
                        self.conditional_ber(power, &h)
                    })
                    .sum::<f64>()
            })
            .collect();
        parts.iter().sum::<f64>() / draws as f64
    }

    /// One equivalent lognormal per term for the combined signal
    /// sum (a + c) h; the wrong and right means keep their unfaded ratio.
    fn lognormal_sum(&self, power: f64) -> Result<f64> {
        let per_tx = power / self.system.transmitters as f64 / self.noise.electron_charge;
        let bg = self.noise.background_mean();
        let thermal = self.noise.combined_thermal();
        let rule = GaussHermite::cached(crate::ber_analytic::DEFAULT_GHQ_ORDER);
        let mut total = 0.0;
        for t in &self.terms {
            let sums: Vec<f64> = t.iter().map(|(w, r)| w + r).collect();
            let (sw, sr) = t.iter().fold((0.0, 0.0), |a, (w, r)| (a.0 + w, a.1 + r));
            let p = if sw + sr <= 0.0 {
                saddle_ber(&CountModel {
                    wrong: bg,
                    right: bg,
                    thermal,
                })
                .ber
            } else {
                let e = lognormal_sum_approx(&sums, &self.system.variances)?;
                rule.expect_normal(e.mu, e.var, |z| {
                    let alpha = (2.0 * z).exp() / (sw + sr);
                    saddle_ber(&CountModel {
                        wrong: bg + per_tx * sw * alpha,
                        right: bg + per_tx * sr * alpha,
                        thermal,
                    })
                    .ber
                })
            };
            total += p;
        }
        Ok(total / self.terms.len() as f64)
    }

    pub fn curve(&self, powers_dbm: &[f64], averaging: Averaging, scenario_hash: &str) -> Result<BerCurve> {
        let points = powers_dbm
            .iter()
            .map(|&p| Ok(BerPoint::analytic(p, self.average_ber(dbm_to_watts(p), averaging)?.clamp(0.0, 0.5))))
            .collect::<Result<Vec<_>>>()?;
        Ok(BerCurve {
            method: Method::SaddlePoint,
            detector: None,
            window: None,
            configuration: format!("{}x{}", self.system.transmitters, self.system.receivers),
            scenario_hash: scenario_hash.to_string(),
            sequence_mode: self.system.histories.mode,
            points,
        })
    }
}
