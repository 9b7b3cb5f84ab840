//! BER-versus-power curves shared by the analytic, photon-counting and
//! waveform engines.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::bisect_decreasing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AnalyticGhqf,
    AnalyticExact,
    LognormalSum,
    SaddlePoint,
    WaveformMc,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::AnalyticGhqf => "analytic-ghqf",
            Method::AnalyticExact => "analytic-exact",
            Method::LognormalSum => "lognormal-sum",
            Method::SaddlePoint => "saddle-point",
            Method::WaveformMc => "waveform-mc",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [
            Method::AnalyticGhqf,
            Method::AnalyticExact,
            Method::LognormalSum,
            Method::SaddlePoint,
            Method::WaveformMc,
        ]
        .into_iter()
        .find(|m| m.tag() == tag)
    }
}

/// How bit histories were averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceMode {
    #[serde(rename = "exact-2^L")]
    Exhaustive,
    #[serde(rename = "sampled")]
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub power_dbm: f64,
    pub power_w: f64,
    pub ber: f64,
    /// Monte Carlo only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<u64>,
    /// 95% confidence interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<(f64, f64)>,
    /// Set when the point carries no statistical information, e.g. a
    /// noiseless simulation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl BerPoint {
    pub fn analytic(power_dbm: f64, ber: f64) -> Self {
        Self {
            power_dbm,
            power_w: dbm_to_watts(power_dbm),
            ber,
            frames: None,
            bits: None,
            errors: None,
            interval: None,
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerCurve {
    pub method: Method,
    /// "SBSD", "GMSD", "MSD" for waveform curves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<String>,
    /// Detection window length for waveform curves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    pub configuration: String,
    pub scenario_hash: String,
    pub sequence_mode: SequenceMode,
    pub points: Vec<BerPoint>,
}

impl BerCurve {
    pub fn validate(&self) -> Result<()> {
        if self.points.windows(2).any(|w| !(w[1].power_dbm > w[0].power_dbm)) {
            return Err(Error::Domain("powers must be strictly increasing".into()));
        }
        if self.points.iter().any(|p| !(0.0..=0.5).contains(&p.ber)) {
            return Err(Error::Domain("BER outside [0, 0.5]".into()));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if self.method == Method::WaveformMc {
            s.push_str("power_dBm,ber,frames,errors,detector,P\n");
            for p in &self.points {
                let _ = writeln!(
                    s,
                    "{},{:e},{},{},{},{}",
                    p.power_dbm,
                    p.ber,
                    p.frames.unwrap_or(0),
                    p.errors.unwrap_or(0),
                    self.detector.as_deref().unwrap_or(""),
                    self.window.unwrap_or(1)
                );
            }
        } else {
            s.push_str("power_dBm,ber,method\n");
            for p in &self.points {
                let _ = writeln!(s, "{},{:e},{}", p.power_dbm, p.ber, self.method.tag());
            }
        }
        s
    }

    /// Power (dBm) at which the curve crosses `target`, interpolating
    /// linearly in log BER.
    pub fn power_at(&self, target: f64) -> Option<f64> {
        self.points.windows(2).find_map(|w| {
            let (a, b) = (&w[0], &w[1]);
            if a.ber >= target && b.ber <= target && b.ber > 0.0 && a.ber > b.ber {
                let f = (a.ber.ln() - target.ln()) / (a.ber.ln() - b.ber.ln());
                Some(a.power_dbm + f * (b.power_dbm - a.power_dbm))
            } else {
                None
            }
        })
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

/// Power sweep in dBm, inclusive of `stop` when it lies on the grid.
pub fn sweep(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::Domain("sweep needs step > 0 and stop >= start".into()));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Power (dBm) where a BER function of power (dBm) falls to `target`,
/// by bisection on log BER.
pub fn required_power(ber: impl Fn(f64) -> f64, target: f64, lo_dbm: f64, hi_dbm: f64) -> Option<f64> {
    bisect_decreasing(|p| ber(p).max(1e-300).ln(), target.ln(), lo_dbm, hi_dbm, 1e-4)
}
