//! Fading-free impulse responses and the channel statistics derived from
//! them.
//!
//! An FFIR is a 100-bin histogram of detected weight against arrival time,
//! normalized by the number of launched photons. For convolution each bin
//! is treated as an impulse at its midpoint, and the time origin is the
//! midpoint of the first bin, so propagation delay is removed and the
//! ballistic peak lands entirely in slot 0.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::{DetectedPhoton, TraceResult};

pub const DEFAULT_BINS: usize = 100;
/// Tail fraction below which later slots are ignored as ISI.
pub const MEMORY_TAIL_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfirHistogram {
    /// Earliest arrival time (s).
    pub start: f64,
    /// Uniform bin width (s); zero when every arrival is simultaneous.
    pub bin_width: f64,
    /// Weight per bin divided by launched photons.
    pub masses: Vec<f64>,
    pub transmitter: usize,
    pub receiver: usize,
}

impl FfirHistogram {
    /// Marker for a link with no detected photons.
    pub fn zero(transmitter: usize, receiver: usize) -> Self {
        Self {
            start: 0.0,
            bin_width: 0.0,
            masses: Vec::new(),
            transmitter,
            receiver,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.total_mass() <= 0.0
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn bin_starts(&self) -> Vec<f64> {
        (0..self.masses.len())
            .map(|i| self.start + i as f64 * self.bin_width)
            .collect()
    }

    /// Bin width used for analysis; a degenerate histogram takes
    /// `slot / 100` so that convolutions stay defined.
    pub fn effective_width(&self, slot: f64) -> f64 {
        if self.bin_width > 0.0 {
            self.bin_width
        } else {
            slot / DEFAULT_BINS as f64
        }
    }

    /// Mass per unit time (1/s).
    pub fn density(&self, slot: f64) -> Vec<f64> {
        let w = self.effective_width(slot);
        self.masses.iter().map(|m| m / w).collect()
    }

    /// Impulse delays relative to the first bin midpoint, with masses.
    pub fn impulses(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.masses
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(move |(i, &m)| (i as f64 * self.bin_width, m))
    }
}

/// Histograms detected photons into `bins` equal intervals spanning the
/// earliest to latest arrival.
pub fn bin_ffir(photons: &[DetectedPhoton], launched: u64, bins: usize, transmitter: usize, receiver: usize) -> Result<FfirHistogram> {
    if bins == 0 || launched == 0 {
        return Err(Error::Domain("bin count and photon count must be positive".into()));
    }
    if photons.is_empty() {
        return Ok(FfirHistogram::zero(transmitter, receiver));
    }
    let (lo, hi) = photons
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.time), hi.max(p.time)));
    let span = hi - lo;
    let mut masses = vec![0.0; bins];
    if span <= 0.0 {
        masses[0] = photons.iter().map(|p| p.weight).sum();
    } else {
        let width = span / bins as f64;
        for p in photons {
            let k = (((p.time - lo) / width) as usize).min(bins - 1);
            masses[k] += p.weight;
        }
    }
    let n = launched as f64;
    masses.iter_mut().for_each(|m| *m /= n);
    Ok(FfirHistogram {
        start: lo,
        bin_width: if span > 0.0 { span / bins as f64 } else { 0.0 },
        masses,
        transmitter,
        receiver,
    })
}

/// FFIRs of every link of a trace, row-major over transmitters.
pub fn link_ffirs(trace: &TraceResult, bins: usize) -> Result<Vec<FfirHistogram>> {
    (0..trace.transmitters)
        .flat_map(|i| (0..trace.receivers).map(move |j| (i, j)))
        .map(|(i, j)| bin_ffir(trace.link(i, j), trace.photons, bins, i, j))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossProfile {
    pub slot: f64,
    pub coefficients: Vec<f64>,
}

impl LossProfile {
    pub fn total(&self) -> f64 {
        self.coefficients.iter().sum()
    }

    /// Smallest k whose tail beyond slot k carries less than
    /// [`MEMORY_TAIL_FRACTION`] of the total.
    pub fn memory(&self) -> usize {
        let total = self.total();
        if total <= 0.0 {
            return 0;
        }
        let mut tail = total;
        for (k, rho) in self.coefficients.iter().enumerate() {
            tail -= rho;
            if tail < MEMORY_TAIL_FRACTION * total {
                return k;
            }
        }
        self.coefficients.len().saturating_sub(1)
    }
}

/// Length of the overlap between `[a0, a1]` and `[b0, b1]`.
pub fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Fraction of a rectangular pulse of width `slot` received in each of
/// the first `count` slots.
pub fn loss_coefficients(ffir: &FfirHistogram, slot: f64, count: usize) -> Result<LossProfile> {
    if !(slot > 0.0) {
        return Err(Error::Domain("slot duration must be positive".into()));
    }
    let mut coefficients = vec![0.0; count];
    for (tau, m) in ffir.impulses() {
        let first = (tau / slot).floor() as usize;
        for (k, c) in coefficients.iter_mut().enumerate().skip(first).take(2) {
            let lo = k as f64 * slot;
            *c += m * overlap(tau, tau + slot, lo, lo + slot) / slot;
        }
    }
    Ok(LossProfile { slot, coefficients })
}

/// Number of slots needed to hold the whole response plus one.
pub fn slots_spanned(ffir: &FfirHistogram, slot: f64) -> usize {
    let last = ffir.impulses().map(|(t, _)| t).fold(0.0, f64::max);
    (last / slot).floor() as usize + 2
}

/// Loss profile over the full support.
pub fn full_loss_profile(ffir: &FfirHistogram, slot: f64) -> Result<LossProfile> {
    loss_coefficients(ffir, slot, slots_spanned(ffir, slot))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelaySpread {
    /// Mean delay relative to the first bin centre (s).
    pub mean_delay: f64,
    pub rms: f64,
}

/// Mean delay and RMS delay spread with squared-response weighting at bin
/// centres.
pub fn rms_delay_spread(ffir: &FfirHistogram) -> Option<DelaySpread> {
    if ffir.is_zero() {
        return None;
    }
    let w = ffir.bin_width;
    let h2 = |m: f64| m * m;
    let (mut s0, mut s1) = (0.0, 0.0);
    for (i, &m) in ffir.masses.iter().enumerate() {
        s0 += h2(m);
        s1 += i as f64 * w * h2(m);
    }
    let mean = s1 / s0;
    let var = ffir
        .masses
        .iter()
        .enumerate()
        .map(|(i, &m)| (i as f64 * w - mean).powi(2) * h2(m))
        .sum::<f64>()
        / s0;
    Some(DelaySpread {
        mean_delay: mean,
        rms: var.max(0.0).sqrt(),
    })
}

/// Impulse response on a uniform grid: tap `n` holds the mass arriving
/// `n * step` after the first bin centre.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResponse {
    pub step: f64,
    pub taps: Vec<f64>,
}

impl GridResponse {
    /// Rounds each FFIR impulse to the nearest grid point, dropping
    /// everything later than `horizon` seconds.
    pub fn from_ffir(ffir: &FfirHistogram, step: f64, horizon: f64) -> Self {
        let max_n = (horizon / step).ceil() as usize;
        let mut taps = Vec::new();
        for (tau, m) in ffir.impulses() {
            let n = (tau / step).round() as usize;
            if n > max_n {
                continue;
            }
            if taps.len() <= n {
                taps.resize(n + 1, 0.0);
            }
            taps[n] += m;
        }
        Self { step, taps }
    }

    pub fn delta(step: f64, mass: f64) -> Self {
        Self { step, taps: vec![mass] }
    }

    pub fn total_mass(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Response to a unit-height pulse lasting `width` grid samples,
    /// sampled at the grid points (per unit transmitted power).
    pub fn pulse_response(&self, width: usize) -> Vec<f64> {
        if self.taps.is_empty() {
            return Vec::new();
        }
        let mut out = vec![0.0; self.taps.len() + width - 1];
        for (n, &m) in self.taps.iter().enumerate() {
            if m != 0.0 {
                out[n..n + width].iter_mut().for_each(|v| *v += m);
            }
        }
        out
    }
}

pub const MAP_PIXELS: usize = 40;
pub const MAP_EXTENT: f64 = 3.0;
/// Value of pixels that received nothing (dB).
pub const MAP_FLOOR_DB: f64 = -200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMap {
    pub pixels: usize,
    /// Side of the square area (m), centred on the axis.
    pub extent: f64,
    pub gate_start: f64,
    pub window: f64,
    /// Row-major, rows along y and columns along x, in dB.
    pub values: Vec<f64>,
}

impl SpatialMap {
    pub fn pixel_size(&self) -> f64 {
        self.extent / self.pixels as f64
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.pixels + col]
    }

    /// Max minus min over lit pixels (dB).
    pub fn dynamic_range(&self) -> f64 {
        let lit = self.values.iter().copied().filter(|&v| v > MAP_FLOOR_DB);
        let (lo, hi) = lit.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.pixels) {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }
}

/// Received power per pixel over `[gate_start, gate_start + window]`.
pub fn spatial_map(photons: &[DetectedPhoton], launched: u64, window: f64, gate_start: f64) -> Result<SpatialMap> {
    if !(window > 0.0) || launched == 0 {
        return Err(Error::Domain("window and photon count must be positive".into()));
    }
    let n = MAP_PIXELS;
    let half = MAP_EXTENT / 2.0;
    let size = MAP_EXTENT / n as f64;
    let mut sums = vec![0.0; n * n];
    for p in photons {
        if p.time < gate_start || p.time > gate_start + window {
            continue;
        }
        let col = ((p.x + half) / size).floor();
        let row = ((p.y + half) / size).floor();
        if (0.0..n as f64).contains(&col) && (0.0..n as f64).contains(&row) {
            sums[row as usize * n + col as usize] += p.weight;
        }
    }
    let values = sums
        .into_iter()
        .map(|w| {
            if w > 0.0 {
                10.0 * (w / launched as f64).log10()
            } else {
                MAP_FLOOR_DB
            }
        })
        .collect();
    Ok(SpatialMap {
        pixels: n,
        extent: MAP_EXTENT,
        gate_start,
        window,
        values,
    })
}

/// Metadata stored in an FFIR cache file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub transport_hash: String,
    pub photons: u64,
    pub seed: u64,
    pub code_version: String,
}

const CACHE_MAGIC: &str = "# uvlc-ffir 1";

pub fn write_ffir_cache<W: Write>(mut w: W, meta: &CacheMeta, ffir: &FfirHistogram) -> Result<()> {
    writeln!(w, "{CACHE_MAGIC}")?;
    writeln!(w, "# transport_hash={}", meta.transport_hash)?;
    writeln!(w, "# photons={}", meta.photons)?;
    writeln!(w, "# seed={}", meta.seed)?;
    writeln!(w, "# code_version={}", meta.code_version)?;
    writeln!(w, "# transmitter={}", ffir.transmitter)?;
    writeln!(w, "# receiver={}", ffir.receiver)?;
    writeln!(w, "# start={:e}", ffir.start)?;
    writeln!(w, "# bin_width={:e}", ffir.bin_width)?;
    writeln!(w, "t_start,mass")?;
    for (t, m) in ffir.bin_starts().iter().zip(&ffir.masses) {
        writeln!(w, "{t:e},{m:e}")?;
    }
    Ok(())
}

pub fn read_ffir_cache<R: BufRead>(r: R) -> Result<(CacheMeta, FfirHistogram)> {
    let corrupt = |m: &str| Error::Corrupt(format!("FFIR cache: {m}"));
    let mut lines = r.lines();
    let first = lines.next().transpose()?.ok_or_else(|| corrupt("empty file"))?;
    if first.trim_end() != CACHE_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut fields = std::collections::HashMap::new();
    let mut masses = Vec::new();
    let mut seen_columns = false;
    for line in lines {
        let line = line?;
        if let Some(kv) = line.strip_prefix("# ") {
            let (k, v) = kv.split_once('=').ok_or_else(|| corrupt("bad header line"))?;
            fields.insert(k.to_string(), v.to_string());
        } else if line == "t_start,mass" {
            seen_columns = true;
        } else if !line.is_empty() {
            let (_, m) = line.split_once(',').ok_or_else(|| corrupt("bad row"))?;
            masses.push(m.parse::<f64>().map_err(|_| corrupt("bad mass"))?);
        }
    }
    if !seen_columns {
        return Err(corrupt("missing column header"));
    }
    let get = |k: &str| fields.get(k).cloned().ok_or_else(|| corrupt(&format!("missing {k}")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| corrupt(k)) };
    let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| corrupt(k)) };
    let meta = CacheMeta {
        transport_hash: get("transport_hash")?,
        photons: int("photons")?,
        seed: int("seed")?,
        code_version: get("code_version")?,
    };
    let ffir = FfirHistogram {
        start: num("start")?,
        bin_width: num("bin_width")?,
        masses,
        transmitter: int("transmitter")? as usize,
        receiver: int("receiver")? as usize,
    };
    if ffir.masses.iter().any(|m| !(*m >= 0.0)) {
        return Err(corrupt("negative mass"));
    }
    Ok((meta, ffir))
}
