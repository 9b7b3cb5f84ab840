//! On-disk FFIR cache keyed by transport hash, photon count and seed.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use uvlc::dump::{DumpHeader, DumpWriter};
use uvlc::metrics::{bin_ffir, read_ffir_cache, write_ffir_cache, CacheMeta, FfirHistogram, DEFAULT_BINS, MAP_EXTENT};
use uvlc::scenario::Scenario;
use uvlc::transport::{assign_to_receivers, trace_with_sink, TransportConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where the FFIRs of one (scenario, photons, seed) triple live.
pub struct CacheEntry {
    pub dir: PathBuf,
    meta: CacheMeta,
    transmitters: usize,
    receivers: usize,
}

impl CacheEntry {
    pub fn new(root: &Path, scenario: &Scenario, photons: u64, seed: u64) -> Self {
        let meta = CacheMeta {
            transport_hash: scenario.transport_hash(),
            photons,
            seed,
            code_version: VERSION.to_string(),
        };
        let dir = root.join(format!("{}-n{photons}-s{seed}", &meta.transport_hash[..16]));
        Self {
            dir,
            meta,
            transmitters: scenario.layout.transmitters,
            receivers: scenario.layout.receivers,
        }
    }

    fn path(&self, tx: usize, rx: usize) -> PathBuf {
        self.dir.join(format!("ffir-{tx}-{rx}.csv"))
    }

    /// Every link FFIR, or `None` when any file is missing or stale.
    /// Unreadable files are reported and treated as misses.
    pub fn load(&self) -> Option<Vec<FfirHistogram>> {
        let mut out = Vec::new();
        for tx in 0..self.transmitters {
            for rx in 0..self.receivers {
                let path = self.path(tx, rx);
                let file = File::open(&path).ok()?;
                match read_ffir_cache(BufReader::new(file)) {
                    Ok((meta, ffir)) if meta.transport_hash == self.meta.transport_hash && meta.photons == self.meta.photons && meta.seed == self.meta.seed => {
                        out.push(ffir)
                    }
                    Ok(_) => return None,
                    Err(e) => {
                        eprintln!("warning: {} unusable ({e}); re-tracing", path.display());
                        return None;
                    }
                }
            }
        }
        Some(out)
    }

    pub fn store(&self, ffirs: &[FfirHistogram]) -> anyhow::Result<()> {
        fs::create_dir_all(&self.dir)?;
        for f in ffirs {
            let mut w = BufWriter::new(File::create(self.path(f.transmitter, f.receiver))?);
            write_ffir_cache(&mut w, &self.meta, f)?;
            w.flush()?;
        }
        Ok(())
    }
}

/// Traces `scenario` and bins every link, optionally streaming plane
/// crossings to a photon dump.
pub fn trace_ffirs(scenario: &Scenario, photons: u64, seed: u64, dump: Option<&Path>) -> anyhow::Result<Vec<FfirHistogram>> {
    let mut config = TransportConfig::with_photons(photons, seed);
    let mut writer = match dump {
        Some(path) => {
            config.capture_half_width = Some(MAP_EXTENT / 2.0);
            let header = DumpHeader {
                transport_hash: scenario.transport_hash(),
                seed,
                photons,
                transmitters: scenario.layout.transmitters as u32,
            };
            Some(DumpWriter::create(path, &header)?)
        }
        None => None,
    };
    let n = scenario.layout.receivers;
    let mut links = vec![Vec::new(); scenario.layout.transmitters * n];
    trace_with_sink(scenario, &config, |tx, batch| {
        for (j, list) in assign_to_receivers(scenario, batch).into_iter().enumerate() {
            links[tx * n + j].extend(list);
        }
        match writer.as_mut() {
            Some(w) => w.write_batch(tx, batch),
            None => Ok(()),
        }
    })?;
    if let Some(w) = writer {
        w.finish()?;
    }
    links
        .iter()
        .enumerate()
        .map(|(k, l)| Ok(bin_ffir(l, photons, DEFAULT_BINS, k / n, k % n)?))
        .collect()
}

/// Cached FFIRs, tracing on a miss. Returns whether the cache was hit.
pub fn ffirs(root: &Path, scenario: &Scenario, photons: u64, seed: u64, dump: Option<&Path>) -> anyhow::Result<(Vec<FfirHistogram>, bool)> {
    let entry = CacheEntry::new(root, scenario, photons, seed);
    if dump.is_none() {
        if let Some(f) = entry.load() {
            return Ok((f, true));
        }
    }
    let f = trace_ffirs(scenario, photons, seed, dump)?;
    entry.store(&f)?;
    Ok((f, false))
}
