//! Raw detected-photon dump for re-binning without re-tracing.
//!
//! Layout (little endian): magic `UVLCPHD1`, hash length (u32) and UTF-8
//! hash, seed (u64), photons per transmitter (u64), transmitter count (u32),
//! then chunks. Each chunk is a transmitter index (u32), a record count
//! `n` (u64) and five columns of `n` f64 values: t, x, y, zenith, W.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::transport::DetectedPhoton;

const MAGIC: &[u8; 8] = b"UVLCPHD1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpHeader {
    pub transport_hash: String,
    pub seed: u64,
    pub photons: u64,
    pub transmitters: u32,
}

pub struct DumpWriter<W: Write> {
    inner: W,
    transmitters: u32,
}

impl DumpWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: &DumpHeader) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> DumpWriter<W> {
    pub fn new(mut inner: W, header: &DumpHeader) -> Result<Self> {
        inner.write_all(MAGIC)?;
        let hash = header.transport_hash.as_bytes();
        inner.write_all(&(hash.len() as u32).to_le_bytes())?;
        inner.write_all(hash)?;
        inner.write_all(&header.seed.to_le_bytes())?;
        inner.write_all(&header.photons.to_le_bytes())?;
        inner.write_all(&header.transmitters.to_le_bytes())?;
        Ok(Self {
            inner,
            transmitters: header.transmitters,
        })
    }

    pub fn write_batch(&mut self, transmitter: usize, batch: &[DetectedPhoton]) -> Result<()> {
        if transmitter as u32 >= self.transmitters {
            return Err(Error::Domain(format!("transmitter {transmitter} out of range")));
        }
        if batch.is_empty() {
            return Ok(());
        }
        self.inner.write_all(&(transmitter as u32).to_le_bytes())?;
        self.inner.write_all(&(batch.len() as u64).to_le_bytes())?;
        let columns: [fn(&DetectedPhoton) -> f64; 5] = [|p| p.time, |p| p.x, |p| p.y, |p| p.zenith, |p| p.weight];
        for col in columns {
            for p in batch {
                self.inner.write_all(&col(p).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

fn read_exact_or_corrupt<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Corrupt("photon dump truncated".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_corrupt(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_corrupt(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a whole dump, returning the header and plane hits per transmitter
/// in the order they were written.
pub fn read_dump<R: Read>(mut r: R) -> Result<(DumpHeader, Vec<Vec<DetectedPhoton>>)> {
    let mut magic = [0u8; 8];
    read_exact_or_corrupt(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Corrupt("not a photon dump".into()));
    }
    let len = read_u32(&mut r)? as usize;
    if len > 1024 {
        return Err(Error::Corrupt("implausible hash length".into()));
    }
    let mut hash = vec![0u8; len];
    read_exact_or_corrupt(&mut r, &mut hash)?;
    let header = DumpHeader {
        transport_hash: String::from_utf8(hash).map_err(|_| Error::Corrupt("hash is not UTF-8".into()))?,
        seed: read_u64(&mut r)?,
        photons: read_u64(&mut r)?,
        transmitters: read_u32(&mut r)?,
    };
    let mut out = vec![Vec::new(); header.transmitters as usize];
    loop {
        let mut b = [0u8; 4];
        match r.read(&mut b[..1])? {
            0 => break,
            _ => read_exact_or_corrupt(&mut r, &mut b[1..])?,
        }
        let tx = u32::from_le_bytes(b) as usize;
        let n = read_u64(&mut r)? as usize;
        if tx >= out.len() || n > header.photons as usize {
            return Err(Error::Corrupt("invalid chunk header".into()));
        }
        let mut cols = vec![0.0f64; 5 * n];
        let mut buf = [0u8; 8];
        for v in cols.iter_mut() {
            read_exact_or_corrupt(&mut r, &mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        out[tx].extend((0..n).map(|i| DetectedPhoton {
            time: cols[i],
            x: cols[n + i],
            y: cols[2 * n + i],
            zenith: cols[3 * n + i],
            weight: cols[4 * n + i],
        }));
    }
    Ok((header, out))
}

pub fn read_dump_file(path: &Path) -> Result<(DumpHeader, Vec<Vec<DetectedPhoton>>)> {
    read_dump(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::presets;
    use crate::transport::{assign_to_receivers, trace_photons, trace_with_sink, TransportConfig};

    #[test]
    fn dump_round_trip_rebins_exactly() {
        let s = presets::by_name("led-harbor-10m").unwrap();
        let mut cfg = TransportConfig::with_photons(20_000, 4);
        cfg.batch_size = 5000;
        let header = DumpHeader {
            transport_hash: s.transport_hash(),
            seed: cfg.seed,
            photons: cfg.photons,
            transmitters: 1,
        };
        let mut w = DumpWriter::new(Vec::new(), &header).unwrap();
        trace_with_sink(&s, &cfg, |tx, b| w.write_batch(tx, b)).unwrap();
        let bytes = w.finish().unwrap();
        let (h, hits) = read_dump(bytes.as_slice()).unwrap();
        assert_eq!(h, header);
        let live = trace_photons(&s, &cfg).unwrap();
        let rebinned = assign_to_receivers(&s, &hits[0]);
        for (j, list) in rebinned.iter().enumerate() {
            assert_eq!(list.as_slice(), live.link(0, j));
        }
    }

    #[test]
    fn truncated_dump_is_corrupt() {
        let header = DumpHeader {
            transport_hash: "abc".into(),
            seed: 1,
            photons: 10,
            transmitters: 1,
        };
        let mut w = DumpWriter::new(Vec::new(), &header).unwrap();
        let p = DetectedPhoton {
            time: 1.0,
            x: 0.0,
            y: 0.0,
            zenith: 0.0,
            weight: 1.0,
        };
        w.write_batch(0, &[p, p]).unwrap();
        let bytes = w.finish().unwrap();
        assert!(matches!(read_dump(&bytes[..bytes.len() - 3]), Err(Error::Corrupt(_))));
        assert!(matches!(read_dump(&b"garbage!"[..]), Err(Error::Corrupt(_))));
        assert_eq!(read_dump(bytes.as_slice()).unwrap().1[0], vec![p, p]);
    }
}
