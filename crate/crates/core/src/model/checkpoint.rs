//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `PSCKPT01`, `u64` length + UTF-8 JSON of the
//! architecture, `u64` tensor count, then per tensor `u64 rows`, `u64 cols`
//! and the row-major `f64` values; `u64` BN layer count, then per layer
//! `u64 n`, `n` means and `n` variances; finally the `u64` step counter.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::arch::ArchSpec;
use crate::model::dense::BnStats;
use crate::model::network::Network;

pub const MAGIC: &[u8; 8] = b"PSCKPT01";

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let put = |out: &mut Vec<u8>, v: u64| out.extend_from_slice(&v.to_le_bytes());
    let floats = |out: &mut Vec<u8>, vs: &[f64]| vs.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    let arch = serde_json::to_vec(&net.arch).expect("architecture serializes");
    put(&mut out, arch.len() as u64);
    out.extend_from_slice(&arch);
    put(&mut out, net.params.len() as u64);
    for p in &net.params {
        put(&mut out, p.rows() as u64);
        put(&mut out, p.cols() as u64);
        floats(&mut out, p.as_slice());
    }
    put(&mut out, net.bn.len() as u64);
    for s in &net.bn {
        put(&mut out, s.mean.len() as u64);
        floats(&mut out, &s.mean);
        floats(&mut out, &s.var);
    }
    put(&mut out, net.step);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Input(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        // Every counted item takes at least one byte, so this bounds allocations.
        if v > (self.buf.len() - self.pos) as u64 {
            return Err(Error::Input(format!("checkpoint length field {v} exceeds file size")));
        }
        Ok(v as usize)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Input("checkpoint size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Network> {
    if buf.len() < 8 || &buf[..8] != MAGIC {
        return Err(Error::Input("not a checkpoint file (bad magic)".into()));
    }
    let mut r = Reader { buf, pos: 8 };
    let n = r.len()?;
    let arch: ArchSpec = serde_json::from_slice(r.take(n)?)
        .map_err(|e| Error::Input(format!("checkpoint architecture: {e}")))?;
    let count = r.len()?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.len()?;
        let cols = r.len()?;
        let data = r.floats(rows.checked_mul(cols).ok_or_else(|| Error::Input("checkpoint size overflow".into()))?)?;
        params.push(Matrix::from_vec(rows, cols, data)?);
    }
    let layers = r.len()?;
    let mut bn = Vec::with_capacity(layers);
    for _ in 0..layers {
        let n = r.len()?;
        bn.push(BnStats { mean: r.floats(n)?, var: r.floats(n)? });
    }
    let step = r.u64()?;
    if r.pos != buf.len() {
        return Err(Error::Input("trailing bytes after checkpoint".into()));
    }
    Network::from_parts(arch, params, bn, step)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arch::Variant;

    #[test]
    fn round_trip_is_exact() {
        let mut net = Network::new(ArchSpec::desk_classifier(Variant::SpecCp4, 4, 3, 1), 9).unwrap();
        net.step = 42;
        net.bn[1].mean[3] = 0.25;
        let bytes = to_bytes(&net);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let net = Network::new(ArchSpec::desk_segmenter(Variant::PointNet4, 2, 3, 0), 1).unwrap();
        let bytes = to_bytes(&net);
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(from_bytes(b"PSCKPT00").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
