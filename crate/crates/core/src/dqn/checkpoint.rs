//! Binary checkpoint: magic, version, dimension table, little-endian f64
//! parameters, SHA-256 of everything before it.

use sha2::{Digest, Sha256};

use super::network::{Layout, Network, NetworkConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"IXQN";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn save_checkpoint(net: &Network) -> Vec<u8> {
    let layout = net.layout();
    let mut out = Vec::with_capacity(64 + layout.groups.len() * 32 + net.params.len() * 8 + DIGEST_LEN);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(layout.groups.len() as u32).to_le_bytes());
    for g in &layout.groups {
        out.extend_from_slice(&(g.name.len() as u16).to_le_bytes());
        out.extend_from_slice(g.name.as_bytes());
        out.extend_from_slice(&(g.rows as u32).to_le_bytes());
        out.extend_from_slice(&(g.cols as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
    for p in &net.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint written for a network of shape `expected`.
pub fn load_checkpoint(bytes: &[u8], expected: &NetworkConfig) -> Result<Network> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let layout = Layout::new(expected);
    let count = r.u32("group count")? as usize;
    if count != layout.groups.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} layers, expected {}",
            layout.groups.len()
        )));
    }
    for g in &layout.groups {
        let len = r.u16("layer name")? as usize;
        let name = String::from_utf8_lossy(r.take(len, "layer name")?).into_owned();
        let rows = r.u32("layer rows")? as usize;
        let cols = r.u32("layer cols")? as usize;
        if name != g.name {
            return Err(Error::Checkpoint(format!("layer `{name}` found where `{}` was expected", g.name)));
        }
        if (rows, cols) != (g.rows, g.cols) {
            return Err(Error::Checkpoint(format!(
                "layer `{name}` has shape {rows}x{cols}, expected {}x{}",
                g.rows, g.cols
            )));
        }
    }
    let n = r.u64("parameter count")? as usize;
    if n != layout.total {
        return Err(Error::Checkpoint(format!("{n} parameters stored, expected {}", layout.total)));
    }
    let blob = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("bad parameter count".into()))?, "parameters")?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let params = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Network::from_params(*expected, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> NetworkConfig {
        NetworkConfig { encoder1: 3, encoder2: 4, fusion: 5, lstm: 6 }
    }

    #[test]
    fn round_trip_is_exact() {
        let net = Network::init(cfg(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let bytes = save_checkpoint(&net);
        let back = load_checkpoint(&bytes, &cfg()).unwrap();
        assert_eq!(back.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>(), net.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn corruption_is_reported() {
        let net = Network::init(cfg(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let bytes = save_checkpoint(&net);
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(load_checkpoint(&bytes[..cut], &cfg()).is_err());
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() - 40;
        flipped[mid] ^= 1;
        let err = load_checkpoint(&flipped, &cfg()).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
        let mut versioned = bytes;
        versioned[4] = 9;
        assert!(load_checkpoint(&versioned, &cfg()).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let net = Network::init(cfg(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let bytes = save_checkpoint(&net);
        let other = NetworkConfig { lstm: 7, ..cfg() };
        let err = load_checkpoint(&bytes, &other).unwrap_err().to_string();
        assert!(err.contains("lstm.input_weight"), "{err}");
    }
}
