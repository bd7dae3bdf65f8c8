//! Transition datasets under the uniform default policy, their binary
//! format, and mini-batch iteration with auxiliary state draws.

use rand::seq::SliceRandom;
use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{GridWorld, N_ACTIONS};
use crate::rng::{stream_rng, streams, Rng};

pub const MAGIC: &[u8; 4] = b"DRGO";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8 + 8 + 8;
const RECORD_LEN: usize = 4 + 1 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: u32,
    pub a: u8,
    pub r: f64,
    pub s_next: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub fingerprint: u64,
    pub seed: u64,
    pub transitions: Vec<Transition>,
}

/// A transition paired with an independent uniform state s″.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub s: usize,
    pub r: f64,
    pub s_next: usize,
    pub s2: usize,
}

/// First eight bytes of SHA-256 over the canonical layout text and δ.
pub fn fingerprint(gw: &GridWorld) -> u64 {
    let mut h = Sha256::new();
    h.update(gw.layout.to_text().as_bytes());
    h.update(gw.delta.to_bits().to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn generate_dataset(gw: &GridWorld, size: usize, seed: u64) -> Result<Dataset> {
    if size == 0 {
        return Err(Error::Invalid("dataset size must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, streams::DATASET);
    let n = gw.n_states as u32;
    let transitions = (0..size)
        .map(|_| {
            let s = rng.gen_range(0..n);
            let a = rng.gen_range(0..N_ACTIONS as u8);
            let sn = gw.next_state(s as usize, a as usize);
            Transition { s, a, r: gw.dr_reward(s as usize), s_next: sn as u32 }
        })
        .collect();
    Ok(Dataset { fingerprint: fingerprint(gw), seed, transitions })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn check_fingerprint(&self, gw: &GridWorld) -> Result<()> {
        let expected = fingerprint(gw);
        if self.fingerprint != expected {
            return Err(Error::Fingerprint { expected, found: self.fingerprint });
        }
        if let Some(t) = self.transitions.iter().find(|t| t.s as usize >= gw.n_states || t.s_next as usize >= gw.n_states) {
            return Err(Error::Format(format!("transition {t:?} references a state outside the layout")));
        }
        Ok(())
    }
}

pub fn save_dataset(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * ds.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ds.fingerprint.to_le_bytes());
    out.extend_from_slice(&ds.seed.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for t in &ds.transitions {
        out.extend_from_slice(&t.s.to_le_bytes());
        out.push(t.a);
        out.extend_from_slice(&t.r.to_le_bytes());
        out.extend_from_slice(&t.s_next.to_le_bytes());
    }
    out
}

pub fn load_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("dataset header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad dataset magic".into()));
    }
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let fingerprint = u64_at(6);
    let seed = u64_at(14);
    let count = u64_at(22) as usize;
    let expected = count.checked_mul(RECORD_LEN).and_then(|b| b.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!(
            "dataset length mismatch: header says {count} transitions, file has {} bytes",
            bytes.len()
        )));
    }
    let transitions = bytes[HEADER_LEN..]
        .chunks_exact(RECORD_LEN)
        .map(|c| Transition {
            s: u32::from_le_bytes(c[0..4].try_into().unwrap()),
            a: c[4],
            r: f64::from_le_bytes(c[5..13].try_into().unwrap()),
            s_next: u32::from_le_bytes(c[13..17].try_into().unwrap()),
        })
        .collect();
    Ok(Dataset { fingerprint, seed, transitions })
}

/// Walks a dataset in reshuffled epochs; each element gets a fresh s″.
pub struct BatchIter<'a> {
    ds: &'a Dataset,
    batch: usize,
    n_states: u32,
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl<'a> BatchIter<'a> {
    pub fn new(ds: &'a Dataset, batch: usize, n_states: usize, seed: u64) -> Result<BatchIter<'a>> {
        if ds.is_empty() {
            return Err(Error::Invalid("empty dataset".into()));
        }
        if batch == 0 || n_states == 0 {
            return Err(Error::Invalid("batch size and state count must be positive".into()));
        }
        let mut rng = stream_rng(seed, streams::BATCHES);
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut rng);
        Ok(BatchIter { ds, batch, n_states: n_states as u32, order, pos: 0, rng })
    }

    pub fn next_batch(&mut self) -> Vec<Sample> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let t = self.ds.transitions[self.order[self.pos]];
            self.pos += 1;
            let s2 = self.rng.gen_range(0..self.n_states) as usize;
            out.push(Sample { s: t.s as usize, r: t.r, s_next: t.s_next as usize, s2 });
        }
        out
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Vec<Sample>;
    fn next(&mut self) -> Option<Vec<Sample>> {
        Some(self.next_batch())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::DEFAULT_DELTA;

    #[test]
    fn single_state_dataset() {
        let gw = GridWorld::from_text("####\n#SG#\n####\n", DEFAULT_DELTA).unwrap();
        let ds = generate_dataset(&gw, 50, 3).unwrap();
        for t in ds.transitions.iter().filter(|t| t.s == 1) {
            assert_eq!((t.r, t.s_next), (-DEFAULT_DELTA, 1));
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let gw = GridWorld::bundled("grid_task").unwrap();
        let bytes = save_dataset(&generate_dataset(&gw, 10, 1).unwrap());
        assert!(load_dataset(&bytes[..bytes.len() - 1]).is_err());
        assert!(load_dataset(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(load_dataset(&bad).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn fingerprint_depends_on_delta() {
        let gw = GridWorld::bundled("grid_task").unwrap();
        assert_ne!(fingerprint(&gw), fingerprint(&gw.with_delta(1e-6).unwrap()));
    }
}
