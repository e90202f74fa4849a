//! Versioned binary checkpoints: magic, version, config hash, then
//! length-prefixed sections for params, optimizer, storage, stats, and the
//! update counter. Floats are stored as raw little-endian bits so a
//! round-trip is exact.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::learner::{AdamState, Linear, ModelConfig, ParamSet};
use crate::storage::{GoalEntry, StorageParts};

pub const MAGIC: [u8; 4] = *b"LSA1";
pub const VERSION: u32 = 1;

/// Committed position of one worker's RNG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngPos {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// Scheduler + statistics state, flattened for serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsParts {
    pub window: usize,
    pub outcomes: Vec<Vec<bool>>,
    pub w_prev: Vec<f64>,
    pub focused: usize,
    pub ratios: Vec<f64>,
    pub composition: Vec<usize>,
    pub query: Vec<f64>,
    pub last_refresh: u64,
    pub query_counts: Vec<u64>,
    pub worker_rngs: Vec<RngPos>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointState {
    pub params: ParamSet<f64>,
    pub optimizer: AdamState<f64>,
    pub storage: StorageParts<f64>,
    pub stats: StatsParts,
    pub counter: u64,
}

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> ByteWriter {
        ByteWriter { buf: Vec::new() }
    }

    fn u8v(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32v(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64v(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128v(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64v(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u64v(vs.len() as u64);
        for &v in vs {
            self.f64v(v);
        }
    }

    fn u64s(&mut self, vs: &[u64]) {
        self.u64v(vs.len() as u64);
        for &v in vs {
            self.u64v(v);
        }
    }

    fn usizes(&mut self, vs: &[usize]) {
        self.u64v(vs.len() as u64);
        for &v in vs {
            self.u64v(v as u64);
        }
    }

    fn bytes(&mut self, vs: &[u8]) {
        self.buf.extend_from_slice(vs);
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> ByteReader<'a> {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8v(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32v(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64v(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u128v(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn f64v(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64v()?))
    }

    /// Length prefix for `n` elements of `elem_bytes` each; rejects counts
    /// that cannot fit in the remaining input.
    fn len_prefix_sized(&mut self, elem_bytes: usize) -> Result<usize> {
        let n = self.u64v()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.checked_mul(elem_bytes as u64).map(|b| b > remaining).unwrap_or(true) {
            return Err(Error::Checkpoint("length prefix exceeds file".into()));
        }
        Ok(n as usize)
    }

    fn len_prefix(&mut self) -> Result<usize> {
        self.len_prefix_sized(1)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len_prefix_sized(8)?;
        (0..n).map(|_| self.f64v()).collect()
    }

    fn u64s(&mut self) -> Result<Vec<u64>> {
        let n = self.len_prefix_sized(8)?;
        (0..n).map(|_| self.u64v()).collect()
    }

    fn usizes(&mut self) -> Result<Vec<usize>> {
        Ok(self.u64s()?.into_iter().map(|v| v as usize).collect())
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_params(w: &mut ByteWriter, p: &ParamSet<f64>) {
    w.u64v(p.obs_dim as u64);
    w.u64v(p.num_targets as u64);
    w.u64v(p.feature_dim as u64);
    w.u64v(p.proj_dim as u64);
    for t in p.tensors() {
        w.f64s(t);
    }
}

fn read_params(r: &mut ByteReader) -> Result<ParamSet<f64>> {
    let obs_dim = r.u64v()? as usize;
    let num_targets = r.u64v()? as usize;
    let feature_dim = r.u64v()? as usize;
    let proj_dim = r.u64v()? as usize;
    let cfg = ModelConfig { feature_dim, proj_dim };
    let mut p = ParamSet::zeros(obs_dim, num_targets, &cfg);
    for t in p.tensors_mut() {
        let vals = r.f64s()?;
        if vals.len() != t.len() {
            return Err(Error::Checkpoint(format!(
                "tensor has {} values, expected {}",
                vals.len(),
                t.len()
            )));
        }
        *t = vals;
    }
    Ok(p)
}

fn write_linear_shapes_ok(p: &ParamSet<f64>) -> bool {
    fn ok(l: &Linear<f64>) -> bool {
        l.w.len() == l.out_dim * l.in_dim && l.b.len() == l.out_dim
    }
    ok(&p.enc1) && ok(&p.enc2) && ok(&p.gate) && ok(&p.policy) && ok(&p.value) && ok(&p.proj)
}

fn write_optimizer(w: &mut ByteWriter, o: &AdamState<f64>) {
    w.u64v(o.step);
    for group in [&o.m, &o.v, &o.vhat] {
        w.u64v(group.len() as u64);
        for t in group {
            w.f64s(t);
        }
    }
}

fn read_optimizer(r: &mut ByteReader) -> Result<AdamState<f64>> {
    let step = r.u64v()?;
    let mut groups = Vec::with_capacity(3);
    for _ in 0..3 {
        let n = r.len_prefix_sized(8)?;
        let mut g = Vec::with_capacity(n);
        for _ in 0..n {
            g.push(r.f64s()?);
        }
        groups.push(g);
    }
    let vhat = groups.pop().expect("three groups");
    let v = groups.pop().expect("three groups");
    let m = groups.pop().expect("three groups");
    Ok(AdamState { step, m, v, vhat })
}

fn write_storage(w: &mut ByteWriter, s: &StorageParts<f64>) {
    w.u64v(s.capacity as u64);
    w.u64v(s.num_targets as u64);
    w.u64v(s.entries.len() as u64);
    for e in &s.entries {
        w.u64v(e.target as u64);
        w.f64s(&e.features);
    }
    w.u64s(&s.sample_counts);
    w.u64s(&s.insert_counts);
}

fn read_storage(r: &mut ByteReader) -> Result<StorageParts<f64>> {
    let capacity = r.u64v()? as usize;
    let num_targets = r.u64v()? as usize;
    let count = r.len_prefix_sized(16)?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let target = r.u64v()? as usize;
        let features = r.f64s()?;
        entries.push(GoalEntry { target, features });
    }
    Ok(StorageParts {
        capacity,
        num_targets,
        entries,
        sample_counts: r.u64s()?,
        insert_counts: r.u64s()?,
    })
}

fn write_stats(w: &mut ByteWriter, s: &StatsParts) {
    w.u64v(s.window as u64);
    w.u64v(s.outcomes.len() as u64);
    for q in &s.outcomes {
        w.u64v(q.len() as u64);
        for &b in q {
            w.u8v(b as u8);
        }
    }
    w.f64s(&s.w_prev);
    w.u64v(s.focused as u64);
    w.f64s(&s.ratios);
    w.usizes(&s.composition);
    w.f64s(&s.query);
    w.u64v(s.last_refresh);
    w.u64s(&s.query_counts);
    w.u64v(s.worker_rngs.len() as u64);
    for rng in &s.worker_rngs {
        w.bytes(&rng.seed);
        w.u64v(rng.stream);
        w.u128v(rng.word_pos);
    }
}

fn read_stats(r: &mut ByteReader) -> Result<StatsParts> {
    let window = r.u64v()? as usize;
    let n = r.len_prefix_sized(8)?;
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.len_prefix()?;
        let mut q = Vec::with_capacity(len);
        for _ in 0..len {
            q.push(match r.u8v()? {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::Checkpoint(format!("bad outcome byte {}", other)))
                }
            });
        }
        outcomes.push(q);
    }
    let w_prev = r.f64s()?;
    let focused = r.u64v()? as usize;
    let ratios = r.f64s()?;
    let composition = r.usizes()?;
    let query = r.f64s()?;
    let last_refresh = r.u64v()?;
    let query_counts = r.u64s()?;
    let workers = r.len_prefix_sized(56)?;
    let mut worker_rngs = Vec::with_capacity(workers);
    for _ in 0..workers {
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64v()?;
        let word_pos = r.u128v()?;
        worker_rngs.push(RngPos { seed, stream, word_pos });
    }
    Ok(StatsParts {
        window,
        outcomes,
        w_prev,
        focused,
        ratios,
        composition,
        query,
        last_refresh,
        query_counts,
        worker_rngs,
    })
}

pub fn encode(state: &CheckpointState, config_hash: &[u8; 32]) -> Result<Vec<u8>> {
    if !write_linear_shapes_ok(&state.params) {
        return Err(Error::Checkpoint("parameter shapes are inconsistent".into()));
    }
    let mut out = ByteWriter::new();
    out.bytes(&MAGIC);
    out.u32v(VERSION);
    out.bytes(config_hash);
    let sections: Vec<Vec<u8>> = {
        let mut sections = Vec::with_capacity(5);
        let mut w = ByteWriter::new();
        write_params(&mut w, &state.params);
        sections.push(std::mem::take(&mut w.buf));
        write_optimizer(&mut w, &state.optimizer);
        sections.push(std::mem::take(&mut w.buf));
        write_storage(&mut w, &state.storage);
        sections.push(std::mem::take(&mut w.buf));
        write_stats(&mut w, &state.stats);
        sections.push(std::mem::take(&mut w.buf));
        w.u64v(state.counter);
        sections.push(std::mem::take(&mut w.buf));
        sections
    };
    for s in sections {
        out.u64v(s.len() as u64);
        out.bytes(&s);
    }
    Ok(out.buf)
}

pub fn decode(bytes: &[u8], expected_hash: &[u8; 32]) -> Result<CheckpointState> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32v()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {})",
            version, VERSION
        )));
    }
    let hash = r.take(32)?;
    if hash != expected_hash {
        return Err(Error::Checkpoint(
            "config hash mismatch: checkpoint was written under a different configuration"
                .into(),
        ));
    }
    let mut sections = Vec::with_capacity(5);
    for _ in 0..5 {
        let len = r.len_prefix()?;
        sections.push(r.take(len)?);
    }
    if !r.done() {
        return Err(Error::Checkpoint("trailing bytes after final section".into()));
    }
    let params = {
        let mut pr = ByteReader::new(sections[0]);
        let p = read_params(&mut pr)?;
        if !pr.done() {
            return Err(Error::Checkpoint("params section has trailing bytes".into()));
        }
        p
    };
    let optimizer = {
        let mut or = ByteReader::new(sections[1]);
        let o = read_optimizer(&mut or)?;
        if !or.done() {
            return Err(Error::Checkpoint("optimizer section has trailing bytes".into()));
        }
        o
    };
    if !optimizer.matches(&params) {
        return Err(Error::Checkpoint("optimizer state does not match params".into()));
    }
    let storage = {
        let mut sr = ByteReader::new(sections[2]);
        let s = read_storage(&mut sr)?;
        if !sr.done() {
            return Err(Error::Checkpoint("storage section has trailing bytes".into()));
        }
        s
    };
    let stats = {
        let mut tr = ByteReader::new(sections[3]);
        let s = read_stats(&mut tr)?;
        if !tr.done() {
            return Err(Error::Checkpoint("stats section has trailing bytes".into()));
        }
        s
    };
    let counter = {
        let mut cr = ByteReader::new(sections[4]);
        let c = cr.u64v()?;
        if !cr.done() {
            return Err(Error::Checkpoint("counter section has trailing bytes".into()));
        }
        c
    };
    Ok(CheckpointState { params, optimizer, storage, stats, counter })
}

/// Writes atomically: a temp file in the same directory, then a rename.
/// Temp names carry a process-unique suffix so concurrent savers cannot
/// clobber each other's staging file; each rename lands a complete image.
pub fn save(path: &Path, state: &CheckpointState, config_hash: &[u8; 32]) -> Result<()> {
    static SAVE_SEQ: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    let bytes = encode(state, config_hash)?;
    let seq = SAVE_SEQ.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp.{}.{}", std::process::id(), seq));
    {
        let mut f = File::create(&tmp).map_err(Error::io(&tmp))?;
        f.write_all(&bytes).map_err(Error::io(&tmp))?;
        f.sync_all().map_err(Error::io(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(Error::io(path))?;
    Ok(())
}

pub fn load(path: &Path, expected_hash: &[u8; 32]) -> Result<CheckpointState> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(Error::io(path))?
        .read_to_end(&mut bytes)
        .map_err(Error::io(path))?;
    decode(&bytes, expected_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn sample_state(seed: u64) -> CheckpointState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params =
            ParamSet::<f64>::init(5, 2, &ModelConfig { feature_dim: 4, proj_dim: 2 }, &mut rng);
        let mut optimizer = AdamState::new(&params);
        optimizer.step = 17;
        optimizer.m[0][0] = 0.25;
        optimizer.vhat[3][1] = 1e-9;
        let mut storage = crate::storage::GoalStorage::new(2, 6).unwrap();
        for i in 0..4 {
            storage
                .insert(GoalEntry { target: i % 2, features: vec![i as f64, -0.5] })
                .unwrap();
        }
        let stats = StatsParts {
            window: 100,
            outcomes: vec![vec![true, false], vec![]],
            w_prev: vec![0.5, 0.25],
            focused: 1,
            ratios: vec![0.15, 0.85],
            composition: vec![12, 68],
            query: vec![0.9, 0.1],
            last_refresh: 150,
            query_counts: vec![3, 9],
            worker_rngs: vec![RngPos { seed: [7; 32], stream: 1, word_pos: 4242 }],
        };
        CheckpointState {
            params,
            optimizer,
            storage: storage.to_parts(),
            stats,
            counter: 151,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let state = sample_state(3);
        let hash = [9u8; 32];
        save(&path, &state, &hash).unwrap();
        let back = load(&path, &hash).unwrap();
        assert_eq!(back, state);
        let leftovers = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name() != "c.bin")
            .count();
        assert_eq!(leftovers, 0);
    }

    #[test]
    fn wrong_hash_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let state = sample_state(4);
        save(&path, &state, &[1u8; 32]).unwrap();
        let err = load(&path, &[2u8; 32]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
        assert!(err.to_string().contains("hash"));
    }

    #[test]
    fn truncation_anywhere_is_rejected() {
        let state = sample_state(5);
        let hash = [3u8; 32];
        let bytes = encode(&state, &hash).unwrap();
        assert!(decode(&bytes, &hash).is_ok());
        for cut in [0, 3, 4, 7, 39, 41, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                decode(&bytes[..cut], &hash).is_err(),
                "truncation at {} was accepted",
                cut
            );
        }
        let mut extended = bytes.clone();
        extended.push(0);
        assert!(decode(&extended, &hash).is_err());
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let state = sample_state(6);
        let hash = [0u8; 32];
        let mut bytes = encode(&state, &hash).unwrap();
        bytes[0] = b'X';
        assert!(decode(&bytes, &hash).unwrap_err().to_string().contains("magic"));
        let mut bytes = encode(&state, &hash).unwrap();
        bytes[4] = 99;
        assert!(decode(&bytes, &hash).unwrap_err().to_string().contains("version"));
    }
}
