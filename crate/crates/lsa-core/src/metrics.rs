//! Run diagnostics: per-target success rates, storage shares, sample
//! richness, querying/sampling tallies, evaluation, and CSV/JSONL export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{self, Action, EnvConfig};
use crate::error::{Error, Result};
use crate::learner::{forward, ParamSet};
use crate::scalar::Scalar;
use crate::storage::GoalStorage;

/// One snapshot of every tracked quantity at update `t`. Undefined values
/// (a ratio with a zero denominator) stay `None` and serialize as JSON null
/// or an empty CSV cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: u64,
    pub w: Vec<f64>,
    pub k: Vec<u64>,
    pub m: Vec<u64>,
    pub d: Vec<f64>,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub focused: usize,
    pub query_counts: Vec<u64>,
    pub richness: Vec<Option<f64>>,
    pub query_cum: Vec<Option<f64>>,
    pub sample_cum: Vec<Option<f64>>,
    pub wallclock_s: Option<f64>,
}

impl MetricsRecord {
    pub fn num_targets(&self) -> usize {
        self.w.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_targets();
        for (name, len) in [
            ("k", self.k.len()),
            ("m", self.m.len()),
            ("d", self.d.len()),
            ("b", self.b.len()),
            ("a", self.a.len()),
            ("query_counts", self.query_counts.len()),
            ("richness", self.richness.len()),
            ("query_cum", self.query_cum.len()),
            ("sample_cum", self.sample_cum.len()),
        ] {
            if len != n {
                return Err(Error::Usage(format!(
                    "record at t={} has {} entries for {}, expected {}",
                    self.t, len, name, n
                )));
            }
        }
        for (name, v) in [("d", &self.d), ("b", &self.b), ("a", &self.a)] {
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Numeric(format!(
                    "record at t={}: {} sums to {}, expected 1",
                    self.t, name, sum
                )));
            }
        }
        if self.focused >= n {
            return Err(Error::Usage(format!(
                "record at t={} has focused target {} out of {}",
                self.t, self.focused, n
            )));
        }
        Ok(())
    }
}

/// `M_x / k_x`; undefined when nothing has been sampled yet.
pub fn sample_richness(m: u64, k: u64) -> Option<f64> {
    if k == 0 {
        None
    } else {
        Some(m as f64 / k as f64)
    }
}

/// Ratio of update counts at which two learning curves reach the second
/// curve's best success rate, as a percentage. `None` when curve `a` never
/// gets there.
pub fn sei(curve_a: &[(u64, f64)], curve_b: &[(u64, f64)]) -> Result<Option<f64>> {
    if curve_a.is_empty() || curve_b.is_empty() {
        return Err(Error::Usage("sei needs two non-empty curves".into()));
    }
    let best_b = curve_b.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
    let n_b = curve_b
        .iter()
        .find(|&&(_, s)| s >= best_b)
        .map(|&(t, _)| t)
        .expect("max is attained");
    let n_a = match curve_a.iter().find(|&&(_, s)| s >= best_b) {
        Some(&(t, _)) => t,
        None => return Ok(None),
    };
    if n_b == 0 {
        return Err(Error::Usage("curve b reaches its best at update 0".into()));
    }
    Ok(Some(100.0 * n_a as f64 / n_b as f64))
}

pub const CSV_HEADER: &str = "T,target,w,k,M,d,B,A,focused,richness,query_cum,sample_cum,wallclock_s";

fn fmt_f64(v: f64) -> String {
    let mut s = format!("{:?}", v);
    if s.ends_with(".0") {
        s.truncate(s.len() - 2);
    }
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Appends `records` as long-format CSV rows (one row per target per
/// snapshot) to an open writer.
pub fn write_csv_rows<W: Write>(out: &mut W, records: &[MetricsRecord]) -> std::io::Result<()> {
    for r in records {
        for x in 0..r.num_targets() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                x,
                fmt_f64(r.w[x]),
                r.k[x],
                r.m[x],
                fmt_f64(r.d[x]),
                fmt_f64(r.b[x]),
                fmt_f64(r.a[x]),
                (r.focused == x) as u8,
                fmt_opt(r.richness[x]),
                fmt_opt(r.query_cum[x]),
                fmt_opt(r.sample_cum[x]),
                fmt_opt(r.wallclock_s),
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

/// Writes the whole record set to `path`, replacing any existing file.
pub fn export(records: &[MetricsRecord], path: &Path, format: ExportFormat) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut out = BufWriter::new(file);
    match format {
        ExportFormat::Csv => {
            writeln!(&mut out, "{}", CSV_HEADER).map_err(Error::io(path))?;
            write_csv_rows(&mut out, records).map_err(Error::io(path))?;
        }
        ExportFormat::Jsonl => {
            for r in records {
                let line = serde_json::to_string(r)
                    .map_err(|e| Error::Usage(format!("serialize record: {}", e)))?;
                writeln!(&mut out, "{}", line).map_err(Error::io(path))?;
            }
        }
    }
    out.flush().map_err(Error::io(path))
}

/// Reads records back from a JSONL export.
pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: MetricsRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Usage(format!("{}:{}: bad metrics line: {}", path.display(), i + 1, e))
        })?;
        records.push(r);
    }
    Ok(records)
}

/// Reads records back from a long-format CSV export.
pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Usage(format!("{}: empty metrics file", path.display())))?
        .map_err(Error::io(path))?;
    if header.trim() != CSV_HEADER {
        return Err(Error::Usage(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header
        )));
    }
    let mut rows: Vec<(u64, usize, Vec<String>)> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
        if cells.len() != 13 {
            return Err(Error::Usage(format!(
                "{}:{}: expected 13 cells, got {}",
                path.display(),
                i + 2,
                cells.len()
            )));
        }
        let t: u64 = cells[0]
            .parse()
            .map_err(|_| Error::Usage(format!("{}:{}: bad T", path.display(), i + 2)))?;
        let target: usize = cells[1]
            .parse()
            .map_err(|_| Error::Usage(format!("{}:{}: bad target", path.display(), i + 2)))?;
        rows.push((t, target, cells));
    }
    let mut records: Vec<MetricsRecord> = Vec::new();
    let parse_f = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Usage(format!("bad numeric cell {:?}", s)))
    };
    let parse_u = |s: &str| -> Result<u64> {
        s.parse::<u64>()
            .map_err(|_| Error::Usage(format!("bad integer cell {:?}", s)))
    };
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            parse_f(s).map(Some)
        }
    };
    for (t, target, cells) in rows {
        let fresh = records.last().map(|r: &MetricsRecord| r.t != t).unwrap_or(true);
        if fresh {
            records.push(MetricsRecord {
                t,
                w: Vec::new(),
                k: Vec::new(),
                m: Vec::new(),
                d: Vec::new(),
                b: Vec::new(),
                a: Vec::new(),
                focused: 0,
                query_counts: Vec::new(),
                richness: Vec::new(),
                query_cum: Vec::new(),
                sample_cum: Vec::new(),
                wallclock_s: None,
            });
        }
        let r = records.last_mut().expect("just pushed");
        if target != r.w.len() {
            return Err(Error::Usage(format!(
                "csv rows for t={} are not in target order",
                t
            )));
        }
        r.w.push(parse_f(&cells[2])?);
        r.k.push(parse_u(&cells[3])?);
        r.m.push(parse_u(&cells[4])?);
        r.d.push(parse_f(&cells[5])?);
        r.b.push(parse_f(&cells[6])?);
        r.a.push(parse_f(&cells[7])?);
        if cells[8] == "1" {
            r.focused = target;
        }
        r.richness.push(parse_opt(&cells[9])?);
        r.query_cum.push(parse_opt(&cells[10])?);
        r.sample_cum.push(parse_opt(&cells[11])?);
        r.wallclock_s = parse_opt(&cells[12])?;
        r.query_counts.push(0);
    }
    Ok(records)
}

/// Per-target and overall greedy success rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub overall: f64,
    pub per_target: Vec<f64>,
    pub episodes_per_target: Vec<usize>,
}

/// Runs `episodes` greedy episodes with uniformly random instructions and no
/// learning side effects.
pub fn evaluate<F: Scalar>(
    params: &ParamSet<F>,
    config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    evaluate_policy(config, episodes, seed, |_, st, obs| {
        let fwd = forward(params, &obs.features, st.instruction)?;
        let mut best = 0usize;
        for k in 1..fwd.probs.len() {
            if fwd.probs[k] > fwd.probs[best] {
                best = k;
            }
        }
        Ok(Action::from_index(best).expect("argmax in range"))
    })
}

/// Evaluation loop with a caller-supplied action rule; used for oracle and
/// random baselines as well as greedy evaluation.
pub fn evaluate_policy<F, P>(
    config: &EnvConfig,
    episodes: usize,
    seed: u64,
    mut policy: P,
) -> Result<EvalSummary>
where
    F: Scalar,
    P: FnMut(&mut rand_chacha::ChaCha8Rng, &env::EpisodeState, &env::Observation<F>) -> Result<Action>,
{
    use rand::{Rng, RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = config.num_targets;
    let mut successes = vec![0usize; n];
    let mut counts = vec![0usize; n];
    for ep in 0..episodes {
        let instruction = rng.random_range(0..n);
        let ep_seed = rng.next_u64();
        let (mut state, mut obs) = env::reset::<F>(config, ep_seed, instruction)?;
        counts[instruction] += 1;
        for _ in 0..config.time_limit {
            let action = policy(&mut rng, &state, &obs)?;
            let out = env::step(config, &mut state, action)?;
            if out.terminal {
                if out.result == env::EpisodeResult::Success {
                    successes[instruction] += 1;
                }
                break;
            }
            obs = out.observation;
        }
        debug_assert!(state.done, "episode {} ran past the time limit", ep);
    }
    let per_target: Vec<f64> = successes
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s as f64 / c as f64 })
        .collect();
    let total: usize = successes.iter().sum();
    let overall = if episodes == 0 { 0.0 } else { total as f64 / episodes as f64 };
    Ok(EvalSummary { episodes, overall, per_target, episodes_per_target: counts })
}

/// Mean critic value over the latest `n_latest` stored goals of each target,
/// conditioned on that target's instruction. Targets with no stored goals
/// report `None`.
pub fn value_probe<F: Scalar>(
    params: &ParamSet<F>,
    storage: &GoalStorage<F>,
    n_latest: usize,
) -> Result<Vec<Option<f64>>> {
    let mut out = Vec::with_capacity(storage.num_targets());
    for x in 0..storage.num_targets() {
        let entries = storage.latest_n(x, n_latest);
        if entries.is_empty() {
            out.push(None);
            continue;
        }
        let mut acc = 0.0f64;
        for e in &entries {
            let fwd = forward(params, &e.features, x)?;
            acc += fwd.value.to_f64_exact();
        }
        out.push(Some(acc / entries.len() as f64));
    }
    Ok(out)
}
