//! Lexicographic (latency, then energy) mapping search with an optional
//! on-disk result cache.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{ArchSpec, Operand};
use crate::cost::{evaluate_unchecked, CostResult};
use crate::error::{Error, Result};
use crate::mapping::space::{free_slots, smallest_prime_factor, Slot};
use crate::mapping::{
    ceil_div, enumerate_mapspace, perm_candidates, slot_children, Mapping, MapspaceLimits, SearchMode,
};
use crate::workload::{derive_metrics, Dim, LayerShape};

/// Bumped whenever cost-model or search semantics change; part of every
/// cache key.
pub const MODEL_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+model3");

pub const CACHE_DIR_ENV: &str = "ACCELCMP_CACHE_DIR";

const MAX_REFINEMENT_MOVES: usize = 1000;
/// Best sampled candidates each refined independently.
const REFINEMENT_STARTS: usize = 64;

/// Latency first, then energy, then the canonical encoding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Objective;

impl Objective {
    pub fn compare(&self, a: (&CostResult, &str), b: (&CostResult, &str)) -> Ordering {
        a.0.latency_ns
            .total_cmp(&b.0.latency_ns)
            .then(a.0.energy_pj.total_cmp(&b.0.energy_pj))
            .then_with(|| a.1.cmp(b.1))
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeOutcome {
    pub mapping: Mapping,
    pub encoding: String,
    pub cost: CostResult,
    pub mode: SearchMode,
    /// Mappings evaluated, including refinement neighbours.
    pub evaluated: u64,
    pub refinement_moves: u64,
    pub cached: bool,
}

struct Scored {
    mapping: Mapping,
    encoding: String,
    cost: CostResult,
}

fn better(a: Scored, b: Scored) -> Scored {
    if Objective.compare((&a.cost, &a.encoding), (&b.cost, &b.encoding)) == Ordering::Greater {
        b
    } else {
        a
    }
}

fn score(m: Mapping, layer: &LayerShape, arch: &ArchSpec, useful: u64) -> Scored {
    let cost = evaluate_unchecked(&m, layer, arch, useful);
    Scored { encoding: m.encode(), mapping: m, cost }
}

/// Single-step variations of `m`: a prime factor moved between two slots of
/// one dim (or to/from the LLM), a spatial slot filled up to its fanout with
/// padding, a prime exchange, a different loop order at one level, or one
/// bypass flag toggled.
fn neighbours(m: &Mapping, layer: &LayerShape, arch: &ArchSpec) -> Vec<Mapping> {
    let dims = layer.dims();
    let mut out = Vec::new();
    let push = |out: &mut Vec<Mapping>, mut x: Mapping| {
        x.normalize_llm(layer);
        out.push(x);
    };
    for d in Dim::ALL {
        let slots = free_slots(arch, d);
        for &a in &slots {
            let v = a.get(m, d);
            if v == 1 {
                continue;
            }
            for p in distinct_primes(v) {
                let mut x = m.clone();
                a.set(&mut x, d, v / p);
                push(&mut out, x.clone());
                for &b in &slots {
                    if b != a {
                        let mut y = x.clone();
                        let bv = b.get(&y, d);
                        b.set(&mut y, d, bv * p);
                        push(&mut out, y);
                    }
                }
            }
        }
        let t0 = m.temporal[0][d.index()];
        if t0 > 1 {
            let p = smallest_prime_factor(t0);
            for &b in &slots {
                let mut x = m.clone();
                let bv = b.get(&x, d);
                b.set(&mut x, d, bv * p);
                push(&mut out, x);
            }
        }
        for &a in &slots {
            let Slot::Spatial(f) = a else { continue };
            let current = a.get(m, d);
            let others = m.spatial_product(f) / current;
            let room = slot_children(arch, f) / others;
            let inner_without = m.padded(d) / m.temporal[0][d.index()] / current;
            let fill = room.min(ceil_div(dims[d.index()], inner_without)).max(1);
            if fill != current {
                let mut x = m.clone();
                a.set(&mut x, d, fill);
                push(&mut out, x);
            }
        }
    }
    exchanges(m, arch, &mut |x| push(&mut out, x));
    for l in 0..m.levels() {
        if m.perms[l].len() < 2 {
            continue;
        }
        for p in perm_candidates(&m.perms[l]) {
            if p != m.perms[l] {
                let mut x = m.clone();
                x.perms[l] = p;
                out.push(x);
            }
        }
        for i in 0..m.perms[l].len() - 1 {
            let mut x = m.clone();
            x.perms[l].swap(i, i + 1);
            out.push(x);
        }
    }
    for l in arch.buffer_levels() {
        for o in Operand::ALL {
            if arch.levels[l].holds(o) && arch.levels[l].bypass_allowed[o.index()] {
                let mut x = m.clone();
                x.bypass[l][o.index()] = !x.bypass[l][o.index()];
                out.push(x);
            }
        }
    }
    out
}

fn distinct_primes(mut v: u64) -> Vec<u64> {
    let mut primes = Vec::new();
    while v > 1 {
        let p = smallest_prime_factor(v);
        primes.push(p);
        while v % p == 0 {
            v /= p;
        }
    }
    primes
}

/// Slot `a` trades a prime of `d` for a prime of `e`, with either another
/// slot or the LLM as counterpart. Keeps a full spatial slot full, which no
/// single move can.
fn exchanges(m: &Mapping, arch: &ArchSpec, emit: &mut dyn FnMut(Mapping)) {
    let slots: Vec<Vec<Slot>> = Dim::ALL.iter().map(|&d| free_slots(arch, d)).collect();
    for d in Dim::ALL {
        for e in Dim::ALL {
            if d == e {
                continue;
            }
            let (sd, se) = (&slots[d.index()], &slots[e.index()]);
            for &a in sd.iter().filter(|a| se.contains(a)) {
                for p in distinct_primes(a.get(m, d)) {
                    let t0 = m.temporal[0][e.index()];
                    if t0 > 1 {
                        let mut x = m.clone();
                        a.set(&mut x, d, a.get(m, d) / p);
                        a.set(&mut x, e, a.get(m, e) * smallest_prime_factor(t0));
                        emit(x);
                    }
                    for &b in sd.iter().filter(|&&b| b != a && se.contains(&b)) {
                        for q in distinct_primes(b.get(m, e)) {
                            let mut x = m.clone();
                            a.set(&mut x, d, a.get(m, d) / p);
                            b.set(&mut x, d, b.get(m, d) * p);
                            b.set(&mut x, e, b.get(m, e) / q);
                            a.set(&mut x, e, a.get(m, e) * q);
                            emit(x);
                        }
                    }
                }
            }
        }
    }
}

/// Greedy best-improvement descent; returns the local optimum with the
/// number of neighbours evaluated and moves taken.
fn refine(mut best: Scored, layer: &LayerShape, arch: &ArchSpec, useful: u64) -> (Scored, u64, u64) {
    let (mut evaluated, mut moves) = (0u64, 0u64);
    while (moves as usize) < MAX_REFINEMENT_MOVES {
        let cands: Vec<Mapping> =
            neighbours(&best.mapping, layer, arch).into_iter().filter(|x| x.is_valid(layer, arch)).collect();
        evaluated += cands.len() as u64;
        let Some(next) = cands.into_par_iter().map(|m| score(m, layer, arch, useful)).reduce_with(better) else {
            break;
        };
        if Objective.compare((&next.cost, &next.encoding), (&best.cost, &best.encoding)) != Ordering::Less {
            break;
        }
        best = next;
        moves += 1;
    }
    (best, evaluated, moves)
}

/// Lexicographically best mapping of `layer` on `arch`. Exhaustive streams
/// return their exact minimum; sampled streams are followed by greedy
/// best-improvement refinement.
pub fn optimize(layer: &LayerShape, arch: &ArchSpec, limits: &MapspaceLimits, cache: Option<&Cache>) -> Result<OptimizeOutcome> {
    let useful = derive_metrics(layer)?.mac_count;
    let key = cache.map(|_| cache_key(layer, arch, limits));
    if let (Some(c), Some(k)) = (cache, &key) {
        if let Some(hit) = c.load(k, layer, arch) {
            return Ok(hit);
        }
    }
    let mut space = enumerate_mapspace(layer, arch, limits)?;
    let mode = space.mode;
    let mut evaluated = 0u64;
    let mut top: Vec<Scored> = Vec::new();
    loop {
        let chunk: Vec<Mapping> = space.by_ref().take(4096).collect();
        if chunk.is_empty() {
            break;
        }
        evaluated += chunk.len() as u64;
        top.extend(chunk.into_par_iter().map(|m| score(m, layer, arch, useful)).collect::<Vec<_>>());
        top.sort_by(|a, b| Objective.compare((&a.cost, &a.encoding), (&b.cost, &b.encoding)));
        top.truncate(if mode == SearchMode::Sampled { REFINEMENT_STARTS } else { 1 });
    }
    if top.is_empty() {
        return Err(Error::EmptyMapspace(layer.name.clone()));
    }
    let (best, evals, moves) = top
        .into_par_iter()
        .map(|start| if mode == SearchMode::Sampled { refine(start, layer, arch, useful) } else { (start, 0, 0) })
        .reduce_with(|a, b| {
            let (e, m) = (a.1 + b.1, a.2 + b.2);
            (better(a.0, b.0), e, m)
        })
        .expect("at least one start");
    evaluated += evals;
    let outcome = OptimizeOutcome {
        mapping: best.mapping,
        encoding: best.encoding,
        cost: best.cost,
        mode,
        evaluated,
        refinement_moves: moves,
        cached: false,
    };
    if let (Some(c), Some(k)) = (cache, &key) {
        c.store(k, &outcome)?;
    }
    Ok(outcome)
}

/// Layer with its batch multiplied by `k`.
pub fn batch_variant(layer: &LayerShape, k: u64) -> LayerShape {
    layer.batch_variant(k)
}

/// Layers per second for a run that processes `k` batched inputs in `latency_ns`.
pub fn throughput(k: u64, latency_ns: f64) -> f64 {
    k as f64 * 1e9 / latency_ns
}

/// Content hash of everything that determines an optimization result.
pub fn cache_key(layer: &LayerShape, arch: &ArchSpec, limits: &MapspaceLimits) -> String {
    let mut h = Sha256::new();
    let mut shape = layer.clone();
    shape.name.clear();
    for part in [
        MODEL_VERSION.to_string(),
        shape.to_record(),
        arch.to_config(),
        format!("{}/{}/{}", limits.max_candidates, limits.random_seed, limits.exhaustive_threshold),
    ] {
        h.update(part.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    version: String,
    encoding: String,
    mode: String,
    cost: CostResult,
}

/// Directory of cached optimization results, one JSON file per key.
#[derive(Clone, Debug)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Cache { dir: dir.into() }
    }

    /// `ACCELCMP_CACHE_DIR` when set (`off` or empty disables caching),
    /// otherwise `default`.
    pub fn from_env(default: Option<PathBuf>) -> Option<Cache> {
        match std::env::var(CACHE_DIR_ENV) {
            Ok(v) if v.is_empty() || v == "off" => None,
            Ok(v) => Some(Cache::new(v)),
            Err(_) => default.map(Cache::new),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Cached outcome, re-evaluated from its encoding so the cost is exact.
    fn load(&self, key: &str, layer: &LayerShape, arch: &ArchSpec) -> Option<OptimizeOutcome> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        if entry.version != MODEL_VERSION {
            return None;
        }
        let mapping = Mapping::parse(&entry.encoding, arch.levels.len()).ok()?;
        let cost = crate::cost::evaluate(&mapping, layer, arch).ok()?;
        let mode = if entry.mode == "exhaustive" { SearchMode::Exhaustive } else { SearchMode::Sampled };
        Some(OptimizeOutcome { encoding: entry.encoding, mapping, cost, mode, evaluated: 0, refinement_moves: 0, cached: true })
    }

    fn store(&self, key: &str, outcome: &OptimizeOutcome) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let entry = CacheEntry {
            version: MODEL_VERSION.to_string(),
            encoding: outcome.encoding.clone(),
            mode: if outcome.mode == SearchMode::Exhaustive { "exhaustive" } else { "sampled" }.to_string(),
            cost: outcome.cost.clone(),
        };
        let json = serde_json::to_string_pretty(&entry).map_err(|e| Error::Io(e.into()))?;
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        fs::write(&tmp, json)?;
        fs::rename(&tmp, self.path(key))?;
        Ok(())
    }
}
