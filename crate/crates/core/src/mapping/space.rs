//! The legal mapping space of a layer on an architecture.
//!
//! Small spaces are enumerated completely (exact divisors only). Larger ones
//! are sampled: spatial factors are drawn first within the remaining fanout
//! budget and may pad the dimension, temporal factors are drawn from the
//! divisors of what is left, and tiles that overflow a buffer are repaired by
//! pushing prime factors outward.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ceil_div, relevant, slot_children, slot_reduces, Mapping, Violation};
use crate::arch::{ArchSpec, Operand};
use crate::error::{Error, Result};
use crate::workload::{Dim, LayerShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MapspaceLimits {
    /// Mappings drawn when the space is too large to enumerate.
    pub max_candidates: u64,
    pub random_seed: u64,
    /// Largest factorization space enumerated exhaustively.
    pub exhaustive_threshold: u64,
}

impl Default for MapspaceLimits {
    fn default() -> Self {
        MapspaceLimits { max_candidates: 4000, random_seed: 0, exhaustive_threshold: 2000 }
    }
}

impl MapspaceLimits {
    pub fn validate(&self) -> Result<()> {
        if self.max_candidates == 0 || self.exhaustive_threshold == 0 {
            return Err(Error::InvalidArch("mapspace limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchMode {
    Exhaustive,
    Sampled,
}

/// A deterministic stream of valid mappings.
pub struct Mapspace {
    pub mode: SearchMode,
    inner: Box<dyn Iterator<Item = Mapping> + Send>,
}

impl Iterator for Mapspace {
    type Item = Mapping;
    fn next(&mut self) -> Option<Mapping> {
        self.inner.next()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Slot {
    Temporal(usize),
    Spatial(usize),
}

impl Slot {
    pub(crate) fn get(self, m: &Mapping, d: Dim) -> u64 {
        match self {
            Slot::Temporal(l) => m.temporal[l][d.index()],
            Slot::Spatial(f) => m.spatial[f][d.index()],
        }
    }

    pub(crate) fn set(self, m: &mut Mapping, d: Dim, v: u64) {
        match self {
            Slot::Temporal(l) => m.temporal[l][d.index()] = v,
            Slot::Spatial(f) => m.spatial[f][d.index()] = v,
        }
    }
}

/// Slots of `d` that may take a factor other than 1, excluding the LLM
/// temporal slot (which is always derived).
pub(crate) fn free_slots(arch: &ArchSpec, d: Dim) -> Vec<Slot> {
    let n = arch.levels.len();
    let mut slots: Vec<Slot> = (1..n).map(Slot::Temporal).collect();
    for f in 0..n {
        if slot_children(arch, f) > 1 && (slot_reduces(arch, f) || relevant(Operand::Output, d)) {
            slots.push(Slot::Spatial(f));
        }
    }
    slots
}

fn prime_factors(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        let mut e = 0;
        while n % p == 0 {
            n /= p;
            e += 1;
        }
        if e > 0 {
            out.push((p, e));
        }
        p += 1;
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

pub(crate) fn smallest_prime_factor(n: u64) -> u64 {
    prime_factors(n).first().map_or(1, |&(p, _)| p)
}

pub(crate) fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n % i == 0 {
            small.push(i);
            if i * i != n {
                large.push(n / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Number of ordered exact factorizations of every dim over its slots.
pub fn factorization_space_size(layer: &LayerShape, arch: &ArchSpec) -> u128 {
    let dims = layer.dims();
    Dim::ALL
        .into_iter()
        .map(|d| {
            let k = free_slots(arch, d).len() as u64 + 1;
            prime_factors(dims[d.index()])
                .into_iter()
                .map(|(_, e)| binomial(e as u64 + k - 1, k - 1))
                .fold(1u128, u128::saturating_mul)
        })
        .fold(1u128, u128::saturating_mul)
}

/// Dims irrelevant to input, weight and output respectively.
const GROUPS: [&[Dim]; 3] = [&[Dim::Oc], &[Dim::B, Dim::Ox, Dim::Oy], &[Dim::Ic, Dim::Fh, Dim::Fw]];

const GROUP_ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Loop orders tried for a level splitting `split`: each ordering of the
/// three operand-irrelevant dim groups, innermost group first, deduplicated.
pub fn perm_candidates(split: &[Dim]) -> Vec<Vec<Dim>> {
    let mut out: Vec<Vec<Dim>> = Vec::new();
    for order in GROUP_ORDERS {
        let perm: Vec<Dim> = order
            .iter()
            .rev()
            .flat_map(|&g| GROUPS[g].iter().copied())
            .filter(|d| split.contains(d))
            .collect();
        if !out.contains(&perm) {
            out.push(perm);
        }
    }
    out
}

fn split_dims(t: &[u64; 7]) -> Vec<Dim> {
    Dim::ALL.into_iter().filter(|d| t[d.index()] > 1).collect()
}

/// (level, operand) pairs whose bypass flag is a free choice.
fn bypass_choices(arch: &ArchSpec) -> Vec<(usize, Operand)> {
    let mut out = Vec::new();
    for l in arch.buffer_levels() {
        for o in Operand::ALL {
            if arch.levels[l].holds(o) && arch.levels[l].bypass_allowed[o.index()] {
                out.push((l, o));
            }
        }
    }
    out
}

/// Ordered tuples over `slots` whose product divides `n`, lexicographic,
/// with each spatial factor within its fanout.
fn exact_factorizations(n: u64, slots: &[Slot], arch: &ArchSpec) -> Vec<Vec<u64>> {
    fn rec(rem: u64, i: usize, slots: &[Slot], arch: &ArchSpec, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if i == slots.len() {
            out.push(cur.clone());
            return;
        }
        for v in divisors(rem) {
            if let Slot::Spatial(f) = slots[i] {
                if v > slot_children(arch, f) {
                    break;
                }
            }
            cur.push(v);
            rec(rem / v, i + 1, slots, arch, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, 0, slots, arch, &mut Vec::new(), &mut out);
    out
}

/// Mappings with one operand held whole at one level below the LLM: its
/// relevant dims iterate at that level, the rest at the LLM.
pub fn extreme_mappings(layer: &LayerShape, arch: &ArchSpec) -> Vec<Mapping> {
    let n = arch.levels.len();
    let dims = layer.dims();
    let mut out = Vec::new();
    for o in Operand::ALL {
        for l in 1..n {
            if !arch.levels[l].holds(o) {
                continue;
            }
            let mut m = Mapping::unit(n);
            for d in Dim::ALL {
                let slot = if relevant(o, d) { l } else { 0 };
                m.temporal[slot][d.index()] = dims[d.index()];
            }
            for lv in [0, l] {
                m.perms[lv] = split_dims(&m.temporal[lv]);
            }
            if m.is_valid(layer, arch) && !out.contains(&m) {
                out.push(m);
            }
        }
    }
    out
}

fn cartesian(lens: &[usize]) -> impl Iterator<Item = Vec<usize>> + Send {
    let lens = lens.to_vec();
    let total: usize = lens.iter().product();
    (0..total).map(move |mut k| {
        let mut idx = vec![0; lens.len()];
        for i in (0..lens.len()).rev() {
            idx[i] = k % lens[i];
            k /= lens[i];
        }
        idx
    })
}

fn exhaustive(layer: Arc<LayerShape>, arch: Arc<ArchSpec>) -> impl Iterator<Item = Mapping> + Send {
    let n = arch.levels.len();
    let dims = layer.dims();
    let slots: Vec<Vec<Slot>> = Dim::ALL.into_iter().map(|d| free_slots(&arch, d)).collect();
    let lists: Vec<Vec<Vec<u64>>> =
        Dim::ALL.into_iter().map(|d| exact_factorizations(dims[d.index()], &slots[d.index()], &arch)).collect();
    let lens: Vec<usize> = lists.iter().map(Vec::len).collect();
    let bypass = bypass_choices(&arch);
    cartesian(&lens)
        .filter_map({
            let arch = arch.clone();
            let layer = layer.clone();
            move |pick| {
                let mut m = Mapping::unit(n);
                for d in Dim::ALL {
                    let tuple = &lists[d.index()][pick[d.index()]];
                    for (slot, &v) in slots[d.index()].iter().zip(tuple) {
                        slot.set(&mut m, d, v);
                    }
                }
                m.normalize_llm(&layer);
                let structural = m.violations(&layer, &arch).into_iter().all(|v| matches!(v, Violation::Capacity { .. }));
                structural.then_some(m)
            }
        })
        .flat_map(move |base| {
            let perms: Vec<Vec<Vec<Dim>>> = base.temporal.iter().map(|t| perm_candidates(&split_dims(t))).collect();
            let perm_lens: Vec<usize> = perms.iter().map(Vec::len).collect();
            let bypass = bypass.clone();
            let layer = layer.clone();
            let arch = arch.clone();
            (0u64..1 << bypass.len()).flat_map(move |mask| {
                let mut with_bypass = base.clone();
                for (i, &(l, o)) in bypass.iter().enumerate() {
                    with_bypass.bypass[l][o.index()] = mask >> i & 1 == 1;
                }
                let fits = with_bypass.violations(&layer, &arch).is_empty();
                let perms = perms.clone();
                cartesian(&perm_lens).filter(move |_| fits).map(move |pick| {
                    let mut m = with_bypass.clone();
                    for (l, &p) in pick.iter().enumerate() {
                        m.perms[l] = perms[l][p].clone();
                    }
                    m
                })
            })
        })
}

/// Pushes prime factors out of the outermost overfull level until every
/// tile fits or nothing is left to move.
pub(crate) fn repair_capacity(m: &mut Mapping, layer: &LayerShape, arch: &ArchSpec, rng: &mut ChaCha8Rng) {
    for _ in 0..512 {
        let over = m.violations(layer, arch).into_iter().find_map(|v| match v {
            Violation::Capacity { level, .. } => arch.levels.iter().position(|l| l.name == level),
            _ => None,
        });
        let Some(l) = over else { return };
        let n = m.levels();
        let mut movable = Vec::new();
        for d in Dim::ALL {
            for k in l..n {
                for slot in [Slot::Temporal(k), Slot::Spatial(k)] {
                    if slot.get(m, d) > 1 {
                        movable.push((slot, d));
                    }
                }
            }
        }
        let Some(&(slot, d)) = movable.choose(rng) else { return };
        let v = slot.get(m, d);
        let p = smallest_prime_factor(v);
        slot.set(m, d, v / p);
        if l - 1 == 0 {
            m.normalize_llm(layer);
        } else {
            m.temporal[l - 1][d.index()] *= p;
            m.sync_perms();
        }
    }
}

fn sample_one(layer: &LayerShape, arch: &ArchSpec, rng: &mut ChaCha8Rng) -> Mapping {
    let n = arch.levels.len();
    let dims = layer.dims();
    let mut m = Mapping::unit(n);
    let mut budget: Vec<u64> = (0..n).map(|f| slot_children(arch, f)).collect();
    let mut mac_budget = arch.mac.total_units;
    let mut order = Dim::ALL;
    order.shuffle(rng);
    for d in order {
        let mut rem = dims[d.index()];
        let mut fans: Vec<usize> = free_slots(arch, d)
            .into_iter()
            .filter_map(|s| match s {
                Slot::Spatial(f) => Some(f),
                Slot::Temporal(_) => None,
            })
            .collect();
        fans.shuffle(rng);
        for f in fans {
            let cap = budget[f].min(mac_budget).min(rem);
            if cap <= 1 {
                continue;
            }
            let s = if rng.gen_bool(0.5) {
                cap
            } else {
                let mut cands: Vec<u64> = divisors(rem).into_iter().take_while(|&v| v <= cap).collect();
                if !cands.contains(&cap) {
                    cands.push(cap);
                }
                *cands.choose(rng).expect("1 is always a candidate")
            };
            m.spatial[f][d.index()] = s;
            budget[f] /= s;
            mac_budget /= s;
            rem = ceil_div(rem, s);
        }
        for l in (1..n).rev() {
            if rem == 1 || rng.gen_bool(0.5) {
                continue;
            }
            let t = *divisors(rem).choose(rng).expect("divisors are non-empty");
            m.temporal[l][d.index()] = t;
            rem /= t;
        }
    }
    m.normalize_llm(layer);
    for l in 0..n {
        m.perms[l] = perm_candidates(&split_dims(&m.temporal[l])).choose(rng).cloned().unwrap_or_default();
    }
    for (l, o) in bypass_choices(arch) {
        m.bypass[l][o.index()] = rng.gen_bool(0.5);
    }
    repair_capacity(&mut m, layer, arch, rng);
    m
}

fn sampled(layer: &LayerShape, arch: &ArchSpec, limits: &MapspaceLimits) -> Vec<Mapping> {
    let mut rng = ChaCha8Rng::seed_from_u64(limits.random_seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for m in extreme_mappings(layer, arch) {
        seen.insert(m.encode());
        out.push(m);
    }
    let target = limits.max_candidates as usize;
    let attempts = limits.max_candidates.saturating_mul(50);
    for _ in 0..attempts {
        if out.len() >= target {
            break;
        }
        let m = sample_one(layer, arch, &mut rng);
        if m.is_valid(layer, arch) && seen.insert(m.encode()) {
            out.push(m);
        }
    }
    out
}

/// Valid mappings of `layer` onto `arch`, complete when the factorization
/// space is at most `limits.exhaustive_threshold`, otherwise a seeded sample
/// of `limits.max_candidates` mappings that includes every valid extreme
/// mapping. Fails with [`Error::EmptyMapspace`] when nothing is legal.
pub fn enumerate_mapspace(layer: &LayerShape, arch: &ArchSpec, limits: &MapspaceLimits) -> Result<Mapspace> {
    layer.validate()?;
    arch.validate()?;
    limits.validate()?;
    let size = factorization_space_size(layer, arch);
    let (mode, mut inner): (SearchMode, Box<dyn Iterator<Item = Mapping> + Send>) =
        if size <= limits.exhaustive_threshold as u128 {
            (SearchMode::Exhaustive, Box::new(exhaustive(Arc::new(layer.clone()), Arc::new(arch.clone()))))
        } else {
            (SearchMode::Sampled, Box::new(sampled(layer, arch, limits).into_iter()))
        };
    let first = inner.next().ok_or_else(|| Error::EmptyMapspace(layer.name.clone()))?;
    Ok(Mapspace { mode, inner: Box::new(std::iter::once(first).chain(inner)) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{preset, Paradigm};
    use crate::mapping::test_arch::two_level;

    fn big() -> MapspaceLimits {
        MapspaceLimits { exhaustive_threshold: 1 << 40, ..MapspaceLimits::default() }
    }

    #[test]
    fn all_ones_layer_has_one_mapping() {
        let layer = LayerShape::fc("one", 1, 1, 1);
        let space = enumerate_mapspace(&layer, &two_level(4, 64), &big()).unwrap();
        assert_eq!(space.mode, SearchMode::Exhaustive);
        assert_eq!(space.count(), 1);
        let cha = preset(Paradigm::Cha);
        let n = enumerate_mapspace(&layer, &cha, &big()).unwrap().count();
        assert_eq!(n, 1 << bypass_choices(&cha).len());
    }

    #[test]
    fn size_four_over_two_temporal_levels() {
        let layer = LayerShape::fc("f", 1, 1, 4);
        let arch = two_level(1, 64);
        let mut pairs: Vec<(u64, u64)> = enumerate_mapspace(&layer, &arch, &big())
            .unwrap()
            .map(|m| (m.temporal[0][Dim::Oc.index()], m.temporal[1][Dim::Oc.index()]))
            .collect();
        pairs.sort();
        assert_eq!(pairs, vec![(1, 4), (2, 2), (4, 1)]);
    }

    /// Independent count: nested loops over divisor triples (LLM, RF, MAC
    /// array) per dim, filtered by the legality rules, times the number of
    /// loop orders of the dims split at each level.
    #[test]
    fn exhaustive_stream_is_complete() {
        let arch = two_level(4, 6);
        for (ic, oc) in [(4u64, 6u64), (8, 1), (6, 12)] {
            let layer = LayerShape::fc("f", 1, ic, oc);
            let triples = |n: u64| -> Vec<(u64, u64, u64)> {
                let mut v = Vec::new();
                for a in 1..=n {
                    for b in 1..=n {
                        for c in 1..=n {
                            if a * b * c == n {
                                v.push((a, b, c));
                            }
                        }
                    }
                }
                v
            };
            let mut expected = 0u64;
            for (i0, i1, i2) in triples(ic) {
                for (o0, o1, o2) in triples(oc) {
                    if i2 * o2 > 4 {
                        continue;
                    }
                    // RF holds input i1*i2, weight i1*i2*o1*o2, output o1*o2 words.
                    let words = i1 * i2 + i1 * i2 * o1 * o2 + o1 * o2;
                    if words > 6 {
                        continue;
                    }
                    let orders = |a: u64, b: u64| if a > 1 && b > 1 { 2 } else { 1 };
                    expected += orders(i0, o0) * orders(i1, o1);
                }
            }
            let got = enumerate_mapspace(&layer, &arch, &big()).unwrap().count() as u64;
            assert_eq!(got, expected, "Ic={ic} Oc={oc}");
        }
    }

    #[test]
    fn streams_are_deterministic_and_valid() {
        let arch = preset(Paradigm::Cha);
        let layer = LayerShape::conv("c", 1, 16, 32, 14, 3, 1, 1);
        let limits = MapspaceLimits { max_candidates: 200, random_seed: 7, exhaustive_threshold: 10 };
        let a: Vec<String> = enumerate_mapspace(&layer, &arch, &limits).unwrap().map(|m| m.encode()).collect();
        let b: Vec<String> = enumerate_mapspace(&layer, &arch, &limits).unwrap().map(|m| m.encode()).collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        for m in enumerate_mapspace(&layer, &arch, &limits).unwrap() {
            assert_eq!(m.validate(&layer, &arch), Ok(()));
            assert_eq!(Mapping::parse(&m.encode(), arch.levels.len()).unwrap(), m);
        }
    }

    #[test]
    fn mobilenet_first_layer_is_sampled_on_cha() {
        let layer = LayerShape::conv("mn_l1", 1, 3, 32, 224, 3, 2, 1);
        let arch = preset(Paradigm::Cha);
        assert!(factorization_space_size(&layer, &arch) > 1_000_000);
        let limits = MapspaceLimits { max_candidates: 300, random_seed: 1, exhaustive_threshold: 1_000_000 };
        let space = enumerate_mapspace(&layer, &arch, &limits).unwrap();
        assert_eq!(space.mode, SearchMode::Sampled);
        assert_eq!(space.count(), 300);
    }

    #[test]
    fn no_legal_mapping_is_reported() {
        let mut arch = preset(Paradigm::Ndp);
        arch.levels[1].capacity = Some(2);
        arch.levels[1].bypass_allowed = [false; 3];
        let layer = LayerShape::fc("f", 1, 4, 4);
        assert!(matches!(
            enumerate_mapspace(&layer, &arch, &big()),
            Err(Error::EmptyMapspace(name)) if name == "f"
        ));
    }

    #[test]
    fn perm_candidates_put_irrelevant_groups_innermost() {
        let c = perm_candidates(&[Dim::B, Dim::Ic, Dim::Oc]);
        assert_eq!(c.len(), 6);
        assert!(c.contains(&vec![Dim::B, Dim::Ic, Dim::Oc]));
        assert_eq!(perm_candidates(&[Dim::Ox, Dim::Oy]), vec![vec![Dim::Ox, Dim::Oy]]);
        assert_eq!(perm_candidates(&[]), vec![Vec::<Dim>::new()]);
    }

    #[test]
    fn factorization_count_matches_enumeration() {
        let arch = two_level(4, 1 << 20);
        let layer = LayerShape::fc("f", 2, 12, 8);
        // B=2: 3 slots -> 3; Ic=12=2^2*3: C(4,2)*3 = 18; Oc=8: C(5,2) = 10.
        assert_eq!(factorization_space_size(&layer, &arch), 3 * 18 * 10);
    }
}
