//! Analytical access counting, latency, energy and utilization.
//!
//! For every operand the mapping defines a chain of storing levels ending at
//! the MAC. Each child level `c` receives a new tile whenever a relevant
//! loop above it advances; trailing irrelevant loops keep the tile
//! stationary. Parents serve one copy per multicast group, and output tiles
//! that come back after eviction are refilled and accumulated with a
//! read-modify-write at the parent.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, Operand};
use crate::error::{Error, Result};
use crate::mapping::{relevant, slot_multicasts, slot_reduces, Mapping};
use crate::workload::{derive_metrics, Dim, LayerShape};

/// Word counts for one (layer, architecture, mapping).
///
/// Per-level vectors have one entry per memory level; per-link vectors have
/// one entry per fanout plus a final entry for the MAC array. Inner arrays
/// are indexed by [`Operand::index`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessProfile {
    pub reads: Vec<[u64; 3]>,
    pub writes: Vec<[u64; 3]>,
    /// Output words accumulated in place, each one read plus one write.
    pub partial_sum_updates: Vec<u64>,
    pub transferred: Vec<[u64; 3]>,
    /// Children served per word sent (multicast for inputs and weights,
    /// reduction for outputs).
    pub multicast: Vec<[u64; 3]>,
}

impl AccessProfile {
    pub(crate) fn zero(levels: usize) -> Self {
        AccessProfile {
            reads: vec![[0; 3]; levels],
            writes: vec![[0; 3]; levels],
            partial_sum_updates: vec![0; levels],
            transferred: vec![[0; 3]; levels],
            multicast: vec![[1; 3]; levels],
        }
    }

    /// Words accessed at level `l`, counting each update as a read and a write.
    pub fn level_words(&self, l: usize) -> u64 {
        self.reads[l].iter().sum::<u64>() + self.writes[l].iter().sum::<u64>() + 2 * self.partial_sum_updates[l]
    }

    pub fn link_words(&self, f: usize) -> u64 {
        self.transferred[f].iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Bottleneck {
    Compute,
    Level { index: usize, name: String },
    Link { index: usize },
}

impl fmt::Display for Bottleneck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bottleneck::Compute => f.write_str("compute"),
            Bottleneck::Level { name, .. } => f.write_str(name),
            Bottleneck::Link { index } => write!(f, "link{index}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostResult {
    pub latency_ns: f64,
    pub energy_pj: f64,
    /// `llm`, `buffer:<level>` per buffer level, `register`, `network`, `mac`.
    pub breakdown: Vec<(String, f64)>,
    pub utilization: f64,
    pub bottleneck: Bottleneck,
    pub compute_ns: f64,
    pub level_ns: Vec<f64>,
    pub link_ns: Vec<f64>,
    pub useful_macs: u64,
    pub padded_macs: u64,
    pub active_macs: u64,
}

impl CostResult {
    pub fn component(&self, name: &str) -> f64 {
        self.breakdown.iter().filter(|(k, _)| k == name).map(|(_, v)| v).sum()
    }

    pub fn energy_llm(&self) -> f64 {
        self.component("llm")
    }

    /// Buffer levels only, registers excluded.
    pub fn energy_buffers(&self) -> f64 {
        self.breakdown.iter().filter(|(k, _)| k.starts_with("buffer:")).map(|(_, v)| v).sum()
    }

    pub fn energy_register(&self) -> f64 {
        self.component("register")
    }

    pub fn energy_network(&self) -> f64 {
        self.component("network")
    }

    pub fn energy_mac(&self) -> f64 {
        self.component("mac")
    }
}

/// Multicast factor of spatial slot `f` for `o`: children sharing a word
/// (or, for outputs, a reduced partial sum).
fn sharing(m: &Mapping, arch: &ArchSpec, o: Operand, f: usize) -> u64 {
    let enabled = if o == Operand::Output { slot_reduces(arch, f) } else { slot_multicasts(arch, f) };
    if enabled {
        potential_sharing(m, o, f)
    } else {
        1
    }
}

fn potential_sharing(m: &Mapping, o: Operand, f: usize) -> u64 {
    Dim::ALL.into_iter().filter(|&d| !relevant(o, d)).map(|d| m.spatial[f][d.index()]).product()
}

/// Times the tile of `o` at level `c` is replaced, per instance.
pub(crate) fn deliveries(m: &Mapping, o: Operand, c: usize) -> u64 {
    let mut total = 1;
    let mut trailing = 1;
    for l in 0..c.min(m.levels()) {
        for &d in &m.perms[l] {
            let t = m.temporal[l][d.index()];
            total *= t;
            if relevant(o, d) {
                trailing = 1;
            } else {
                trailing *= t;
            }
        }
    }
    total / trailing
}

/// Distinct tiles of `o` each instance of level `c` sees.
pub(crate) fn distinct_tiles(m: &Mapping, o: Operand, c: usize) -> u64 {
    (0..c.min(m.levels()))
        .flat_map(|l| Dim::ALL.into_iter().filter(move |&d| relevant(o, d)).map(move |d| (l, d)))
        .map(|(l, d)| m.temporal[l][d.index()])
        .product()
}

/// Per-level and per-link word counts of a valid mapping.
pub fn analyze_reuse(m: &Mapping, layer: &LayerShape, arch: &ArchSpec) -> AccessProfile {
    let n = arch.levels.len();
    let mut p = AccessProfile::zero(n);
    for f in 0..n {
        for o in Operand::ALL {
            p.multicast[f][o.index()] = sharing(m, arch, o, f);
        }
    }
    let distributed = |f: usize| f < arch.fanouts.len() && arch.fanouts[f].distributed;
    for o in Operand::ALL {
        let oi = o.index();
        let share = |g: usize| sharing(m, arch, o, g);
        let chain = m.chain(arch, o);
        for w in chain.windows(2) {
            let (parent, child) = (w[0], w[1]);
            let inst = m.instances(child);
            let fp = m.tile_footprint(layer, child, o);
            let below = |f: usize| -> u64 { (f + 1..child).map(share).product() };
            if o != Operand::Output {
                let fills = inst * deliveries(m, o, child) * fp;
                if child < n {
                    p.writes[child][oi] += fills;
                }
                p.reads[parent][oi] += fills / (parent..child).map(share).product::<u64>();
                for f in parent..child {
                    let x = fills / below(f);
                    p.transferred[f][oi] += if distributed(f) { x - x / potential_sharing(m, o, f) } else { x / share(f) };
                }
            } else {
                let residencies = inst * deliveries(m, o, child);
                let first = inst * distinct_tiles(m, o, child);
                let refills = if child < n { residencies - first } else { 0 };
                if child < n {
                    p.reads[child][oi] += residencies * fp;
                    p.writes[child][oi] += refills * fp;
                }
                let reduced: u64 = (parent..child).map(share).product();
                p.writes[parent][oi] += first * fp / reduced;
                p.partial_sum_updates[parent] += (residencies - first) * fp / reduced;
                for f in parent..child {
                    let y = (residencies + refills) * fp / below(f);
                    p.transferred[f][oi] += if distributed(f) { y - y / potential_sharing(m, o, f) } else { y / share(f) };
                }
            }
        }
    }
    p
}

fn seconds_to_ns(bytes: f64, bytes_per_s: f64) -> f64 {
    bytes / bytes_per_s * 1e9
}

/// Compute time, per-level and per-link transfer times, and the overall
/// latency under perfect overlap with ties going to compute.
pub fn latency(profile: &AccessProfile, m: &Mapping, arch: &ArchSpec) -> (f64, Bottleneck, f64, Vec<f64>, Vec<f64>) {
    let wb = arch.word_bytes() as f64;
    let compute_ns = m.temporal_steps() as f64 * arch.mac.latency_ns;
    let level_ns: Vec<f64> = arch
        .levels
        .iter()
        .enumerate()
        .map(|(l, lvl)| {
            let mut bw = lvl.bandwidth * m.instances(l) as f64;
            if l == 0 && arch.fanouts.first().is_some_and(|f| f.distributed) {
                bw *= m.spatial_product(0) as f64 / arch.fanouts[0].children as f64;
            }
            seconds_to_ns(profile.level_words(l) as f64 * wb, bw)
        })
        .collect();
    let link_ns: Vec<f64> = arch
        .fanouts
        .iter()
        .enumerate()
        .map(|(f, fan)| seconds_to_ns(profile.link_words(f) as f64 * wb, fan.link_bandwidth * m.instances(f + 1) as f64))
        .collect();
    let mut worst = compute_ns;
    let mut bottleneck = Bottleneck::Compute;
    for (l, &t) in level_ns.iter().enumerate() {
        if t > worst {
            worst = t;
            bottleneck = Bottleneck::Level { index: l, name: arch.levels[l].name.clone() };
        }
    }
    for (f, &t) in link_ns.iter().enumerate() {
        if t > worst {
            worst = t;
            bottleneck = Bottleneck::Link { index: f };
        }
    }
    (worst, bottleneck, compute_ns, level_ns, link_ns)
}

/// Total energy and its breakdown; the total is the sum of the breakdown.
pub fn energy(profile: &AccessProfile, arch: &ArchSpec, useful_macs: u64) -> (f64, Vec<(String, f64)>) {
    let bits = arch.word_bits as f64;
    let level = |l: usize| profile.level_words(l) as f64 * bits * arch.levels[l].energy_pj_per_bit;
    let mut breakdown = vec![("llm".to_string(), level(0))];
    for l in arch.buffer_levels() {
        breakdown.push((format!("buffer:{}", arch.levels[l].name), level(l)));
    }
    breakdown.push(("register".to_string(), level(arch.innermost())));
    let network: f64 = arch
        .fanouts
        .iter()
        .enumerate()
        .map(|(f, fan)| profile.link_words(f) as f64 * bits * fan.link_energy_pj_per_bit)
        .sum();
    breakdown.push(("network".to_string(), network));
    breakdown.push(("mac".to_string(), useful_macs as f64 * 2.0 * bits * arch.mac.energy_pj_per_bit));
    let total = breakdown.iter().map(|(_, v)| v).sum();
    (total, breakdown)
}

/// Fraction of all MAC-unit time spent on useful (unpadded) MACs.
pub fn utilization(useful_macs: u64, latency_ns: f64, arch: &ArchSpec) -> f64 {
    useful_macs as f64 * arch.mac.latency_ns / (latency_ns * arch.mac.total_units as f64)
}

/// Full evaluation of a mapping that is already known to be valid.
pub(crate) fn evaluate_unchecked(m: &Mapping, layer: &LayerShape, arch: &ArchSpec, useful_macs: u64) -> CostResult {
    let profile = analyze_reuse(m, layer, arch);
    let (latency_ns, bottleneck, compute_ns, level_ns, link_ns) = latency(&profile, m, arch);
    let (energy_pj, breakdown) = energy(&profile, arch, useful_macs);
    CostResult {
        latency_ns,
        energy_pj,
        breakdown,
        utilization: utilization(useful_macs, latency_ns, arch),
        bottleneck,
        compute_ns,
        level_ns,
        link_ns,
        useful_macs,
        padded_macs: m.padded_macs(),
        active_macs: m.active_macs(),
    }
}

/// Validates the mapping and evaluates it.
pub fn evaluate(m: &Mapping, layer: &LayerShape, arch: &ArchSpec) -> Result<CostResult> {
    let metrics = derive_metrics(layer)?;
    if let Err(v) = m.validate(layer, arch) {
        let msgs: Vec<String> = v.iter().map(ToString::to_string).collect();
        return Err(Error::InvalidMapping(msgs.join("; ")));
    }
    Ok(evaluate_unchecked(m, layer, arch, metrics.mac_count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{preset, Paradigm, ScaleKnob};
    use crate::mapping::{enumerate_mapspace, MapspaceLimits};
    use proptest::prelude::*;

    fn parse(text: &str, arch: &ArchSpec) -> Mapping {
        Mapping::parse(text, arch.levels.len()).unwrap()
    }

    fn fc1024() -> LayerShape {
        LayerShape::fc("fc", 1, 1024, 1024)
    }

    #[test]
    fn fc_on_cha_is_llm_bound() {
        let arch = preset(Paradigm::Cha);
        let m = parse("T0:Oc=8;T1:Ic=128 | S1:Oc=16;S3:Ic=8,Oc=8 | - | -", &arch);
        let r = evaluate(&m, &fc1024(), &arch).unwrap();
        let expected = (1_048_576.0 + 2048.0) / 25.6e9 * 1e9;
        assert!((r.latency_ns - expected).abs() < 1e-6, "{}", r.latency_ns);
        assert!((r.latency_ns - 41_040.0).abs() < 1.0);
        assert!((r.compute_ns - 1024.0).abs() < 1e-9);
        assert_eq!(r.bottleneck, Bottleneck::Level { index: 0, name: "DRAM".into() });
        assert!((r.utilization - 0.02495).abs() < 1e-4, "{}", r.utilization);
    }

    #[test]
    fn fc_on_ndp_is_compute_bound() {
        let arch = preset(Paradigm::Ndp);
        let m = parse("T0:Oc=4;T1:Ic=1024 | S0:Oc=16;S1:Oc=16 | - | X1:IWO", &arch);
        let r = evaluate(&m, &fc1024(), &arch).unwrap();
        assert_eq!(r.bottleneck, Bottleneck::Compute);
        assert!((r.latency_ns - 8192.0).abs() < 1e-9);
        assert!((r.level_ns[0] - 4096.0).abs() < 30.0, "{}", r.level_ns[0]);
        let cha = preset(Paradigm::Cha);
        let mc = parse("T0:Oc=8;T1:Ic=128 | S1:Oc=16;S3:Ic=8,Oc=8 | - | -", &cha);
        let ratio = evaluate(&mc, &fc1024(), &cha).unwrap().latency_ns / r.latency_ns;
        assert!((4.5..5.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn single_stream_counts() {
        let arch = preset(Paradigm::Cha);
        let layer = fc1024();
        let m = Mapping::trivial(&layer, arch.levels.len());
        let p = analyze_reuse(&m, &layer, &arch);
        assert_eq!(p.reads[0][Operand::Weight.index()], 1_048_576);
        assert_eq!(p.reads[0][Operand::Input.index()], 1024);
        assert_eq!(p.writes[0][Operand::Output.index()], 1024);
    }

    #[test]
    fn single_tile_fc_reads_each_word_once() {
        let arch = crate::mapping::test_arch::two_level(1, 1 << 20);
        let layer = LayerShape::fc("fc", 2, 8, 4);
        let m = parse("T1:B=2,Ic=8,Oc=4 | - | P1:B>Oc>Ic | -", &arch);
        let p = analyze_reuse(&m, &layer, &arch);
        assert_eq!(p.reads[0], [16, 32, 0]);
        assert_eq!(p.writes[0], [0, 0, 8]);
        assert_eq!(p.partial_sum_updates[0], 0);
    }

    #[test]
    fn halo_is_refetched() {
        let arch = crate::mapping::test_arch::two_level(1, 1 << 20);
        let layer = LayerShape::conv("toy", 1, 1, 1, 4, 3, 1, 0);
        let m = parse("T0:Ox=2,Oy=2;T1:Fh=3,Fw=3 | - | P0:Ox>Oy;P1:Fh>Fw | -", &arch);
        let p = analyze_reuse(&m, &layer, &arch);
        assert_eq!(p.reads[0][Operand::Input.index()], 36);
    }

    #[test]
    fn weight_stationary_batch_loop() {
        let arch = crate::mapping::test_arch::two_level(1, 1 << 20);
        let layer = LayerShape::fc("fc", 8, 4, 4);
        let m = parse("T0:B=8,Ic=4,Oc=4 | - | P0:Ic>Oc>B | -", &arch);
        let p = analyze_reuse(&m, &layer, &arch);
        assert_eq!(deliveries(&m, Operand::Weight, 1), 16);
        assert_eq!(p.reads[0][Operand::Weight.index()], 16);
    }

    #[test]
    fn one_mac_layer() {
        let layer = LayerShape::fc("one", 1, 1, 1);
        for p in Paradigm::ALL {
            let arch = preset(p);
            let r = evaluate(&Mapping::trivial(&layer, arch.levels.len()), &layer, &arch).unwrap();
            let three_words = 3.0 / arch.llm().bandwidth * 1e9;
            assert!(r.latency_ns >= arch.mac.latency_ns.max(three_words) - 1e-12);
            if p == Paradigm::Cha {
                assert_eq!(r.latency_ns, 1.0);
                assert!((r.energy_mac() - 3.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn llm_energy_per_mac_ratio_cha_to_pim() {
        let layer = fc1024();
        let per_mac = |p| {
            let arch = preset(p);
            let r = evaluate(&Mapping::trivial(&layer, arch.levels.len()), &layer, &arch).unwrap();
            r.energy_llm() / r.useful_macs as f64
        };
        let ratio = per_mac(Paradigm::Cha) / per_mac(Paradigm::Pim);
        assert!((ratio - 20.0).abs() < 1e-9, "{ratio}");
    }

    #[test]
    fn zero_access_profile_costs_only_macs() {
        let arch = preset(Paradigm::Pim);
        let (e, parts) = energy(&AccessProfile::zero(arch.levels.len()), &arch, 10);
        assert!((e - 10.0 * 6.4).abs() < 1e-9);
        assert_eq!(parts.iter().filter(|(_, v)| *v != 0.0).count(), 1);
    }

    #[test]
    fn full_unpadded_compute_bound_use_is_fully_utilized() {
        let mut arch = crate::mapping::test_arch::two_level(4, 1 << 20);
        arch.levels[0].bandwidth = 1e15;
        arch.levels[1].bandwidth = 1e15;
        let layer = LayerShape::fc("fc", 4, 16, 16);
        let m = parse("T0:B=4,Ic=8,Oc=8 | S1:Ic=2,Oc=2 | P0:B>Ic>Oc | -", &arch);
        let r = evaluate(&m, &layer, &arch).unwrap();
        assert_eq!(r.bottleneck, Bottleneck::Compute, "{r:?}");
        assert!((r.utilization - 1.0).abs() < 1e-12);
    }

    #[test]
    fn padding_lowers_utilization_not_time() {
        let arch = preset(Paradigm::Cha);
        let layer = LayerShape::fc("fc", 1, 1, 20);
        let mut m = Mapping::trivial(&layer, arch.levels.len());
        m.spatial[1][Dim::Oc.index()] = 16;
        m.normalize_llm(&layer);
        let r = evaluate(&m, &layer, &arch).unwrap();
        assert_eq!(r.padded_macs, 32);
        assert_eq!(r.useful_macs, 20);
        assert!((r.energy_mac() - 20.0 * 3.2).abs() < 1e-9);
        assert!((r.utilization - 20.0 / (r.latency_ns * 1024.0)).abs() < 1e-12);
    }

    #[test]
    fn no_padding_conserves_llm_words() {
        let arch = preset(Paradigm::Cha);
        let layer = LayerShape::conv("c", 2, 8, 16, 10, 3, 1, 0);
        let metrics = derive_metrics(&layer).unwrap();
        let limits = MapspaceLimits { max_candidates: 200, random_seed: 3, exhaustive_threshold: 1 };
        for m in enumerate_mapspace(&layer, &arch, &limits).unwrap() {
            let p = analyze_reuse(&m, &layer, &arch);
            if Dim::ALL.into_iter().all(|d| m.padded(d) == layer.dim(d)) {
                assert_eq!(p.writes[0][Operand::Output.index()], metrics.output_words);
                assert!(p.reads[0][Operand::Input.index()] >= metrics.input_words);
            }
            assert!(p.reads[0][Operand::Weight.index()] >= metrics.filter_words);
        }
    }

    fn sample(p: Paradigm, seed: u64) -> (LayerShape, ArchSpec, Vec<Mapping>) {
        let arch = preset(p);
        let layer = LayerShape::conv("c", 1 + seed % 3, 4 + seed % 13, 3 + seed % 17, 6 + seed % 9, 1 + 2 * (seed % 2), 1, seed % 2);
        let limits = MapspaceLimits { max_candidates: 20, random_seed: seed, exhaustive_threshold: 1 };
        let ms = enumerate_mapspace(&layer, &arch, &limits).unwrap().collect();
        (layer, arch, ms)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn more_bandwidth_never_slows(seed in 0u64..10_000, which in 0usize..3, factor in 1.0f64..8.0) {
            let (layer, arch, ms) = sample(Paradigm::ALL[which], seed);
            for m in ms {
                let base = evaluate(&m, &layer, &arch).unwrap();
                let mut faster = arch.clone();
                let l = (seed as usize) % arch.levels.len();
                faster.levels[l].bandwidth *= factor;
                let f = (seed as usize) % arch.fanouts.len();
                faster.fanouts[f].link_bandwidth *= factor;
                prop_assert!(evaluate(&m, &layer, &faster).unwrap().latency_ns <= base.latency_ns);
                let llm = arch.scale(ScaleKnob::LlmBandwidth, factor).unwrap();
                prop_assert!(evaluate(&m, &layer, &llm).unwrap().latency_ns <= base.latency_ns);
            }
        }

        #[test]
        fn more_energy_per_bit_never_cheaper(seed in 0u64..10_000, which in 0usize..3, factor in 1.0f64..8.0) {
            let (layer, arch, ms) = sample(Paradigm::ALL[which], seed);
            for m in ms {
                let base = evaluate(&m, &layer, &arch).unwrap();
                let mut dearer = arch.clone();
                let l = (seed as usize) % arch.levels.len();
                dearer.levels[l].energy_pj_per_bit *= factor;
                dearer.fanouts[(seed as usize) % arch.fanouts.len()].link_energy_pj_per_bit *= factor;
                dearer.mac.energy_pj_per_bit *= factor;
                let r = evaluate(&m, &layer, &dearer).unwrap();
                prop_assert!(r.energy_pj >= base.energy_pj);
                let sum: f64 = r.breakdown.iter().map(|(_, v)| v).sum();
                prop_assert_eq!(sum, r.energy_pj);
                prop_assert!(r.utilization <= 1.0 + 1e-12);
            }
        }
    }
}
