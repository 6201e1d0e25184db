//! Mappings of a layer's seven-deep loop nest onto an architecture.
//!
//! A mapping for an `n`-level architecture has `n` temporal slots (one per
//! memory level) and `n` spatial slots: the `n - 1` fanouts between levels
//! plus the MAC array below the register file. The loop nest, outermost
//! first, is `t[0], s[0], t[1], s[1], ..., t[n-1], s[n-1]`, and the tile
//! resident at level `c` spans every slot at or below `c`. Index `n` is the
//! MAC itself, where every operand tile is a single word.

mod encoding;
pub(crate) mod space;

pub use space::{
    enumerate_mapspace, extreme_mappings, factorization_space_size, perm_candidates, Mapspace, MapspaceLimits,
    SearchMode,
};

use std::fmt;

use crate::arch::{ArchSpec, Operand};
pub use crate::workload::Dim;
use crate::workload::LayerShape;

/// Whether `dim` indexes operand `o`. Input relevance covers the sliding
/// window: both the output position and the filter offset select input rows.
pub fn relevant(o: Operand, d: Dim) -> bool {
    match o {
        Operand::Input => d != Dim::Oc,
        Operand::Weight => matches!(d, Dim::Ic | Dim::Oc | Dim::Fh | Dim::Fw),
        Operand::Output => matches!(d, Dim::B | Dim::Oc | Dim::Ox | Dim::Oy),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mapping {
    /// `temporal[l][d]`: trip count of dim `d` at level `l`.
    pub temporal: Vec<[u64; 7]>,
    /// `spatial[f][d]`: split of dim `d` across fanout `f`; the last entry is
    /// the MAC array.
    pub spatial: Vec<[u64; 7]>,
    /// Per level, the dims with a temporal factor above 1, outermost first.
    pub perms: Vec<Vec<Dim>>,
    /// Per level, operands that skip the level.
    pub bypass: Vec<[bool; 3]>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Slot counts do not match the architecture.
    Shape { expected_levels: usize, levels: usize },
    ZeroFactor { dim: Dim },
    /// Factors do not cover the dimension.
    Coverage { dim: Dim, covered: u64, size: u64 },
    /// The LLM factor pads more than needed.
    Padding { dim: Dim, llm_factor: u64, minimal: u64 },
    Fanout { fanout: usize, used: u64, available: u64 },
    MacUnits { used: u64, available: u64 },
    Capacity { level: String, needed_bytes: u64, capacity_bytes: u64 },
    /// Output-irrelevant dim split across children that cannot add partial sums.
    Reduction { fanout: usize, dim: Dim },
    Permutation { level: usize, msg: String },
    Bypass { level: String, operand: Operand },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { expected_levels, levels } => {
                write!(f, "mapping has {levels} levels, architecture has {expected_levels}")
            }
            Violation::ZeroFactor { dim } => write!(f, "zero factor for {dim}"),
            Violation::Coverage { dim, covered, size } => write!(f, "{dim}: factors cover {covered} < {size}"),
            Violation::Padding { dim, llm_factor, minimal } => {
                write!(f, "{dim}: LLM factor {llm_factor} exceeds minimal {minimal}")
            }
            Violation::Fanout { fanout, used, available } => {
                write!(f, "fanout {fanout}: spatial product {used} > {available} children")
            }
            Violation::MacUnits { used, available } => write!(f, "{used} active MACs > {available} units"),
            Violation::Capacity { level, needed_bytes, capacity_bytes } => {
                write!(f, "{level}: tiles need {needed_bytes} B > capacity {capacity_bytes} B")
            }
            Violation::Reduction { fanout, dim } => {
                write!(f, "fanout {fanout}: {dim} split across children without reduction")
            }
            Violation::Permutation { level, msg } => write!(f, "level {level} permutation: {msg}"),
            Violation::Bypass { level, operand } => write!(f, "{level}: {operand} may not bypass"),
        }
    }
}

pub(crate) fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Child capacity of spatial slot `f`; the last slot is the MAC array.
pub(crate) fn slot_children(arch: &ArchSpec, f: usize) -> u64 {
    if f < arch.fanouts.len() {
        arch.fanouts[f].children
    } else {
        arch.mac_array_children()
    }
}

/// Whether spatial slot `f` can combine partial sums from its children.
pub(crate) fn slot_reduces(arch: &ArchSpec, f: usize) -> bool {
    f >= arch.fanouts.len() || arch.fanouts[f].reduction
}

pub(crate) fn slot_multicasts(arch: &ArchSpec, f: usize) -> bool {
    f >= arch.fanouts.len() || arch.fanouts[f].multicast
}

impl Mapping {
    /// Every loop at the LLM, nothing spatial, nothing bypassed.
    pub fn trivial(layer: &LayerShape, levels: usize) -> Mapping {
        let mut m = Mapping::unit(levels);
        m.temporal[0] = layer.dims();
        m.sync_perms();
        m
    }

    pub(crate) fn unit(levels: usize) -> Mapping {
        Mapping {
            temporal: vec![[1; 7]; levels],
            spatial: vec![[1; 7]; levels],
            perms: vec![Vec::new(); levels],
            bypass: vec![[false; 3]; levels],
        }
    }

    pub fn levels(&self) -> usize {
        self.temporal.len()
    }

    /// Extent of `d` in the tile resident at level `c` (`c == levels()` is the MAC).
    pub fn extent(&self, c: usize, d: Dim) -> u64 {
        let i = d.index();
        self.temporal[c.min(self.levels())..].iter().map(|t| t[i]).product::<u64>()
            * self.spatial[c.min(self.levels())..].iter().map(|s| s[i]).product::<u64>()
    }

    /// Padded size of `d`: the product of every factor.
    pub fn padded(&self, d: Dim) -> u64 {
        self.extent(0, d)
    }

    /// Extent of `d` below the LLM's temporal loop.
    pub(crate) fn inner_extent(&self, d: Dim) -> u64 {
        self.padded(d) / self.temporal[0][d.index()]
    }

    /// Words of operand `o` in the tile at level `c`.
    pub fn tile_footprint(&self, layer: &LayerShape, c: usize, o: Operand) -> u64 {
        let e = |d| self.extent(c, d);
        match o {
            Operand::Input => {
                let h = (e(Dim::Ox) - 1) * layer.stride + e(Dim::Fh);
                let w = (e(Dim::Oy) - 1) * layer.stride + e(Dim::Fw);
                e(Dim::B) * e(Dim::Ic) * h * w
            }
            Operand::Weight => e(Dim::Oc) * e(Dim::Ic) * e(Dim::Fh) * e(Dim::Fw),
            Operand::Output => e(Dim::B) * e(Dim::Oc) * e(Dim::Ox) * e(Dim::Oy),
        }
    }

    /// Whether level `l` keeps a copy of `o`.
    pub fn stores(&self, arch: &ArchSpec, l: usize, o: Operand) -> bool {
        l == 0 || l == arch.innermost() || (arch.levels[l].holds(o) && !self.bypass[l][o.index()])
    }

    /// Levels holding `o`, outermost first, followed by the MAC index `levels()`.
    pub fn chain(&self, arch: &ArchSpec, o: Operand) -> Vec<usize> {
        let mut c: Vec<usize> = (0..self.levels()).filter(|&l| self.stores(arch, l, o)).collect();
        c.push(self.levels());
        c
    }

    /// Active instances of level `c`: the product of every spatial factor above it.
    pub fn instances(&self, c: usize) -> u64 {
        self.spatial[..c.min(self.levels())].iter().flat_map(|s| s.iter()).product()
    }

    pub fn active_macs(&self) -> u64 {
        self.instances(self.levels())
    }

    pub fn spatial_product(&self, f: usize) -> u64 {
        self.spatial[f].iter().product()
    }

    pub fn temporal_steps(&self) -> u64 {
        self.temporal.iter().flat_map(|t| t.iter()).product()
    }

    pub fn padded_macs(&self) -> u64 {
        self.temporal_steps() * self.active_macs()
    }

    /// Resets every LLM factor to the smallest value covering the layer.
    pub fn normalize_llm(&mut self, layer: &LayerShape) {
        let dims = layer.dims();
        for d in Dim::ALL {
            self.temporal[0][d.index()] = 1;
            let inner = self.padded(d);
            self.temporal[0][d.index()] = ceil_div(dims[d.index()], inner).max(1);
        }
        self.sync_perms();
    }

    /// Drops dims whose factor became 1 from the permutations and appends
    /// newly split dims as the innermost loops.
    pub fn sync_perms(&mut self) {
        for l in 0..self.levels() {
            let t = self.temporal[l];
            self.perms[l].retain(|d| t[d.index()] > 1);
            for d in Dim::ALL {
                if t[d.index()] > 1 && !self.perms[l].contains(&d) {
                    self.perms[l].push(d);
                }
            }
        }
    }

    /// Every violated invariant; empty when the mapping is legal.
    pub fn violations(&self, layer: &LayerShape, arch: &ArchSpec) -> Vec<Violation> {
        let n = arch.levels.len();
        let mut out = Vec::new();
        if self.temporal.len() != n || self.spatial.len() != n || self.perms.len() != n || self.bypass.len() != n {
            out.push(Violation::Shape { expected_levels: n, levels: self.temporal.len() });
            return out;
        }
        if self.temporal.iter().chain(&self.spatial).any(|s| s.contains(&0)) {
            for d in Dim::ALL {
                if self.temporal.iter().chain(&self.spatial).any(|s| s[d.index()] == 0) {
                    out.push(Violation::ZeroFactor { dim: d });
                }
            }
            return out;
        }
        let dims = layer.dims();
        for d in Dim::ALL {
            let size = dims[d.index()];
            let covered = self.padded(d);
            if covered < size {
                out.push(Violation::Coverage { dim: d, covered, size });
            } else {
                let minimal = ceil_div(size, self.inner_extent(d));
                let llm_factor = self.temporal[0][d.index()];
                if llm_factor != minimal {
                    out.push(Violation::Padding { dim: d, llm_factor, minimal });
                }
            }
        }
        for f in 0..n {
            let used = self.spatial_product(f);
            let available = slot_children(arch, f);
            if used > available {
                out.push(Violation::Fanout { fanout: f, used, available });
            }
            if !slot_reduces(arch, f) {
                for d in Dim::ALL {
                    if !relevant(Operand::Output, d) && self.spatial[f][d.index()] > 1 {
                        out.push(Violation::Reduction { fanout: f, dim: d });
                    }
                }
            }
        }
        let used = self.active_macs();
        if used > arch.mac.total_units {
            out.push(Violation::MacUnits { used, available: arch.mac.total_units });
        }
        for l in 0..n {
            let t = self.temporal[l];
            let perm = &self.perms[l];
            let mut seen = [false; 7];
            for d in perm {
                if seen[d.index()] {
                    out.push(Violation::Permutation { level: l, msg: format!("{d} repeated") });
                }
                seen[d.index()] = true;
                if t[d.index()] <= 1 {
                    out.push(Violation::Permutation { level: l, msg: format!("{d} has factor 1") });
                }
            }
            for d in Dim::ALL {
                if t[d.index()] > 1 && !seen[d.index()] {
                    out.push(Violation::Permutation { level: l, msg: format!("{d} missing") });
                }
            }
            for o in Operand::ALL {
                if self.bypass[l][o.index()] && !arch.levels[l].bypass_allowed[o.index()] {
                    out.push(Violation::Bypass { level: arch.levels[l].name.clone(), operand: o });
                }
            }
        }
        for (l, lvl) in arch.levels.iter().enumerate() {
            let Some(cap) = lvl.capacity else { continue };
            let words: u64 = Operand::ALL
                .into_iter()
                .filter(|&o| self.stores(arch, l, o))
                .map(|o| self.tile_footprint(layer, l, o))
                .sum();
            let copies = if arch.double_buffering && l > 0 && l < arch.innermost() { 2 } else { 1 };
            let needed = words * arch.word_bytes() * copies;
            if needed > cap {
                out.push(Violation::Capacity { level: lvl.name.clone(), needed_bytes: needed, capacity_bytes: cap });
            }
        }
        out
    }

    pub fn validate(&self, layer: &LayerShape, arch: &ArchSpec) -> Result<(), Vec<Violation>> {
        let v = self.violations(layer, arch);
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    pub fn is_valid(&self, layer: &LayerShape, arch: &ArchSpec) -> bool {
        self.violations(layer, arch).is_empty()
    }
}

/// Standalone form of [`Mapping::tile_footprint`].
pub fn tile_footprint(mapping: &Mapping, layer: &LayerShape, level: usize, operand: Operand) -> u64 {
    mapping.tile_footprint(layer, level, operand)
}

/// Standalone form of [`Mapping::validate`].
pub fn validate(mapping: &Mapping, layer: &LayerShape, arch: &ArchSpec) -> Result<(), Vec<Violation>> {
    mapping.validate(layer, arch)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{preset, Paradigm};
    use crate::workload::derive_metrics;

    fn toy() -> LayerShape {
        LayerShape::conv("toy", 1, 1, 1, 4, 3, 1, 0)
    }

    #[test]
    fn whole_layer_footprint_matches_metrics() {
        let arch = preset(Paradigm::Cha);
        for layer in [toy(), LayerShape::fc("fc", 4, 32, 16), LayerShape::conv("c", 2, 3, 5, 9, 3, 2, 0)] {
            let m = Mapping::trivial(&layer, arch.levels.len());
            let met = derive_metrics(&layer).unwrap();
            assert_eq!(m.tile_footprint(&layer, 0, Operand::Weight), met.filter_words);
            assert_eq!(m.tile_footprint(&layer, 0, Operand::Output), met.output_words);
            if layer.name != "c" {
                assert_eq!(m.tile_footprint(&layer, 0, Operand::Input), met.input_words);
            }
        }
    }

    #[test]
    fn unit_tile_input_is_one_window() {
        let layer = LayerShape::conv("c", 1, 4, 4, 8, 3, 1, 0);
        let mut m = Mapping::trivial(&layer, 2);
        m.temporal[0] = [1, 4, 4, 6, 6, 1, 1];
        m.temporal[1] = [1, 1, 1, 1, 1, 3, 3];
        m.sync_perms();
        assert_eq!(m.tile_footprint(&layer, 1, Operand::Input), 9);
        assert_eq!(m.tile_footprint(&layer, 2, Operand::Input), 1);
    }

    #[test]
    fn halo_tile_footprint() {
        let layer = toy();
        let mut m = Mapping::trivial(&layer, 2);
        m.temporal[0] = [1, 1, 1, 1, 1, 1, 1];
        m.temporal[1] = [1, 1, 1, 2, 2, 3, 3];
        m.sync_perms();
        assert_eq!(m.tile_footprint(&layer, 1, Operand::Input), 16);
    }

    #[test]
    fn trivial_one_mac_layer_is_valid() {
        let layer = LayerShape::fc("one", 1, 1, 1);
        for p in Paradigm::ALL {
            let arch = preset(p);
            assert_eq!(Mapping::trivial(&layer, arch.levels.len()).validate(&layer, &arch), Ok(()));
        }
    }

    #[test]
    fn capacity_violation_names_level() {
        let mut arch = preset(Paradigm::Cha);
        arch.levels[1].capacity = Some(1024);
        let layer = LayerShape::fc("fc", 1, 1024, 1);
        let mut m = Mapping::trivial(&layer, arch.levels.len());
        m.temporal[0][Dim::Ic.index()] = 1;
        m.temporal[1][Dim::Ic.index()] = 1024;
        m.sync_perms();
        let v = m.validate(&layer, &arch).unwrap_err();
        assert!(matches!(&v[..], [Violation::Capacity { level, .. }] if level == "GlobalBuffer"), "{v:?}");
    }

    #[test]
    fn fanout_overflow_is_reported() {
        let arch = preset(Paradigm::Cha);
        let layer = LayerShape::fc("fc", 1, 1, 17);
        let mut m = Mapping::trivial(&layer, arch.levels.len());
        m.spatial[1][Dim::Oc.index()] = 17;
        m.normalize_llm(&layer);
        let v = m.validate(&layer, &arch).unwrap_err();
        assert!(v.contains(&Violation::Fanout { fanout: 1, used: 17, available: 16 }), "{v:?}");
    }

    #[test]
    fn reduction_rule_blocks_channel_split_on_pim_link() {
        let arch = preset(Paradigm::Pim);
        let layer = LayerShape::fc("fc", 1, 16, 1);
        let mut m = Mapping::trivial(&layer, arch.levels.len());
        m.spatial[0][Dim::Ic.index()] = 16;
        m.normalize_llm(&layer);
        assert_eq!(m.validate(&layer, &arch), Err(vec![Violation::Reduction { fanout: 0, dim: Dim::Ic }]));
        let mut ok = Mapping::trivial(&layer, arch.levels.len());
        ok.spatial[2][Dim::Ic.index()] = 8;
        ok.normalize_llm(&layer);
        assert_eq!(ok.validate(&layer, &arch), Ok(()));
    }

    #[test]
    fn padding_must_be_minimal() {
        let arch = preset(Paradigm::Cha);
        let layer = LayerShape::fc("fc", 1, 1, 20);
        let mut m = Mapping::trivial(&layer, arch.levels.len());
        m.spatial[1][Dim::Oc.index()] = 16;
        m.normalize_llm(&layer);
        assert_eq!(m.temporal[0][Dim::Oc.index()], 2);
        assert_eq!(m.padded(Dim::Oc), 32);
        assert_eq!(m.validate(&layer, &arch), Ok(()));
        m.temporal[0][Dim::Oc.index()] = 3;
        assert!(matches!(m.validate(&layer, &arch).unwrap_err()[..], [Violation::Padding { .. }]));
    }

    #[test]
    fn relevance_groups_partition_dims() {
        for d in Dim::ALL {
            let irrelevant = Operand::ALL.iter().filter(|&&o| !relevant(o, d)).count();
            assert_eq!(irrelevant, 1, "{d}");
        }
    }
}
