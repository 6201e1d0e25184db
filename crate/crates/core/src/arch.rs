//! Accelerator hierarchies: memory levels from the last-level memory (LLM)
//! down to the register file, the spatial fanouts between them, and the MAC
//! array below the registers.
//!
//! Three presets model the conventional ASIC (`cha`), near-data processing
//! (`ndp`) and processing-in-memory (`pim`) paradigms. Distributed memories
//! (DRAM vaults, PIM chips) are a top-level fanout marked `distributed`; the
//! LLM level then carries the aggregate bandwidth and only slices hosting
//! active children contribute to it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operand {
    Input,
    Weight,
    Output,
}

impl Operand {
    pub const ALL: [Operand; 3] = [Operand::Input, Operand::Weight, Operand::Output];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Operand::Input => 'I',
            Operand::Weight => 'W',
            Operand::Output => 'O',
        }
    }

    pub fn from_letter(c: char) -> Option<Operand> {
        Operand::ALL.into_iter().find(|o| o.letter() == c)
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operand::Input => "input",
            Operand::Weight => "weight",
            Operand::Output => "output",
        })
    }
}

/// Per-operand flags indexed by [`Operand::index`].
pub type OperandFlags = [bool; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct MacSpec {
    /// Usable MAC units; never more than the physical array provides.
    pub total_units: u64,
    pub latency_ns: f64,
    pub energy_pj_per_bit: f64,
    pub lanes_per_group: u64,
    pub groups_per_leaf: u64,
}

impl MacSpec {
    pub fn units_per_leaf(&self) -> u64 {
        self.lanes_per_group * self.groups_per_leaf
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryLevel {
    pub name: String,
    /// Bytes per instance; `None` is unbounded.
    pub capacity: Option<u64>,
    /// Bytes per second per instance.
    pub bandwidth: f64,
    pub energy_pj_per_bit: f64,
    pub tenants: OperandFlags,
    pub bypass_allowed: OperandFlags,
}

impl MemoryLevel {
    pub fn holds(&self, o: Operand) -> bool {
        self.tenants[o.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fanout {
    pub children: u64,
    pub rows: u64,
    pub cols: u64,
    /// Bytes per second per child link.
    pub link_bandwidth: f64,
    pub link_energy_pj_per_bit: f64,
    pub multicast: bool,
    /// Partial sums from different children can be combined in the network.
    pub reduction: bool,
    /// Children are slices of a distributed LLM; only replicated words cross
    /// the link.
    pub distributed: bool,
}

impl Fanout {
    fn local(children: u64, rows: u64, cols: u64, bandwidth: f64, energy: f64) -> Self {
        Fanout {
            children,
            rows,
            cols,
            link_bandwidth: bandwidth,
            link_energy_pj_per_bit: energy,
            multicast: true,
            reduction: true,
            distributed: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub name: String,
    pub word_bits: u64,
    /// Outermost (LLM) first, register file last.
    pub levels: Vec<MemoryLevel>,
    /// `fanouts[i]` sits between `levels[i]` and `levels[i + 1]`.
    pub fanouts: Vec<Fanout>,
    pub mac: MacSpec,
    /// Finite levels above the register file keep two tiles resident.
    pub double_buffering: bool,
    /// Batch multiplier applied by sweeps.
    pub batch_hint: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Paradigm {
    Cha,
    Ndp,
    Pim,
}

impl Paradigm {
    pub const ALL: [Paradigm; 3] = [Paradigm::Cha, Paradigm::Ndp, Paradigm::Pim];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Cha => "cha",
            Paradigm::Ndp => "ndp",
            Paradigm::Pim => "pim",
        }
    }

    pub fn from_name(s: &str) -> Option<Paradigm> {
        Paradigm::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleKnob {
    LlmBandwidth,
    WorkingMemory,
    MacCount,
    BatchHint,
}

/// Capacity at which a buffer costs as much per bit as the LLM itself.
pub const BUFFER_ENERGY_REFERENCE_BYTES: f64 = (8u64 << 20) as f64;
pub const REGISTER_ENERGY_PJ_PER_BIT: f64 = 0.01;
const MIN_BUFFER_ENERGY: f64 = 0.01;
/// Register file entries per MAC unit.
pub const REGISTER_ENTRIES_PER_MAC: u64 = 4;
/// Register words each MAC can move per MAC cycle.
const REGISTER_WORDS_PER_MAC_CYCLE: f64 = 8.0;

const KIB: u64 = 1 << 10;
const MIB: u64 = 1 << 20;
const GB: f64 = 1e9;

/// On-chip buffer access energy from capacity, anchored at the LLM energy.
pub fn buffer_energy(llm_energy_pj_per_bit: f64, capacity_bytes: u64) -> f64 {
    let raw = llm_energy_pj_per_bit * (capacity_bytes as f64 / BUFFER_ENERGY_REFERENCE_BYTES).sqrt();
    raw.clamp(MIN_BUFFER_ENERGY, (0.5 * llm_energy_pj_per_bit).max(MIN_BUFFER_ENERGY))
}

const ALL_OPERANDS: OperandFlags = [true, true, true];
const NO_OPERANDS: OperandFlags = [false, false, false];

fn level(name: &str, capacity: Option<u64>, bandwidth: f64, energy: f64, tenants: OperandFlags, bypass: OperandFlags) -> MemoryLevel {
    MemoryLevel {
        name: name.to_string(),
        capacity,
        bandwidth,
        energy_pj_per_bit: energy,
        tenants,
        bypass_allowed: bypass,
    }
}

fn register_level(mac: &MacSpec, word_bits: u64) -> MemoryLevel {
    let units = mac.units_per_leaf();
    let word_bytes = word_bits.div_ceil(8);
    level(
        "RF",
        Some(units * REGISTER_ENTRIES_PER_MAC * word_bytes),
        register_bandwidth(mac, word_bytes),
        REGISTER_ENERGY_PJ_PER_BIT,
        ALL_OPERANDS,
        NO_OPERANDS,
    )
}

fn register_bandwidth(mac: &MacSpec, word_bytes: u64) -> f64 {
    mac.units_per_leaf() as f64 * REGISTER_WORDS_PER_MAC_CYCLE * word_bytes as f64 / mac.latency_ns * 1e9
}

/// The architecture presets.
pub fn preset(paradigm: Paradigm) -> ArchSpec {
    match paradigm {
        Paradigm::Cha => cha(),
        Paradigm::Ndp => ndp(),
        Paradigm::Pim => pim(),
    }
}

fn cha() -> ArchSpec {
    let llm_energy = 46.0;
    let mac = MacSpec {
        total_units: 1024,
        latency_ns: 1.0,
        energy_pj_per_bit: 0.2,
        lanes_per_group: 8,
        groups_per_leaf: 8,
    };
    let gb = 2 * MIB;
    let lb = 64 * KIB;
    ArchSpec {
        name: "cha".into(),
        word_bits: 8,
        levels: vec![
            level("DRAM", None, 25.6 * GB, llm_energy, ALL_OPERANDS, NO_OPERANDS),
            level("GlobalBuffer", Some(gb), 70.0 * GB, buffer_energy(llm_energy, gb), [true, false, true], NO_OPERANDS),
            level("LocalBuffer", Some(lb), 70.0 * GB, buffer_energy(llm_energy, lb), ALL_OPERANDS, NO_OPERANDS),
            register_level(&mac, 8),
        ],
        fanouts: vec![
            Fanout::local(1, 1, 1, 1000.0 * GB, 0.0),
            Fanout::local(16, 4, 4, 70.0 * GB, 0.5),
            Fanout::local(1, 1, 1, 1000.0 * GB, 0.0),
        ],
        mac,
        double_buffering: true,
        batch_hint: 1,
    }
}

fn ndp() -> ArchSpec {
    let llm_energy = 4.2;
    let mac = MacSpec {
        total_units: 256,
        latency_ns: 2.0,
        energy_pj_per_bit: 0.2,
        lanes_per_group: 1,
        groups_per_leaf: 1,
    };
    let gb = 128 * KIB;
    ArchSpec {
        name: "ndp".into(),
        word_bits: 8,
        levels: vec![
            level("DRAM", None, 16.0 * 16.0 * GB, llm_energy, ALL_OPERANDS, NO_OPERANDS),
            level("GlobalBuffer", Some(gb), 6.4 * GB / 16.0, buffer_energy(llm_energy, gb), ALL_OPERANDS, ALL_OPERANDS),
            register_level(&mac, 8),
        ],
        fanouts: vec![
            Fanout { distributed: true, ..Fanout::local(16, 4, 4, 16.0 * GB, 1.0) },
            Fanout::local(16, 4, 4, 16.0 * GB, 1.0),
        ],
        mac,
        double_buffering: true,
        batch_hint: 1,
    }
}

fn pim() -> ArchSpec {
    let llm_energy = 2.3;
    let mac = MacSpec {
        total_units: 128,
        latency_ns: 40.0,
        energy_pj_per_bit: 0.4,
        lanes_per_group: 8,
        groups_per_leaf: 1,
    };
    let wm = 32 * KIB;
    ArchSpec {
        name: "pim".into(),
        word_bits: 8,
        levels: vec![
            level("DRAM", None, 102.0 * GB, llm_energy, ALL_OPERANDS, NO_OPERANDS),
            level("WorkingMemory", Some(wm), 0.8 * GB / 16.0, buffer_energy(llm_energy, wm), ALL_OPERANDS, ALL_OPERANDS),
            register_level(&mac, 8),
        ],
        fanouts: vec![
            Fanout {
                distributed: true,
                reduction: false,
                ..Fanout::local(16, 2, 8, 12.8 * GB, 0.1)
            },
            Fanout::local(1, 1, 1, 1000.0 * GB, 0.0),
        ],
        mac,
        double_buffering: true,
        batch_hint: 1,
    }
}

impl ArchSpec {
    pub fn word_bytes(&self) -> u64 {
        self.word_bits.div_ceil(8)
    }

    pub fn llm(&self) -> &MemoryLevel {
        &self.levels[0]
    }

    pub fn innermost(&self) -> usize {
        self.levels.len() - 1
    }

    /// Child count of the MAC array below the register file.
    pub fn mac_array_children(&self) -> u64 {
        self.mac.units_per_leaf()
    }

    /// Physical MAC units: lanes x groups x every fanout.
    pub fn physical_macs(&self) -> u64 {
        self.fanouts.iter().map(|f| f.children).product::<u64>() * self.mac.units_per_leaf()
    }

    /// Hardware instances of `levels[l]`.
    pub fn level_instances(&self, l: usize) -> u64 {
        self.fanouts[..l].iter().map(|f| f.children).product()
    }

    /// Levels strictly between the LLM and the register file.
    pub fn buffer_levels(&self) -> std::ops::Range<usize> {
        1..self.innermost()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: String, msg: &str| Err(Error::Config { path, msg: msg.to_string() });
        if self.word_bits == 0 {
            return bad("word_bits".into(), "must be >= 1");
        }
        if self.levels.len() < 2 {
            return bad("levels".into(), "need at least the LLM and a register level");
        }
        if self.fanouts.len() != self.levels.len() - 1 {
            return bad("fanouts".into(), "need exactly one fanout between each adjacent level pair");
        }
        for (i, l) in self.levels.iter().enumerate() {
            let path = |k: &str| format!("levels[{i}].{k}");
            if l.capacity == Some(0) {
                return bad(path("capacity_bytes"), "must be > 0");
            }
            if !(l.bandwidth > 0.0 && l.bandwidth.is_finite()) {
                return bad(path("bandwidth_bytes_per_s"), "must be positive");
            }
            if !(l.energy_pj_per_bit >= 0.0 && l.energy_pj_per_bit.is_finite()) {
                return bad(path("energy_pj_per_bit"), "must be non-negative");
            }
            if !l.tenants.iter().any(|&t| t) {
                return bad(path("tenants"), "must not be empty");
            }
            let edge = i == 0 || i == self.innermost();
            if edge && l.tenants != ALL_OPERANDS {
                return bad(path("tenants"), "the LLM and register levels hold every operand");
            }
            if edge && l.bypass_allowed.iter().any(|&b| b) {
                return bad(path("bypass"), "the LLM and register levels cannot be bypassed");
            }
            if i > 0 && l.capacity.is_none() {
                return bad(path("capacity_bytes"), "only the LLM may be unbounded");
            }
        }
        let rf = &self.levels[self.innermost()];
        if rf.capacity.unwrap_or(u64::MAX) < 3 * self.word_bytes() {
            return bad(format!("levels[{}].capacity_bytes", self.innermost()), "must hold one word per MAC operand");
        }
        for (i, f) in self.fanouts.iter().enumerate() {
            let path = |k: &str| format!("fanouts[{i}].{k}");
            if f.children == 0 || f.rows * f.cols != f.children {
                return bad(path("children"), "must equal rows * cols and be >= 1");
            }
            if !(f.link_bandwidth > 0.0 && f.link_bandwidth.is_finite()) {
                return bad(path("link_bandwidth_bytes_per_s"), "must be positive");
            }
            if !(f.link_energy_pj_per_bit >= 0.0 && f.link_energy_pj_per_bit.is_finite()) {
                return bad(path("link_energy_pj_per_bit"), "must be non-negative");
            }
            if f.distributed && i != 0 {
                return bad(path("distributed"), "only the top fanout may slice the LLM");
            }
        }
        let m = &self.mac;
        if !(m.latency_ns > 0.0 && m.latency_ns.is_finite()) {
            return bad("mac.latency_ns".into(), "must be positive");
        }
        if !(m.energy_pj_per_bit >= 0.0 && m.energy_pj_per_bit.is_finite()) {
            return bad("mac.energy_pj_per_bit".into(), "must be non-negative");
        }
        if m.lanes_per_group == 0 || m.groups_per_leaf == 0 {
            return bad("mac.lanes".into(), "lanes and groups must be >= 1");
        }
        let physical = self.physical_macs();
        let per_group = physical / m.groups_per_leaf;
        if m.total_units == 0 || m.total_units > physical || m.total_units + per_group <= physical {
            return bad("mac.units".into(), "must equal lanes * groups * product of fanouts (up to group rounding)");
        }
        if self.batch_hint == 0 {
            return bad("batch_hint".into(), "must be >= 1");
        }
        Ok(())
    }

    /// Returns a copy with one knob multiplied by `factor`.
    pub fn scale(&self, knob: ScaleKnob, factor: f64) -> Result<ArchSpec> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidArch(format!("scale factor must be positive, got {factor}")));
        }
        let mut out = self.clone();
        match knob {
            ScaleKnob::LlmBandwidth => out.levels[0].bandwidth *= factor,
            ScaleKnob::WorkingMemory => {
                let llm_energy = self.llm().energy_pj_per_bit;
                for l in self.buffer_levels() {
                    let lvl = &mut out.levels[l];
                    let cap = lvl.capacity.expect("buffer levels are finite");
                    let scaled = (cap as f64 * factor).round() as u64;
                    if scaled == 0 {
                        return Err(Error::InvalidArch(format!("{} would have zero capacity", lvl.name)));
                    }
                    lvl.capacity = Some(scaled);
                    lvl.energy_pj_per_bit = buffer_energy(llm_energy, scaled);
                }
            }
            ScaleKnob::MacCount => {
                let target = (self.mac.total_units as f64 * factor).round() as u64;
                if target == 0 {
                    return Err(Error::InvalidArch("scaled MAC count rounds to zero".into()));
                }
                let per_group = self.mac.lanes_per_group * self.fanouts.iter().map(|f| f.children).product::<u64>();
                let groups = target.div_ceil(per_group);
                let old_units = self.mac.units_per_leaf();
                out.mac.groups_per_leaf = groups;
                out.mac.total_units = target;
                let new_units = out.mac.units_per_leaf();
                let rf = out.innermost();
                let wb = self.word_bytes();
                let cap = self.levels[rf].capacity.expect("register level is finite");
                out.levels[rf].capacity = Some((cap / old_units).max(3 * wb) * new_units);
                out.levels[rf].bandwidth = self.levels[rf].bandwidth / old_units as f64 * new_units as f64;
            }
            ScaleKnob::BatchHint => {
                let b = (self.batch_hint as f64 * factor).round() as u64;
                if b == 0 {
                    return Err(Error::InvalidArch("batch hint rounds to zero".into()));
                }
                out.batch_hint = b;
            }
        }
        out.validate()?;
        Ok(out)
    }

    /// Redistributes the combined global + local buffer bytes in the ratio
    /// `ratio_global : ratio_local`; the local share is split evenly across
    /// the local-buffer instances.
    pub fn split_buffer(&self, ratio_global: u64, ratio_local: u64) -> Result<ArchSpec> {
        if ratio_global == 0 || ratio_local == 0 {
            return Err(Error::InvalidArch("buffer ratios must be >= 1".into()));
        }
        let buffers: Vec<usize> = self.buffer_levels().collect();
        if buffers.len() != 2 {
            return Err(Error::InvalidArch(format!(
                "{} has no separate global and local buffer levels",
                self.name
            )));
        }
        let (g, l) = (buffers[0], buffers[1]);
        let local_instances = self.level_instances(l) / self.level_instances(g);
        let total = self.levels[g].capacity.unwrap() + self.levels[l].capacity.unwrap() * local_instances;
        let global = total * ratio_global / (ratio_global + ratio_local);
        let local = (total - global) / local_instances;
        if global == 0 || local == 0 {
            return Err(Error::InvalidArch("split leaves a buffer empty".into()));
        }
        let llm_energy = self.llm().energy_pj_per_bit;
        let mut out = self.clone();
        out.levels[g].capacity = Some(global);
        out.levels[g].energy_pj_per_bit = buffer_energy(llm_energy, global);
        out.levels[l].capacity = Some(local);
        out.levels[l].energy_pj_per_bit = buffer_energy(llm_energy, local);
        out.validate()?;
        Ok(out)
    }

    /// Same machine with a different datapath width. Register files keep
    /// their entry count, so their bytes and bandwidth follow the word size.
    pub fn with_word_bits(&self, bits: u64) -> Result<ArchSpec> {
        if bits == 0 {
            return Err(Error::InvalidArch("word_bits must be >= 1".into()));
        }
        let mut out = self.clone();
        out.word_bits = bits;
        let (old, new) = (self.word_bytes(), out.word_bytes());
        let rf = out.innermost();
        let lvl = &mut out.levels[rf];
        lvl.capacity = lvl.capacity.map(|c| c / old * new);
        lvl.bandwidth = lvl.bandwidth / old as f64 * new as f64;
        out.validate()?;
        Ok(out)
    }

    pub fn to_config(&self) -> String {
        toml::to_string(&config::ArchConfig::from(self)).expect("arch config serializes")
    }
}

/// Parses an architecture config (TOML key/value tree) and validates it.
pub fn load_arch(text: &str) -> Result<ArchSpec> {
    let cfg: config::ArchConfig = toml::from_str(text).map_err(|e| Error::Config {
        path: "<root>".into(),
        msg: e.message().to_string() + &e.span().map(|s| format!(" (at byte {})", s.start)).unwrap_or_default(),
    })?;
    let arch = cfg.into_arch()?;
    arch.validate()?;
    Ok(arch)
}

mod config {
    use super::*;

    fn default_word_bits() -> u64 {
        8
    }
    fn yes() -> bool {
        true
    }
    fn one() -> u64 {
        1
    }
    fn is_false(b: &bool) -> bool {
        !*b
    }
    fn is_true(b: &bool) -> bool {
        *b
    }

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub(super) struct ArchConfig {
        name: String,
        #[serde(default = "default_word_bits")]
        word_bits: u64,
        #[serde(default = "yes", skip_serializing_if = "is_true")]
        double_buffering: bool,
        #[serde(default = "one")]
        batch_hint: u64,
        mac: MacConfig,
        levels: Vec<LevelConfig>,
        fanouts: Vec<FanoutConfig>,
    }

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct MacConfig {
        units: u64,
        latency_ns: f64,
        energy_pj_per_bit: f64,
        lanes: u64,
        groups: u64,
    }

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct LevelConfig {
        name: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        capacity_bytes: Option<u64>,
        #[serde(default, skip_serializing_if = "is_false")]
        unbounded: bool,
        bandwidth_bytes_per_s: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        energy_pj_per_bit: Option<f64>,
        tenants: Vec<Operand>,
        #[serde(default)]
        bypass: Vec<Operand>,
    }

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct FanoutConfig {
        children: u64,
        rows: u64,
        cols: u64,
        link_bandwidth_bytes_per_s: f64,
        link_energy_pj_per_bit: f64,
        multicast: bool,
        #[serde(default = "yes")]
        reduction: bool,
        #[serde(default)]
        distributed: bool,
    }

    fn flags(ops: &[Operand]) -> OperandFlags {
        let mut f = [false; 3];
        for o in ops {
            f[o.index()] = true;
        }
        f
    }

    fn list(f: OperandFlags) -> Vec<Operand> {
        Operand::ALL.into_iter().filter(|o| f[o.index()]).collect()
    }

    impl From<&ArchSpec> for ArchConfig {
        fn from(a: &ArchSpec) -> Self {
            ArchConfig {
                name: a.name.clone(),
                word_bits: a.word_bits,
                double_buffering: a.double_buffering,
                batch_hint: a.batch_hint,
                mac: MacConfig {
                    units: a.mac.total_units,
                    latency_ns: a.mac.latency_ns,
                    energy_pj_per_bit: a.mac.energy_pj_per_bit,
                    lanes: a.mac.lanes_per_group,
                    groups: a.mac.groups_per_leaf,
                },
                levels: a
                    .levels
                    .iter()
                    .map(|l| LevelConfig {
                        name: l.name.clone(),
                        capacity_bytes: l.capacity,
                        unbounded: l.capacity.is_none(),
                        bandwidth_bytes_per_s: l.bandwidth,
                        energy_pj_per_bit: Some(l.energy_pj_per_bit),
                        tenants: list(l.tenants),
                        bypass: list(l.bypass_allowed),
                    })
                    .collect(),
                fanouts: a
                    .fanouts
                    .iter()
                    .map(|f| FanoutConfig {
                        children: f.children,
                        rows: f.rows,
                        cols: f.cols,
                        link_bandwidth_bytes_per_s: f.link_bandwidth,
                        link_energy_pj_per_bit: f.link_energy_pj_per_bit,
                        multicast: f.multicast,
                        reduction: f.reduction,
                        distributed: f.distributed,
                    })
                    .collect(),
            }
        }
    }

    impl ArchConfig {
        pub(super) fn into_arch(self) -> Result<ArchSpec> {
            let n = self.levels.len();
            if n < 2 {
                return Err(Error::Config { path: "levels".into(), msg: "need at least two levels".into() });
            }
            let llm_energy = self.levels[0].energy_pj_per_bit.ok_or_else(|| Error::Config {
                path: "levels[0].energy_pj_per_bit".into(),
                msg: "required for the LLM".into(),
            })?;
            let mut levels = Vec::with_capacity(n);
            for (i, l) in self.levels.into_iter().enumerate() {
                let capacity = match (l.capacity_bytes, l.unbounded) {
                    (Some(_), true) => {
                        return Err(Error::Config {
                            path: format!("levels[{i}]"),
                            msg: "capacity_bytes and unbounded are exclusive".into(),
                        })
                    }
                    (None, false) => {
                        return Err(Error::Config {
                            path: format!("levels[{i}].capacity_bytes"),
                            msg: "missing (or set unbounded = true)".into(),
                        })
                    }
                    (c, _) => c,
                };
                let energy = match (l.energy_pj_per_bit, capacity) {
                    (Some(e), _) => e,
                    (None, Some(_)) if i == n - 1 => REGISTER_ENERGY_PJ_PER_BIT,
                    (None, Some(c)) => buffer_energy(llm_energy, c),
                    (None, None) => llm_energy,
                };
                levels.push(MemoryLevel {
                    name: l.name,
                    capacity,
                    bandwidth: l.bandwidth_bytes_per_s,
                    energy_pj_per_bit: energy,
                    tenants: flags(&l.tenants),
                    bypass_allowed: flags(&l.bypass),
                });
            }
            Ok(ArchSpec {
                name: self.name,
                word_bits: self.word_bits,
                levels,
                fanouts: self
                    .fanouts
                    .into_iter()
                    .map(|f| Fanout {
                        children: f.children,
                        rows: f.rows,
                        cols: f.cols,
                        link_bandwidth: f.link_bandwidth_bytes_per_s,
                        link_energy_pj_per_bit: f.link_energy_pj_per_bit,
                        multicast: f.multicast,
                        reduction: f.reduction,
                        distributed: f.distributed,
                    })
                    .collect(),
                mac: MacSpec {
                    total_units: self.mac.units,
                    latency_ns: self.mac.latency_ns,
                    energy_pj_per_bit: self.mac.energy_pj_per_bit,
                    lanes_per_group: self.mac.lanes,
                    groups_per_leaf: self.mac.groups,
                },
                double_buffering: self.double_buffering,
                batch_hint: self.batch_hint,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_match_constraints() {
        for p in Paradigm::ALL {
            let a = preset(p);
            a.validate().unwrap();
            assert_eq!(a.physical_macs(), a.mac.total_units, "{}", a.name);
        }
        let cha = preset(Paradigm::Cha);
        assert_eq!(cha.mac.total_units, 1024);
        assert_eq!(cha.llm().bandwidth, 25.6e9);
        assert_eq!(cha.llm().energy_pj_per_bit, 46.0);
        assert_eq!(cha.fanouts[1].children, 16);
        assert_eq!(cha.mac.units_per_leaf(), 64);
        let total_buffer = cha.levels[1].capacity.unwrap() + 16 * cha.levels[2].capacity.unwrap();
        assert_eq!(total_buffer, 3 * MIB);

        let ndp = preset(Paradigm::Ndp);
        assert_eq!(ndp.mac.total_units, 256);
        assert_eq!(ndp.mac.latency_ns, 2.0);
        assert_eq!(ndp.llm().energy_pj_per_bit, 4.2);
        assert_eq!(ndp.levels[1].capacity.unwrap() * 16, 2 * MIB);
        assert!((ndp.levels[1].bandwidth * 16.0 - 6.4e9).abs() < 1.0);

        let pim = preset(Paradigm::Pim);
        assert_eq!(pim.mac.total_units, 128);
        assert_eq!(pim.mac.latency_ns, 40.0);
        assert_eq!(pim.mac.energy_pj_per_bit, 0.4);
        assert_eq!(pim.levels[1].capacity.unwrap() * 16, 512 * KIB);
        assert!(!pim.fanouts[0].reduction);
    }

    #[test]
    fn slice_bandwidths_sum_to_aggregate() {
        let ndp = preset(Paradigm::Ndp);
        let slice = ndp.llm().bandwidth / ndp.fanouts[0].children as f64;
        assert_eq!(slice, 16e9);
        assert_eq!(slice * 16.0, 256e9);
        let pim = preset(Paradigm::Pim);
        let slice = pim.llm().bandwidth / pim.fanouts[0].children as f64;
        assert_eq!(slice, 6.375e9);
    }

    #[test]
    fn config_round_trip_is_identity() {
        for p in Paradigm::ALL {
            let a = preset(p);
            assert_eq!(load_arch(&a.to_config()).unwrap(), a);
        }
    }

    #[test]
    fn config_errors_name_key_paths() {
        let text = preset(Paradigm::Cha).to_config().replacen("rows = 4", "rows = 3", 1);
        match load_arch(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "fanouts[1].children"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(load_arch("name = 1").is_err());
    }

    #[test]
    fn word_bits_defaults_to_8() {
        let text = preset(Paradigm::Pim).to_config();
        let stripped: String = text.lines().filter(|l| !l.starts_with("word_bits")).collect::<Vec<_>>().join("\n");
        assert_ne!(stripped, text);
        assert_eq!(load_arch(&stripped).unwrap().word_bits, 8);
    }

    #[test]
    fn scale_examples() {
        let cha = preset(Paradigm::Cha);
        assert_eq!(cha.scale(ScaleKnob::LlmBandwidth, 2.0).unwrap().llm().bandwidth, 51.2e9);
        assert_eq!(cha.scale(ScaleKnob::WorkingMemory, 1.0).unwrap(), cha);
        let big = preset(Paradigm::Pim).scale(ScaleKnob::MacCount, 781.25).unwrap();
        assert_eq!(big.mac.total_units, 100_000);
        assert!(big.physical_macs() >= 100_000);
        assert_eq!(big.innermost(), 2);
        assert_eq!(
            big.levels[2].capacity.unwrap(),
            big.mac.units_per_leaf() * REGISTER_ENTRIES_PER_MAC
        );
        assert!(cha.scale(ScaleKnob::LlmBandwidth, 0.0).is_err());
        assert_eq!(cha.scale(ScaleKnob::BatchHint, 8.0).unwrap().batch_hint, 8);
    }

    #[test]
    fn larger_buffers_cost_more_per_bit() {
        let cha = preset(Paradigm::Cha);
        let big = cha.scale(ScaleKnob::WorkingMemory, 2.0).unwrap();
        for l in cha.buffer_levels() {
            assert!(big.levels[l].energy_pj_per_bit >= cha.levels[l].energy_pj_per_bit);
        }
        assert!(big.levels[2].energy_pj_per_bit > cha.levels[2].energy_pj_per_bit);
    }

    #[test]
    fn split_buffer_examples() {
        let cha = preset(Paradigm::Cha);
        let even = cha.split_buffer(1, 1).unwrap();
        assert_eq!(even.levels[1].capacity, Some(3 * MIB / 2));
        assert_eq!(even.levels[2].capacity, Some(96 * KIB));
        let base = cha.split_buffer(2, 1).unwrap();
        assert_eq!(base.levels[1].capacity, Some(2 * MIB));
        assert_eq!(base.levels[2].capacity.unwrap() * 16, MIB);
        assert_eq!(base, cha);
        assert!(preset(Paradigm::Ndp).split_buffer(1, 2).is_err());
    }

    #[test]
    fn wider_words_keep_register_entries() {
        let pim = preset(Paradigm::Pim);
        let wide = pim.with_word_bits(16).unwrap();
        assert_eq!(wide.word_bytes(), 2);
        assert_eq!(wide.levels[2].capacity, pim.levels[2].capacity.map(|c| c * 2));
        assert_eq!(wide.levels[1].capacity, pim.levels[1].capacity);
        assert!(pim.with_word_bits(0).is_err());
    }

    #[test]
    fn buffer_energy_rule_is_clamped_and_monotone() {
        assert_eq!(buffer_energy(4.2, 1), MIN_BUFFER_ENERGY);
        assert_eq!(buffer_energy(46.0, 1 << 40), 23.0);
        assert!(buffer_energy(46.0, 256 * KIB) < buffer_energy(46.0, 512 * KIB));
        assert_eq!(buffer_energy(46.0, 2 * MIB), 23.0);
    }
}
