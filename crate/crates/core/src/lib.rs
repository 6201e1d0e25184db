//! Analytical cost model and mapping search for convolutional and
//! fully-connected DNN layers on three accelerator paradigms: a conventional
//! ASIC (CHA), near-data processing on stacked DRAM (NDP) and
//! processing-in-memory on DRAM chips (PIM).
//!
//! The pipeline is `workload` (layer shapes) -> `arch` (hierarchies) ->
//! `mapping` (tilings and the mapspace) -> `cost` (access counts, latency,
//! energy) -> `mapper` (lexicographic latency/energy search). The `oracle`
//! module brute-forces the same quantities for small instances.

pub mod arch;
pub mod cost;
pub mod error;
pub mod mapper;
pub mod mapping;
pub mod oracle;
pub mod workload;

pub use arch::{ArchSpec, Fanout, MacSpec, MemoryLevel, Operand, Paradigm, ScaleKnob};
pub use cost::{AccessProfile, Bottleneck, CostResult};
pub use error::{Error, Result};
pub use mapper::{Objective, OptimizeOutcome};
pub use mapping::{Dim, MapspaceLimits, Mapping, Violation};
pub use workload::{LayerKind, LayerMetrics, LayerShape};
