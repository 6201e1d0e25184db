//! Commands behind the `accelcmp` binary: single-architecture runs,
//! three-way paradigm comparisons and the five sensitivity sweeps. Every
//! command writes a CSV and, unless disabled, SVG plots derived from it.

pub mod plot;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use accelcmp::arch::{load_arch, preset};
use accelcmp::mapper::{batch_variant, optimize, throughput, Cache};
use accelcmp::workload::{bundled, parse_workload};
use accelcmp::{ArchSpec, Error as CoreError, LayerShape, MapspaceLimits, OptimizeOutcome, Paradigm, ScaleKnob};
use rayon::prelude::*;

pub const RUN_COLUMNS: [&str; 12] = [
    "index",
    "name",
    "arch",
    "latency_ns",
    "energy_pj",
    "utilization",
    "bottleneck",
    "energy_llm",
    "energy_buffer",
    "energy_network",
    "energy_mac",
    "mapping_encoding",
];

/// MAC count of the MAX variant.
pub const MAX_MACS: u64 = 100_000;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unresolvable inputs, invalid configs. Exit code 2.
    Usage(String),
    /// The model could not produce a result. Exit code 1.
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Model(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Model(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidLayer { .. }
            | CoreError::Parse { .. }
            | CoreError::Config { .. }
            | CoreError::InvalidArch(_)
            | CoreError::Encoding(_)
            | CoreError::Io(_) => CliError::Usage(e.to_string()),
            _ => CliError::Model(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("csv: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Clone, Debug, Default)]
pub struct Options {
    pub limits: MapspaceLimits,
    pub word_bits: Option<u64>,
    pub cache: Option<Cache>,
    pub plots: bool,
}

/// A preset name (`cha`, `ndp`, `pim`) or a path to a TOML config.
pub fn resolve_arch(reference: &str) -> CliResult<ArchSpec> {
    if let Some(p) = Paradigm::from_name(reference) {
        return Ok(preset(p));
    }
    let path = Path::new(reference);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        return load_arch(&text).map_err(|e| CliError::Usage(format!("{reference}: {e}")));
    }
    Err(CliError::Usage(format!("unknown architecture `{reference}`: not a preset (cha, ndp, pim) or a readable file")))
}

/// A workload CSV path, or the name of a bundled workload.
pub fn resolve_workload(reference: &str) -> CliResult<Vec<LayerShape>> {
    let path = Path::new(reference);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        return parse_workload(&text).map_err(|e| CliError::Usage(format!("{reference}: {e}")));
    }
    bundled(reference).ok_or_else(|| {
        CliError::Usage(format!("unknown workload `{reference}`: not a file or one of mobilenet, resnet, bert, dlrm"))
    })
}

fn with_options(arch: ArchSpec, opts: &Options) -> CliResult<ArchSpec> {
    match opts.word_bits {
        Some(bits) => Ok(arch.with_word_bits(bits)?),
        None => Ok(arch),
    }
}

/// One optimized (layer, architecture) pair.
#[derive(Clone, Debug)]
pub struct Evaluated {
    pub index: usize,
    pub layer: LayerShape,
    pub arch: String,
    pub outcome: OptimizeOutcome,
}

/// Optimizes every job in parallel; results come back in job order.
pub fn optimize_jobs(jobs: &[(usize, LayerShape, ArchSpec)], opts: &Options) -> CliResult<Vec<Evaluated>> {
    opts.limits.validate()?;
    jobs.par_iter()
        .map(|(index, layer, arch)| {
            let outcome = optimize(layer, arch, &opts.limits, opts.cache.as_ref())
                .map_err(|e| CliError::from(e).with_context(&layer.name, &arch.name))?;
            Ok(Evaluated { index: *index, layer: layer.clone(), arch: arch.name.clone(), outcome })
        })
        .collect()
}

impl CliError {
    fn with_context(self, layer: &str, arch: &str) -> CliError {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{layer} on {arch}: {m}")),
            CliError::Model(m) => CliError::Model(format!("{layer} on {arch}: {m}")),
        }
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn run_fields(e: &Evaluated) -> Vec<String> {
    let c = &e.outcome.cost;
    vec![
        e.index.to_string(),
        e.layer.name.clone(),
        e.arch.clone(),
        num(c.latency_ns),
        num(c.energy_pj),
        num(c.utilization),
        c.bottleneck.to_string(),
        num(c.energy_llm()),
        num(c.energy_buffers() + c.energy_register()),
        num(c.energy_network()),
        num(c.energy_mac()),
        e.outcome.encoding.clone(),
    ]
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Files produced by one command.
#[derive(Clone, Debug)]
pub struct Report {
    pub csv: PathBuf,
    pub plots: Vec<PathBuf>,
    pub rows: Vec<Evaluated>,
}

fn plots(csv: &Path, out: &Path, stem: &str, series: &str, metrics: &[&str], rows: usize, opts: &Options) -> CliResult<Vec<PathBuf>> {
    if !opts.plots || rows == 0 {
        return Ok(Vec::new());
    }
    metrics
        .iter()
        .map(|m| {
            let svg = out.join(format!("{stem}_{m}.svg"));
            plot::plot_csv(csv, "index", m, series, &svg)?;
            Ok(svg)
        })
        .collect()
}

/// Optimizes every layer on one architecture and writes `run_<arch>.csv`.
pub fn cmd_run(arch: &ArchSpec, layers: &[LayerShape], opts: &Options, out: &Path) -> CliResult<Report> {
    let arch = with_options(arch.clone(), opts)?;
    let jobs: Vec<_> = layers.iter().enumerate().map(|(i, l)| (i, l.clone(), arch.clone())).collect();
    let rows = optimize_jobs(&jobs, opts)?;
    let csv = out.join(format!("run_{}.csv", arch.name));
    write_csv(&csv, &RUN_COLUMNS, &rows.iter().map(run_fields).collect::<Vec<_>>())?;
    let stem = format!("run_{}", arch.name);
    let plots = plots(&csv, out, &stem, "arch", &["latency_ns", "energy_pj", "utilization"], rows.len(), opts)?;
    Ok(Report { csv, plots, rows })
}

pub const COMPARE_EXTRA: [&str; 2] = ["latency_vs_best", "energy_vs_best"];

/// Every layer on all three presets; ratio columns are relative to the
/// per-layer minimum latency and minimum energy.
pub fn cmd_compare(layers: &[LayerShape], opts: &Options, out: &Path) -> CliResult<Report> {
    let archs: Vec<ArchSpec> =
        Paradigm::ALL.iter().map(|&p| with_options(preset(p), opts)).collect::<CliResult<_>>()?;
    let jobs: Vec<_> = layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| archs.iter().map(move |a| (i, l.clone(), a.clone())))
        .collect();
    let rows = optimize_jobs(&jobs, opts)?;
    let mut header: Vec<&str> = RUN_COLUMNS[..11].to_vec();
    header.extend(COMPARE_EXTRA);
    header.push("mapping_encoding");
    let records: Vec<Vec<String>> = rows
        .chunks(archs.len())
        .flat_map(|group| {
            let best_lat = group.iter().map(|e| e.outcome.cost.latency_ns).fold(f64::INFINITY, f64::min);
            let best_e = group.iter().map(|e| e.outcome.cost.energy_pj).fold(f64::INFINITY, f64::min);
            group.iter().map(move |e| {
                let mut f = run_fields(e);
                let enc = f.pop().expect("encoding column");
                f.push(num(e.outcome.cost.latency_ns / best_lat));
                f.push(num(e.outcome.cost.energy_pj / best_e));
                f.push(enc);
                f
            })
        })
        .collect();
    let csv = out.join("compare.csv");
    write_csv(&csv, &header, &records)?;
    let metrics = ["latency_ns", "energy_pj", "utilization", "energy_llm", "energy_buffer", "energy_network", "energy_mac", "latency_vs_best", "energy_vs_best"];
    let plots = plots(&csv, out, "compare", "arch", &metrics, rows.len(), opts)?;
    Ok(Report { csv, plots, rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Batch,
    LlmBw,
    BufferSize,
    BufferLayout,
    MaxMac,
}

impl SweepKind {
    pub const ALL: [SweepKind; 5] =
        [SweepKind::Batch, SweepKind::LlmBw, SweepKind::BufferSize, SweepKind::BufferLayout, SweepKind::MaxMac];

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Batch => "batch",
            SweepKind::LlmBw => "llm_bw",
            SweepKind::BufferSize => "buffer_size",
            SweepKind::BufferLayout => "buffer_layout",
            SweepKind::MaxMac => "max_mac",
        }
    }

    pub fn from_name(s: &str) -> Option<SweepKind> {
        SweepKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Setting labels in grid order; the first is the baseline.
    pub fn labels(self) -> Vec<&'static str> {
        match self {
            SweepKind::Batch => vec!["1", "2", "4", "8"],
            SweepKind::LlmBw | SweepKind::BufferSize => vec!["1", "2", "4"],
            SweepKind::BufferLayout => vec!["2:1", "1:1", "1:2"],
            SweepKind::MaxMac => vec!["baseline", "100000"],
        }
    }
}

/// One grid point: the architecture to use and the batch multiplier.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub label: String,
    pub arch: ArchSpec,
    pub batch: u64,
}

/// Materializes the grid of `kind` on `arch`, optionally restricted to
/// the labels in `only`.
pub fn sweep_points(kind: SweepKind, arch: &ArchSpec, only: Option<&[String]>) -> CliResult<Vec<SweepPoint>> {
    let incompatible = |e: CoreError| CliError::Usage(format!("sweep {} is incompatible with {}: {e}", kind.name(), arch.name));
    let mut points = Vec::new();
    for label in kind.labels() {
        if let Some(only) = only {
            if !only.iter().any(|o| o == label) {
                continue;
            }
        }
        let (a, batch) = match kind {
            SweepKind::Batch => (arch.clone(), label.parse().expect("numeric label")),
            SweepKind::LlmBw => (arch.scale(ScaleKnob::LlmBandwidth, label.parse().expect("numeric label")).map_err(incompatible)?, 1),
            SweepKind::BufferSize => {
                (arch.scale(ScaleKnob::WorkingMemory, label.parse().expect("numeric label")).map_err(incompatible)?, 1)
            }
            SweepKind::BufferLayout => {
                let (g, l) = label.split_once(':').expect("ratio label");
                (arch.split_buffer(g.parse().unwrap(), l.parse().unwrap()).map_err(incompatible)?, 1)
            }
            SweepKind::MaxMac if label == "baseline" => (arch.clone(), 1),
            SweepKind::MaxMac => {
                let factor = MAX_MACS as f64 / arch.mac.total_units as f64;
                (arch.scale(ScaleKnob::MacCount, factor).map_err(incompatible)?, 1)
            }
        };
        points.push(SweepPoint { label: label.to_string(), arch: a, batch });
    }
    if points.is_empty() {
        return Err(CliError::Usage(format!("no {} settings selected; choose from {}", kind.name(), kind.labels().join(", "))));
    }
    Ok(points)
}

pub const SWEEP_COLUMNS: [&str; 24] = [
    "index",
    "name",
    "arch",
    "sweep",
    "setting",
    "batch",
    "latency_ns",
    "energy_pj",
    "utilization",
    "bottleneck",
    "throughput_per_s",
    "macs_used",
    "energy_llm",
    "energy_buffer",
    "energy_network",
    "energy_mac",
    "energy_per_mac",
    "energy_buffer_per_mac",
    "speedup",
    "rel_latency",
    "rel_energy",
    "rel_throughput",
    "rel_utilization",
    "mapping_encoding",
];

/// A sweep result row: the evaluation plus its grid point.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub setting: String,
    pub batch: u64,
    pub eval: Evaluated,
}

impl SweepRow {
    pub fn throughput(&self) -> f64 {
        throughput(self.batch, self.eval.outcome.cost.latency_ns)
    }
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub csv: PathBuf,
    pub plots: Vec<PathBuf>,
    pub rows: Vec<SweepRow>,
}

/// Sweeps one knob over its grid for every layer. Absolute columns come
/// with ratios against the first (baseline) setting of the same layer.
pub fn cmd_sweep(
    kind: SweepKind,
    arch: &ArchSpec,
    layers: &[LayerShape],
    only: Option<&[String]>,
    opts: &Options,
    out: &Path,
) -> CliResult<SweepReport> {
    let arch = with_options(arch.clone(), opts)?;
    let points = sweep_points(kind, &arch, only)?;
    let jobs: Vec<_> = layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| points.iter().map(move |p| (i, batch_variant(l, p.batch), p.arch.clone())))
        .collect();
    let evals = optimize_jobs(&jobs, opts)?;
    let rows: Vec<SweepRow> = evals
        .into_iter()
        .zip(points.iter().cycle())
        .map(|(mut eval, p)| {
            eval.layer.name = layers[eval.index].name.clone();
            eval.arch = arch.name.clone();
            SweepRow { setting: p.label.clone(), batch: p.batch, eval }
        })
        .collect();
    let mut records = Vec::with_capacity(rows.len());
    for group in rows.chunks(points.len()) {
        let base = &group[0];
        let bc = &base.eval.outcome.cost;
        for r in group {
            let c = &r.eval.outcome.cost;
            let macs = c.useful_macs as f64;
            let buffer = c.energy_buffers() + c.energy_register();
            records.push(vec![
                r.eval.index.to_string(),
                r.eval.layer.name.clone(),
                r.eval.arch.clone(),
                kind.name().to_string(),
                r.setting.clone(),
                r.batch.to_string(),
                num(c.latency_ns),
                num(c.energy_pj),
                num(c.utilization),
                c.bottleneck.to_string(),
                num(r.throughput()),
                c.active_macs.to_string(),
                num(c.energy_llm()),
                num(buffer),
                num(c.energy_network()),
                num(c.energy_mac()),
                num(c.energy_pj / macs),
                num(buffer / macs),
                num(bc.latency_ns / c.latency_ns),
                num(c.latency_ns / bc.latency_ns),
                num(c.energy_pj / bc.energy_pj),
                num(r.throughput() / base.throughput()),
                num(c.utilization / bc.utilization),
                r.eval.outcome.encoding.clone(),
            ]);
        }
    }
    let stem = format!("sweep_{}_{}", kind.name(), arch.name);
    let csv = out.join(format!("{stem}.csv"));
    write_csv(&csv, &SWEEP_COLUMNS, &records)?;
    let metrics = ["rel_latency", "rel_energy", "rel_throughput", "utilization", "energy_per_mac", "energy_buffer_per_mac", "macs_used"];
    let plots = plots(&csv, out, &stem, "setting", &metrics, rows.len(), opts)?;
    Ok(SweepReport { csv, plots, rows })
}
