//! Layer shapes, workload files and the derived per-layer quantities
//! (MAC count, data-reuse potential, operand volumes).

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the seven loop bounds of a CL/FCL loop nest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dim {
    B,
    Ic,
    Oc,
    Ox,
    Oy,
    Fh,
    Fw,
}

impl Dim {
    pub const ALL: [Dim; 7] = [Dim::B, Dim::Ic, Dim::Oc, Dim::Ox, Dim::Oy, Dim::Fh, Dim::Fw];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Dim::B => "B",
            Dim::Ic => "Ic",
            Dim::Oc => "Oc",
            Dim::Ox => "Ox",
            Dim::Oy => "Oy",
            Dim::Fh => "Fh",
            Dim::Fw => "Fw",
        }
    }

    pub fn from_name(s: &str) -> Option<Dim> {
        Dim::ALL.into_iter().find(|d| d.name() == s)
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Fc => "fc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub kind: LayerKind,
    pub batch: u64,
    pub in_channels: u64,
    pub out_channels: u64,
    pub in_height: u64,
    pub in_width: u64,
    pub filter_height: u64,
    pub filter_width: u64,
    pub stride: u64,
    pub pad: u64,
}

impl LayerShape {
    pub fn fc(name: &str, batch: u64, in_channels: u64, out_channels: u64) -> Self {
        LayerShape {
            name: name.to_string(),
            kind: LayerKind::Fc,
            batch,
            in_channels,
            out_channels,
            in_height: 1,
            in_width: 1,
            filter_height: 1,
            filter_width: 1,
            stride: 1,
            pad: 0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        name: &str,
        batch: u64,
        in_channels: u64,
        out_channels: u64,
        in_hw: u64,
        filter_hw: u64,
        stride: u64,
        pad: u64,
    ) -> Self {
        LayerShape {
            name: name.to_string(),
            kind: LayerKind::Conv,
            batch,
            in_channels,
            out_channels,
            in_height: in_hw,
            in_width: in_hw,
            filter_height: filter_hw,
            filter_width: filter_hw,
            stride,
            pad,
        }
    }

    fn invalid(&self, msg: impl Into<String>) -> Error {
        Error::InvalidLayer { layer: self.name.clone(), msg: msg.into() }
    }

    /// Checks every shape invariant, including that the output is non-empty.
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("B", self.batch),
            ("Ic", self.in_channels),
            ("Oc", self.out_channels),
            ("H", self.in_height),
            ("W", self.in_width),
            ("Fh", self.filter_height),
            ("Fw", self.filter_width),
            ("stride", self.stride),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(self.invalid(format!("{field} must be >= 1")));
            }
        }
        if self.kind == LayerKind::Fc
            && (self.in_height, self.in_width, self.filter_height, self.filter_width, self.stride, self.pad)
                != (1, 1, 1, 1, 1, 0)
        {
            return Err(self.invalid("fc layers require H=W=Fh=Fw=stride=1 and pad=0"));
        }
        self.output_dims().map(|_| ())
    }

    /// Output spatial extent `(Ox, Oy)`; `Ox` runs along the height.
    pub fn output_dims(&self) -> Result<(u64, u64)> {
        if self.stride == 0 {
            return Err(self.invalid("stride must be >= 1"));
        }
        let one = |extent: u64, filter: u64, axis: &str| -> Result<u64> {
            let padded = extent
                .checked_add(self.pad.checked_mul(2).ok_or(Error::Overflow("padded extent"))?)
                .ok_or(Error::Overflow("padded extent"))?;
            if filter == 0 || filter > padded {
                return Err(self.invalid(format!(
                    "filter {axis} {filter} exceeds padded input {padded}"
                )));
            }
            Ok((padded - filter) / self.stride + 1)
        };
        Ok((
            one(self.in_height, self.filter_height, "height")?,
            one(self.in_width, self.filter_width, "width")?,
        ))
    }

    /// Loop bound of `dim`. Assumes the shape is valid.
    pub fn dim(&self, dim: Dim) -> u64 {
        match dim {
            Dim::B => self.batch,
            Dim::Ic => self.in_channels,
            Dim::Oc => self.out_channels,
            Dim::Ox => self.output_dims().map(|d| d.0).unwrap_or(1),
            Dim::Oy => self.output_dims().map(|d| d.1).unwrap_or(1),
            Dim::Fh => self.filter_height,
            Dim::Fw => self.filter_width,
        }
    }

    pub fn dims(&self) -> [u64; 7] {
        let (ox, oy) = self.output_dims().unwrap_or((1, 1));
        [
            self.batch,
            self.in_channels,
            self.out_channels,
            ox,
            oy,
            self.filter_height,
            self.filter_width,
        ]
    }

    /// Same layer with the batch multiplied by `k`.
    pub fn batch_variant(&self, k: u64) -> LayerShape {
        let mut out = self.clone();
        out.batch = self.batch.saturating_mul(k.max(1));
        out
    }

    pub fn to_record(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.name,
            self.kind.as_str(),
            self.batch,
            self.in_channels,
            self.out_channels,
            self.in_height,
            self.in_width,
            self.filter_height,
            self.filter_width,
            self.stride,
            self.pad
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub mac_count: u64,
    pub input_words: u64,
    pub filter_words: u64,
    pub output_words: u64,
    pub layer_volume: u64,
    /// MACs per input word.
    pub input_reuse: f64,
    /// MACs per filter word.
    pub filter_reuse: f64,
}

fn product(factors: &[u64], what: &'static str) -> Result<u64> {
    factors
        .iter()
        .try_fold(1u64, |acc, &f| acc.checked_mul(f))
        .ok_or(Error::Overflow(what))
}

/// Derived quantities of a layer. Padding zeros are not counted as input words.
pub fn derive_metrics(layer: &LayerShape) -> Result<LayerMetrics> {
    layer.validate()?;
    let (ox, oy) = layer.output_dims()?;
    let (b, ic, oc) = (layer.batch, layer.in_channels, layer.out_channels);
    let (fh, fw) = (layer.filter_height, layer.filter_width);
    let mac_count = product(&[b, oc, ox, oy, ic, fh, fw], "mac_count")?;
    let input_words = product(&[b, ic, layer.in_height, layer.in_width], "input_words")?;
    let filter_words = product(&[oc, ic, fh, fw], "filter_words")?;
    let output_words = product(&[b, oc, ox, oy], "output_words")?;
    let layer_volume = input_words
        .checked_add(filter_words)
        .and_then(|v| v.checked_add(output_words))
        .ok_or(Error::Overflow("layer_volume"))?;
    Ok(LayerMetrics {
        mac_count,
        input_words,
        filter_words,
        output_words,
        layer_volume,
        input_reuse: mac_count as f64 / input_words as f64,
        filter_reuse: mac_count as f64 / filter_words as f64,
    })
}

fn parse_count(field: &str, name: &str, line: usize, default: Option<u64>) -> Result<u64> {
    let t = field.trim();
    if t.is_empty() {
        return default.ok_or_else(|| Error::Parse { line, msg: format!("field {name} is empty") });
    }
    t.parse::<u64>().map_err(|_| Error::Parse {
        line,
        msg: format!("field {name}: expected a non-negative integer, got {t:?}"),
    })
}

/// Parses a layer file: one `name,kind,B,Ic,Oc,H,W,Fh,Fw,stride,pad` record
/// per line, `#` comments and blank lines ignored.
pub fn parse_workload(source: &str) -> Result<Vec<LayerShape>> {
    const NAMES: [&str; 11] = ["name", "kind", "B", "Ic", "Oc", "H", "W", "Fh", "Fw", "stride", "pad"];
    let mut layers = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() > NAMES.len() {
            return Err(Error::Parse { line, msg: format!("expected at most 11 fields, got {}", fields.len()) });
        }
        let name = fields[0].trim();
        if name.is_empty() {
            return Err(Error::Parse { line, msg: "field name is empty".into() });
        }
        let kind = match fields.get(1).map(|s| s.trim()) {
            Some("conv") => LayerKind::Conv,
            Some("fc") => LayerKind::Fc,
            Some(other) => {
                return Err(Error::Parse { line, msg: format!("unknown layer kind {other:?}") })
            }
            None => return Err(Error::Parse { line, msg: "missing field kind".into() }),
        };
        if kind == LayerKind::Conv && fields.len() != NAMES.len() {
            return Err(Error::Parse { line, msg: format!("conv records need 11 fields, got {}", fields.len()) });
        }
        if kind == LayerKind::Fc && fields.len() < 5 {
            return Err(Error::Parse { line, msg: "fc records need at least name,kind,B,Ic,Oc".into() });
        }
        let fc_defaults = [1, 1, 1, 1, 1, 0];
        let mut v = [0u64; 9];
        for (k, slot) in v.iter_mut().enumerate() {
            let idx = k + 2;
            let default = (kind == LayerKind::Fc && idx >= 5).then(|| fc_defaults[idx - 5]);
            *slot = match fields.get(idx) {
                Some(f) => parse_count(f, NAMES[idx], line, default)?,
                None => default.expect("fc defaults cover missing trailing fields"),
            };
        }
        let layer = LayerShape {
            name: name.to_string(),
            kind,
            batch: v[0],
            in_channels: v[1],
            out_channels: v[2],
            in_height: v[3],
            in_width: v[4],
            filter_height: v[5],
            filter_width: v[6],
            stride: v[7],
            pad: v[8],
        };
        layer.validate().map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if !seen.insert(layer.name.clone()) {
            return Err(Error::Parse { line, msg: format!("duplicate layer name {:?}", layer.name) });
        }
        layers.push(layer);
    }
    Ok(layers)
}

/// Workload files shipped with the crate.
pub const BUNDLED: [(&str, &str); 4] = [
    ("mobilenet", include_str!("../workloads/mobilenet_v1.csv")),
    ("resnet", include_str!("../workloads/resnet50.csv")),
    ("bert", include_str!("../workloads/bert_large.csv")),
    ("dlrm", include_str!("../workloads/dlrm.csv")),
];

pub fn bundled(name: &str) -> Option<Vec<LayerShape>> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| parse_workload(src).expect("bundled workloads parse"))
}
