//! Brute-force references: literal execution of a mapped loop nest for
//! access counting, and direct evaluation of the layer arithmetic.

use std::collections::{HashMap, HashSet};

use crate::arch::{ArchSpec, Operand};
use crate::cost::AccessProfile;
use crate::error::{Error, Result};
use crate::mapping::{relevant, Mapping};
use crate::workload::{Dim, LayerKind, LayerShape};

pub const DEFAULT_MAC_CAP: u64 = 1_000_000;

/// Every index combination of one spatial slot, as per-dim index arrays.
fn slot_points(s: &[u64; 7]) -> Vec<[u64; 7]> {
    let mut out = vec![[0u64; 7]];
    for d in Dim::ALL {
        let k = s[d.index()];
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |i| {
                    let mut q = p;
                    q[d.index()] = i;
                    q
                })
            })
            .collect();
    }
    out
}

/// Bounding box of the tile at level `c`, from enumerated index spans.
fn box_words(m: &Mapping, layer: &LayerShape, c: usize, o: Operand) -> u64 {
    let e = |d| m.extent(c, d);
    let span = |out: u64, filt: u64| {
        let mut lo = u64::MAX;
        let mut hi = 0;
        for x in 0..out {
            for i in 0..filt {
                let v = x * layer.stride + i;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        hi - lo + 1
    };
    match o {
        Operand::Input => e(Dim::B) * e(Dim::Ic) * span(e(Dim::Ox), e(Dim::Fh)) * span(e(Dim::Oy), e(Dim::Fw)),
        Operand::Weight => e(Dim::Oc) * e(Dim::Ic) * e(Dim::Fh) * e(Dim::Fw),
        Operand::Output => e(Dim::B) * e(Dim::Oc) * e(Dim::Ox) * e(Dim::Oy),
    }
}

#[derive(Default)]
struct InstanceState {
    last: Option<Vec<u64>>,
    seen: HashSet<Vec<u64>>,
}

/// Executes the mapped nest step by step: at every temporal step each
/// instance of each storing level checks whether the indices selecting its
/// tile changed; a change is a delivery, and a delivery of an output tile
/// seen before is a revisit. Words crossing a link or read from a parent
/// are the distinct tiles requested in that step after merging children
/// that share them.
pub fn simulate_accesses(m: &Mapping, layer: &LayerShape, arch: &ArchSpec, cap: u64) -> Result<AccessProfile> {
    let padded = m.padded_macs();
    if padded > cap {
        return Err(Error::OracleCap { macs: padded, cap });
    }
    let n = arch.levels.len();
    let loops: Vec<(usize, Dim, u64)> = (0..n)
        .flat_map(|l| m.perms[l].iter().map(move |&d| (l, d, m.temporal[l][d.index()])))
        .collect();
    let points: Vec<Vec<[u64; 7]>> = m.spatial.iter().map(slot_points).collect();
    let multicasts = |f: usize| f >= arch.fanouts.len() || arch.fanouts[f].multicast;
    let reduces = |f: usize| f >= arch.fanouts.len() || arch.fanouts[f].reduction;
    let distributed = |f: usize| f < arch.fanouts.len() && arch.fanouts[f].distributed;

    let mut profile = AccessProfile::zero(n);
    // Per (operand, fanout): words on the child side and on the link side,
    // used to recover the multicast factor.
    let mut share_counts = vec![[(0u64, 0u64); 3]; n];

    struct Hop {
        o: Operand,
        parent: usize,
        child: usize,
        fp: u64,
        state: HashMap<Vec<usize>, InstanceState>,
        parent_seen: HashSet<Vec<u64>>,
    }
    let mut hops: Vec<Hop> = Vec::new();
    for o in Operand::ALL {
        let chain = m.chain(arch, o);
        for w in chain.windows(2) {
            hops.push(Hop {
                o,
                parent: w[0],
                child: w[1],
                fp: box_words(m, layer, w[1], o),
                state: HashMap::new(),
                parent_seen: HashSet::new(),
            });
        }
    }

    let mut idx = vec![0u64; loops.len()];
    loop {
        let mut t = vec![[0u64; 7]; n];
        for (k, &(l, d, _)) in loops.iter().enumerate() {
            t[l][d.index()] = idx[k];
        }
        for hop in hops.iter_mut() {
            let (o, p, c, fp) = (hop.o, hop.parent, hop.child, hop.fp);
            let oi = o.index();
            let rel: Vec<Dim> = Dim::ALL.into_iter().filter(|&d| relevant(o, d)).collect();
            let upper = c.min(n);
            // Every instance of level c: one point per fanout above it.
            let mut instances: Vec<Vec<usize>> = vec![Vec::new()];
            for pts in points.iter().take(upper) {
                instances = instances
                    .into_iter()
                    .flat_map(|v| {
                        (0..pts.len()).map(move |i| {
                            let mut w = v.clone();
                            w.push(i);
                            w
                        })
                    })
                    .collect();
            }
            // Key pieces per instance: identity and full spatial indices.
            let mut delivered: Vec<(Vec<u64>, Vec<usize>, bool)> = Vec::new();
            for inst in instances {
                let mut ident = Vec::new();
                for row in t.iter().take(upper) {
                    ident.extend(rel.iter().map(|d| row[d.index()]));
                }
                for (f, &pi) in inst.iter().enumerate() {
                    ident.extend(rel.iter().map(|d| points[f][pi][d.index()]));
                }
                let st = hop.state.entry(inst.clone()).or_default();
                if st.last.as_ref() != Some(&ident) {
                    let revisit = !st.seen.insert(ident.clone());
                    st.last = Some(ident.clone());
                    delivered.push((ident, inst, revisit));
                }
            }
            if delivered.is_empty() {
                continue;
            }
            let key = |ident: &Vec<u64>, inst: &Vec<usize>, below: usize, full_from: usize, include: &dyn Fn(usize) -> bool| {
                let mut k = ident.clone();
                k.push(u64::MAX);
                for (f, &pi) in inst.iter().enumerate() {
                    if f < below || (f >= full_from && include(f)) {
                        k.push(f as u64);
                        k.push(pi as u64);
                    }
                }
                k
            };
            let count = |below: usize, full_from: usize, include: &dyn Fn(usize) -> bool, revisits_only: bool| -> u64 {
                let set: HashSet<Vec<u64>> = delivered
                    .iter()
                    .filter(|(_, _, r)| !revisits_only || *r)
                    .map(|(id, inst, _)| key(id, inst, below, full_from, include))
                    .collect();
                set.len() as u64
            };
            if o != Operand::Output {
                let fills = delivered.len() as u64 * fp;
                if c < n {
                    profile.writes[c][oi] += fills;
                }
                let not_mc = |f: usize| !multicasts(f);
                profile.reads[p][oi] += count(p, p, &not_mc, false) * fp;
                for f in p..c {
                    if distributed(f) {
                        let x = count(f + 1, f + 1, &not_mc, false);
                        let h = count(f, f + 1, &not_mc, false);
                        profile.transferred[f][oi] += (x - h) * fp;
                    } else {
                        profile.transferred[f][oi] += count(f, f, &not_mc, false) * fp;
                    }
                    share_counts[f][oi].0 += count(f + 1, f + 1, &not_mc, false);
                    share_counts[f][oi].1 += count(f, f, &not_mc, false);
                }
            } else {
                let residencies = delivered.len() as u64;
                let refills = if c < n { delivered.iter().filter(|d| d.2).count() as u64 } else { 0 };
                if c < n {
                    profile.reads[c][oi] += residencies * fp;
                    profile.writes[c][oi] += refills * fp;
                }
                let none = |_: usize| false;
                let mut parent_keys: Vec<Vec<u64>> = delivered.iter().map(|(id, inst, _)| key(id, inst, p, n, &none)).collect();
                parent_keys.sort();
                parent_keys.dedup();
                for k in parent_keys {
                    if hop.parent_seen.insert(k) {
                        profile.writes[p][oi] += fp;
                    } else {
                        profile.partial_sum_updates[p] += fp;
                    }
                }
                for f in p..c {
                    let words = |below: usize| {
                        count(below, n, &none, false) + if c < n { count(below, n, &none, true) } else { 0 }
                    };
                    if distributed(f) {
                        profile.transferred[f][oi] += (words(f + 1) - words(f)) * fp;
                    } else {
                        profile.transferred[f][oi] += words(f) * fp;
                    }
                    let no_reduce = |g: usize| g == f && !reduces(f);
                    share_counts[f][oi].0 += count(f + 1, n, &none, false);
                    share_counts[f][oi].1 += count(f, f, &no_reduce, false);
                }
            }
        }
        // Advance the innermost loop first.
        let mut k = loops.len();
        loop {
            if k == 0 {
                for f in 0..n {
                    for o in Operand::ALL {
                        let (with, without) = share_counts[f][o.index()];
                        profile.multicast[f][o.index()] = if without == 0 { 1 } else { with / without };
                    }
                }
                return Ok(profile);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < loops[k].2 {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Dense 4-D integer tensor in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tensor4 {
    pub dims: [usize; 4],
    pub data: Vec<i64>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 { dims, data: vec![0; dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<i64>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!("{} values for dims {dims:?}", data.len())));
        }
        Ok(Tensor4 { dims, data })
    }

    fn offset(&self, i: [usize; 4]) -> usize {
        ((i[0] * self.dims[1] + i[1]) * self.dims[2] + i[2]) * self.dims[3] + i[3]
    }

    pub fn get(&self, i: [usize; 4]) -> i64 {
        self.data[self.offset(i)]
    }

    pub fn set(&mut self, i: [usize; 4], v: i64) {
        let o = self.offset(i);
        self.data[o] = v;
    }
}

/// Direct evaluation of the layer: input `[B][Ic][H][W]`, weights
/// `[Oc][Ic][Fh][Fw]`, output `[B][Oc][Ox][Oy]` with
/// `out[b][k][x][y] = sum over c, i, j of in[b][c][x*s+i-pad][y*s+j-pad] * w[k][c][i][j]`,
/// treating padded positions as zero. Fully-connected layers use 1x1 maps.
pub fn reference_layer(layer: &LayerShape, input: &Tensor4, weights: &Tensor4) -> Result<Tensor4> {
    layer.validate()?;
    let (ox, oy) = layer.output_dims()?;
    let u = |v: u64| v as usize;
    let want_in = [u(layer.batch), u(layer.in_channels), u(layer.in_height), u(layer.in_width)];
    let want_w = [u(layer.out_channels), u(layer.in_channels), u(layer.filter_height), u(layer.filter_width)];
    if input.dims != want_in {
        return Err(Error::Shape(format!("input {:?}, layer needs {want_in:?}", input.dims)));
    }
    if weights.dims != want_w {
        return Err(Error::Shape(format!("weights {:?}, layer needs {want_w:?}", weights.dims)));
    }
    debug_assert!(layer.kind == LayerKind::Conv || (ox, oy) == (1, 1));
    let (s, pad) = (u(layer.stride), u(layer.pad));
    let mut out = Tensor4::zeros([want_in[0], want_w[0], u(ox), u(oy)]);
    for b in 0..want_in[0] {
        for k in 0..want_w[0] {
            for x in 0..u(ox) {
                for y in 0..u(oy) {
                    let mut acc = 0i64;
                    for c in 0..want_in[1] {
                        for i in 0..want_w[2] {
                            for j in 0..want_w[3] {
                                let (h, w) = (x * s + i, y * s + j);
                                if h < pad || w < pad || h - pad >= want_in[2] || w - pad >= want_in[3] {
                                    continue;
                                }
                                acc += input.get([b, c, h - pad, w - pad]) * weights.get([k, c, i, j]);
                            }
                        }
                    }
                    out.set([b, k, x, y], acc);
                }
            }
        }
    }
    Ok(out)
}
