//! Canonical text form of a mapping, e.g.
//! `T0:Ic=4,Oc=2;T2:B=2 | S1:Oc=16 | P0:Oc>Ic | X1:W`.
//!
//! Sections are temporal factors, spatial factors, permutations and bypass
//! flags; only factors above 1, permutations of two or more dims and set
//! bypass flags are listed. An empty section is `-`.

use std::fmt::Write as _;

use super::Mapping;
use crate::arch::Operand;
use crate::error::{Error, Result};
use crate::workload::Dim;

fn factors(out: &mut Vec<String>, tag: char, slots: &[[u64; 7]]) {
    for (i, s) in slots.iter().enumerate() {
        let items: Vec<String> = Dim::ALL
            .into_iter()
            .filter(|d| s[d.index()] > 1)
            .map(|d| format!("{d}={}", s[d.index()]))
            .collect();
        if !items.is_empty() {
            out.push(format!("{tag}{i}:{}", items.join(",")));
        }
    }
}

fn section(items: Vec<String>) -> String {
    if items.is_empty() {
        "-".to_string()
    } else {
        items.join(";")
    }
}

impl Mapping {
    pub fn encode(&self) -> String {
        let mut t = Vec::new();
        factors(&mut t, 'T', &self.temporal);
        let mut s = Vec::new();
        factors(&mut s, 'S', &self.spatial);
        let p: Vec<String> = self
            .perms
            .iter()
            .enumerate()
            .filter(|(_, p)| p.len() > 1)
            .map(|(l, p)| {
                let names: Vec<&str> = p.iter().map(|d| d.name()).collect();
                format!("P{l}:{}", names.join(">"))
            })
            .collect();
        let x: Vec<String> = self
            .bypass
            .iter()
            .enumerate()
            .filter(|(_, b)| b.iter().any(|&v| v))
            .map(|(l, b)| {
                let mut s = format!("X{l}:");
                for o in Operand::ALL.into_iter().filter(|o| b[o.index()]) {
                    let _ = s.write_char(o.letter());
                }
                s
            })
            .collect();
        [section(t), section(s), section(p), section(x)].join(" | ")
    }

    /// Parses [`Mapping::encode`] output for an architecture with `levels` levels.
    pub fn parse(text: &str, levels: usize) -> Result<Mapping> {
        let err = |msg: String| Error::Encoding(msg);
        let sections: Vec<&str> = text.split('|').map(str::trim).collect();
        if sections.len() != 4 {
            return Err(err(format!("expected 4 sections, found {}", sections.len())));
        }
        let mut m = Mapping::unit(levels);
        let entries = |sec: &str, tag: char| -> Result<Vec<(usize, String)>> {
            if sec == "-" {
                return Ok(Vec::new());
            }
            sec.split(';')
                .map(|item| {
                    let (head, body) = item.split_once(':').ok_or_else(|| err(format!("missing ':' in {item:?}")))?;
                    let idx = head
                        .strip_prefix(tag)
                        .and_then(|i| i.parse::<usize>().ok())
                        .filter(|&i| i < levels)
                        .ok_or_else(|| err(format!("bad slot {head:?}, expected {tag}0..{tag}{}", levels - 1)))?;
                    Ok((idx, body.to_string()))
                })
                .collect()
        };
        let dim = |name: &str| Dim::from_name(name).ok_or_else(|| err(format!("unknown dim {name:?}")));
        for (sec, tag) in [(sections[0], 'T'), (sections[1], 'S')] {
            for (idx, body) in entries(sec, tag)? {
                for pair in body.split(',') {
                    let (d, v) = pair.split_once('=').ok_or_else(|| err(format!("bad factor {pair:?}")))?;
                    let v: u64 = v.parse().map_err(|_| err(format!("bad factor value {v:?}")))?;
                    if v < 2 {
                        return Err(err(format!("factor {pair:?} must be listed only when above 1")));
                    }
                    let slot = if tag == 'T' { &mut m.temporal[idx] } else { &mut m.spatial[idx] };
                    slot[dim(d)?.index()] = v;
                }
            }
        }
        for (idx, body) in entries(sections[2], 'P')? {
            m.perms[idx] = body.split('>').map(dim).collect::<Result<_>>()?;
        }
        for l in 0..levels {
            let split: Vec<Dim> = Dim::ALL.into_iter().filter(|d| m.temporal[l][d.index()] > 1).collect();
            if m.perms[l].is_empty() {
                if split.len() > 1 {
                    return Err(err(format!("level {l} splits several dims but has no permutation")));
                }
                m.perms[l] = split;
            } else {
                let mut sorted = m.perms[l].clone();
                sorted.sort();
                if sorted != split {
                    return Err(err(format!("level {l} permutation does not match its factors")));
                }
            }
        }
        for (idx, body) in entries(sections[3], 'X')? {
            for c in body.chars() {
                let o = Operand::from_letter(c).ok_or_else(|| err(format!("unknown operand {c:?}")))?;
                m.bypass[idx][o.index()] = true;
            }
        }
        Ok(m)
    }
}
