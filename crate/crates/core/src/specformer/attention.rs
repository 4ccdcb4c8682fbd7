use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

use super::config::SpecFormerConfig;

/// Row-stochastic attention matrices for every layer, molecule and head.
///
/// `layers[l]` holds `groups × heads × tokens × tokens` weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub groups: usize,
    pub heads: usize,
    pub tokens: usize,
    /// Token offset of each spectrum kind, followed by the total.
    pub offsets: [usize; 4],
    pub layers: Vec<Vec<f64>>,
}

impl AttentionMap {
    pub(crate) fn from_tape(tape: &Tape, nodes: &[Var<'_>], offsets: [usize; 4]) -> Result<Self> {
        let mut layers = Vec::with_capacity(nodes.len());
        let mut shape = None;
        for &node in nodes {
            let (layout, probs) = tape
                .attention_probs(node)
                .ok_or_else(|| Error::InvalidArgument("node is not an attention op".into()))?;
            shape = Some((layout.groups, layout.heads, layout.seq));
            layers.push(probs.as_ref().clone());
        }
        let (groups, heads, tokens) = shape.unwrap_or((0, 0, offsets[3]));
        Ok(Self {
            groups,
            heads,
            tokens,
            offsets,
            layers,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// The `tokens × tokens` matrix of one layer, molecule and head.
    pub fn matrix(&self, layer: usize, group: usize, head: usize) -> &[f64] {
        let t2 = self.tokens * self.tokens;
        &self.layers[layer][(group * self.heads + head) * t2..][..t2]
    }

    pub fn weight(&self, layer: usize, group: usize, head: usize, query: usize, key: usize) -> f64 {
        self.matrix(layer, group, head)[query * self.tokens + key]
    }

    /// The map of a single molecule.
    pub fn molecule(&self, group: usize) -> AttentionMap {
        let block = self.heads * self.tokens * self.tokens;
        AttentionMap {
            groups: 1,
            heads: self.heads,
            tokens: self.tokens,
            offsets: self.offsets,
            layers: self
                .layers
                .iter()
                .map(|l| l[group * block..(group + 1) * block].to_vec())
                .collect(),
        }
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.chunks(self.tokens.max(1)))
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    layers: usize,
    heads: usize,
    tokens: usize,
    kinds: Vec<String>,
    offsets: [usize; 4],
    config: Option<SpecFormerConfig>,
}

/// Metadata file written next to an attention CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes a single-molecule map as CSV rows
/// `layer,head,query_token,key_token,weight` and a JSON sidecar with the
/// kind boundaries.
pub fn export_attention(map: &AttentionMap, config: Option<&SpecFormerConfig>, path: &Path) -> Result<()> {
    if map.groups != 1 {
        return Err(Error::InvalidArgument(format!(
            "export expects one molecule, map holds {}",
            map.groups
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "layer,head,query_token,key_token,weight").map_err(io)?;
    for l in 0..map.num_layers() {
        for h in 0..map.heads {
            let m = map.matrix(l, 0, h);
            for q in 0..map.tokens {
                for k in 0..map.tokens {
                    writeln!(w, "{l},{h},{q},{k},{:?}", m[q * map.tokens + k]).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)?;

    let meta = Sidecar {
        layers: map.num_layers(),
        heads: map.heads,
        tokens: map.tokens,
        kinds: ["uv_vis", "ir", "raman"].map(String::from).to_vec(),
        offsets: map.offsets,
        config: config.cloned(),
    };
    let meta_path = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))
}

/// Reads a map written by [`export_attention`].
pub fn read_attention(path: &Path) -> Result<AttentionMap> {
    let meta_path = sidecar_path(path);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Sidecar = serde_json::from_str(&text)?;
    let t2 = meta.tokens * meta.tokens;
    let mut layers = vec![vec![f64::NAN; meta.heads * t2]; meta.layers];
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, what: &str| Error::InvalidArgument(format!("{}:{line}: {what}", path.display()));
    let mut seen = 0usize;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(n + 1, "expected 5 fields"));
        }
        let idx: Vec<usize> = f[..4]
            .iter()
            .map(|s| s.parse().map_err(|_| bad(n + 1, "bad index")))
            .collect::<Result<_>>()?;
        let w: f64 = f[4].parse().map_err(|_| bad(n + 1, "bad weight"))?;
        let (l, h, q, k) = (idx[0], idx[1], idx[2], idx[3]);
        if l >= meta.layers || h >= meta.heads || q >= meta.tokens || k >= meta.tokens {
            return Err(bad(n + 1, "index out of range"));
        }
        layers[l][h * t2 + q * meta.tokens + k] = w;
        seen += 1;
    }
    if seen != meta.layers * meta.heads * t2 {
        return Err(Error::InvalidArgument(format!(
            "{}: {seen} weights, expected {}",
            path.display(),
            meta.layers * meta.heads * t2
        )));
    }
    Ok(AttentionMap {
        groups: 1,
        heads: meta.heads,
        tokens: meta.tokens,
        offsets: meta.offsets,
        layers,
    })
}
