//! Versioned checkpoint: text header, then little-endian f64 parameter data
//! in declaration order.
//!
//! ```text
//! poirel-checkpoint 1
//! config <lines>
//! key = value ...
//! relations <count>
//! <name> ...
//! categories <count>
//! <external id> <parent external id or -1> ...
//! bins <b0,b1,...>
//! params <count>
//! <name> <dim> <dim> ...
//! end
//! <raw f64 data>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::{PoiGraph, Taxonomy};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &str = "poirel-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    /// Data relation names in id order.
    pub relations: Vec<String>,
    /// `(external id, parent external id)` per taxonomy node in dense order; the root's parent is -1.
    pub categories: Vec<(i64, i64)>,
    pub bins: Vec<f64>,
}

impl Vocabulary {
    pub fn of(graph: &PoiGraph, taxonomy: &Taxonomy, bins: &[f64]) -> Self {
        let r = graph.relations();
        let nodes = taxonomy.nodes();
        Self {
            relations: (0..r.num_data()).map(|i| r.name(i).to_string()).collect(),
            categories: nodes
                .iter()
                .map(|n| (n.external_id, n.parent.map_or(-1, |p| nodes[p].external_id)))
                .collect(),
            bins: bins.to_vec(),
        }
    }

    /// Fails naming the first vocabulary that differs.
    pub fn check(&self, other: &Vocabulary) -> Result<()> {
        if self.relations != other.relations {
            return Err(Error::Checkpoint(format!(
                "relation vocabulary mismatch: checkpoint has {:?}, data has {:?}",
                self.relations, other.relations
            )));
        }
        if self.categories != other.categories {
            let at = self
                .categories
                .iter()
                .zip(&other.categories)
                .position(|(a, b)| a != b)
                .unwrap_or(self.categories.len().min(other.categories.len()));
            return Err(Error::Checkpoint(format!(
                "category vocabulary mismatch: checkpoint has {} taxonomy nodes, data has {}; first difference at node {at}",
                self.categories.len(),
                other.categories.len()
            )));
        }
        if self.bins != other.bins {
            return Err(Error::Checkpoint(format!(
                "distance bin mismatch: checkpoint has {:?}, config has {:?}",
                self.bins, other.bins
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn count(line: Option<&str>, tag: &str) -> Result<usize> {
    let line = line.ok_or_else(|| bad(format!("truncated header before {tag}")))?;
    line.strip_prefix(tag)
        .and_then(|s| s.strip_prefix(' '))
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| bad(format!("expected `{tag} <count>`, found {line:?}")))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = String::new();
        writeln!(h, "{MAGIC} {VERSION}").unwrap();
        let cfg = self.config.to_text();
        writeln!(h, "config {}", cfg.lines().count()).unwrap();
        h.push_str(&cfg);
        writeln!(h, "relations {}", self.vocab.relations.len()).unwrap();
        self.vocab.relations.iter().for_each(|r| writeln!(h, "{r}").unwrap());
        writeln!(h, "categories {}", self.vocab.categories.len()).unwrap();
        for (id, parent) in &self.vocab.categories {
            writeln!(h, "{id} {parent}").unwrap();
        }
        let bins: Vec<String> = self.vocab.bins.iter().map(|b| b.to_string()).collect();
        writeln!(h, "bins {}", bins.join(",")).unwrap();
        writeln!(h, "params {}", self.params.len()).unwrap();
        for (name, t) in self.params.iter() {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            writeln!(h, "{name} {}", dims.join(" ")).unwrap();
        }
        h.push_str("end\n");

        let mut out = h.into_bytes();
        out.reserve(self.params.num_values() * 8);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const END: &[u8] = b"\nend\n";
        let split = bytes
            .windows(END.len())
            .position(|w| w == END)
            .ok_or_else(|| bad("header has no `end` line"))?
            + END.len();
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
        let mut lines = header.lines();

        let first = lines.next().unwrap_or("");
        let version = first
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| bad(format!("not a checkpoint (first line {first:?})")))?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}; expected {VERSION}")));
        }

        let n = count(lines.next(), "config")?;
        let mut text = String::new();
        for _ in 0..n {
            text.push_str(lines.next().ok_or_else(|| bad("truncated config"))?);
            text.push('\n');
        }
        let config = RunConfig::from_text(&text)?;

        let n = count(lines.next(), "relations")?;
        let relations = (0..n)
            .map(|_| lines.next().map(String::from).ok_or_else(|| bad("truncated relations")))
            .collect::<Result<Vec<_>>>()?;

        let n = count(lines.next(), "categories")?;
        let mut categories = Vec::with_capacity(n);
        for _ in 0..n {
            let line = lines.next().ok_or_else(|| bad("truncated categories"))?;
            let mut f = line.split(' ').map(str::parse::<i64>);
            match (f.next(), f.next(), f.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => categories.push((a, b)),
                _ => return Err(bad(format!("bad category line {line:?}"))),
            }
        }

        let line = lines.next().ok_or_else(|| bad("missing bins"))?;
        let bins = line
            .strip_prefix("bins ")
            .ok_or_else(|| bad(format!("expected bins, found {line:?}")))?
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad bin {s:?}"))))
            .collect::<Result<Vec<_>>>()?;

        let n = count(lines.next(), "params")?;
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            let line = lines.next().ok_or_else(|| bad("truncated parameter list"))?;
            let mut f = line.split(' ');
            let name = f
                .next()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| bad("empty parameter name"))?;
            let dims = f
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| bad(format!("bad dimension in {line:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            shapes.push((name.to_string(), dims));
        }
        if lines.next() != Some("end") {
            return Err(bad("expected `end` after parameter list"));
        }

        let data = &bytes[split..];
        let expected: usize = shapes.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
        if data.len() != expected * 8 {
            return Err(bad(format!(
                "data section holds {} bytes; header declares {expected} values",
                data.len()
            )));
        }
        let mut values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut params = ParamStore::new();
        for (name, dims) in shapes {
            let len = dims.iter().product();
            let t = Tensor::new(dims, values.by_ref().take(len).collect())?;
            params.insert(name, t)?;
        }
        Ok(Self {
            config,
            vocab: Vocabulary {
                relations,
                categories,
                bins,
            },
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
