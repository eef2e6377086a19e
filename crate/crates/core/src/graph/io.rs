//! Reading and writing the `pois.tsv` / `taxonomy.tsv` / `edges.tsv` triple.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::geo::{CoordMode, Location};
use super::taxonomy::Taxonomy;
use super::{Poi, PoiGraph, RelationSet};
use crate::error::{Error, Result};

pub const POIS_FILE: &str = "pois.tsv";
pub const TAXONOMY_FILE: &str = "taxonomy.tsv";
pub const EDGES_FILE: &str = "edges.tsv";

/// Everything in a dataset directory, before splitting.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub mode: CoordMode,
    pub taxonomy: Taxonomy,
    pub pois: Vec<Poi>,
    pub relations: RelationSet,
    /// Undirected `(a, b, relation)` in file order, with `a != b` and one relation per pair.
    pub edges: Vec<(usize, usize, usize)>,
}

impl RawDataset {
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load(&dir.join(POIS_FILE), &dir.join(TAXONOMY_FILE), &dir.join(EDGES_FILE))
    }

    pub fn load(pois: &Path, taxonomy: &Path, edges: &Path) -> Result<Self> {
        let taxonomy = parse_taxonomy(taxonomy, &read(taxonomy)?)?;
        let (mode, pois) = parse_pois(pois, &read(pois)?, &taxonomy)?;
        let (relations, edges) = parse_edges(edges, &read(edges)?, pois.len())?;
        Ok(Self {
            mode,
            taxonomy,
            pois,
            relations,
            edges,
        })
    }

    /// Full graph with every edge; splits build their own restricted graphs.
    pub fn graph(&self, grid_cell_km: f64) -> Result<PoiGraph> {
        PoiGraph::new(
            self.mode,
            self.pois.clone(),
            self.relations.clone(),
            self.edges.iter().copied(),
            grid_cell_km,
        )
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut t = String::from("# node_id\tparent_id\tname\n");
        for node in self.taxonomy.nodes() {
            let parent = node.parent.map_or(-1, |p| self.taxonomy.node(p).external_id);
            writeln!(t, "{}\t{}\t{}", node.external_id, parent, node.name).unwrap();
        }
        write(&dir.join(TAXONOMY_FILE), &t)?;

        let mut p = format!("#coords={}\n", self.mode.as_str());
        for poi in &self.pois {
            let cat = self.taxonomy.node(poi.category).external_id;
            writeln!(p, "{}\t{}\t{}\t{}", poi.id, poi.location.x, poi.location.y, cat).unwrap();
        }
        write(&dir.join(POIS_FILE), &p)?;

        let mut e = String::from("# src_id\tdst_id\trelation\n");
        for &(a, b, r) in &self.edges {
            writeln!(e, "{a}\t{b}\t{}", self.relations.name(r)).unwrap();
        }
        write(&dir.join(EDGES_FILE), &e)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-comment, non-blank lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, raw: Option<&str>, what: &str) -> Result<T> {
    let raw = raw.ok_or_else(|| Error::load(path, line, format!("missing {what}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::load(path, line, format!("invalid {what} {raw:?}")))
}

fn parse_taxonomy(path: &Path, text: &str) -> Result<Taxonomy> {
    let mut rows = Vec::new();
    let mut first_line = HashMap::new();
    for (line, l) in data_lines(text) {
        let mut parts = l.splitn(3, '\t');
        let id: i64 = field(path, line, parts.next(), "node id")?;
        let parent: i64 = field(path, line, parts.next(), "parent id")?;
        let name = parts.next().unwrap_or("").trim().to_string();
        if let Some(prev) = first_line.insert(id, line) {
            return Err(Error::load(
                path,
                line,
                format!("duplicate node id {id} (first on line {prev})"),
            ));
        }
        rows.push((id, parent, name));
    }
    Taxonomy::from_rows(&rows).map_err(|e| Error::load(path, 0, e.to_string()))
}

fn parse_pois(path: &Path, text: &str, taxonomy: &Taxonomy) -> Result<(CoordMode, Vec<Poi>)> {
    let mut mode = None;
    for l in text.lines() {
        if let Some(v) = l.trim().strip_prefix("#coords=") {
            mode = Some(
                CoordMode::parse(v.trim())
                    .ok_or_else(|| Error::load(path, 1, format!("unknown coordinate mode {v:?}")))?,
            );
            break;
        }
    }
    let mode = mode.ok_or_else(|| Error::load(path, 1, "missing #coords=planar|lonlat header"))?;
    let mut pois: Vec<Poi> = Vec::new();
    for (line, l) in data_lines(text) {
        let mut parts = l.split_whitespace();
        let id: usize = field(path, line, parts.next(), "poi id")?;
        let x: f64 = field(path, line, parts.next(), "x")?;
        let y: f64 = field(path, line, parts.next(), "y")?;
        let cat: i64 = field(path, line, parts.next(), "category id")?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::load(path, line, "non-finite coordinate"));
        }
        if id != pois.len() {
            let msg = if id < pois.len() {
                format!("duplicate poi id {id}")
            } else {
                format!("poi ids must be contiguous from 0; expected {}, found {id}", pois.len())
            };
            return Err(Error::load(path, line, msg));
        }
        let category = taxonomy
            .dense(cat)
            .map_err(|_| Error::load(path, line, format!("unknown category id {cat}")))?;
        if !taxonomy.node(category).is_leaf() {
            return Err(Error::load(path, line, format!("category {cat} is not a leaf")));
        }
        pois.push(Poi {
            id,
            location: Location::new(x, y),
            category,
        });
    }
    Ok((mode, pois))
}

fn parse_edges(path: &Path, text: &str, n: usize) -> Result<(RelationSet, Vec<(usize, usize, usize)>)> {
    let mut raw = Vec::new();
    for (line, l) in data_lines(text) {
        let mut parts = l.split_whitespace();
        let a: usize = field(path, line, parts.next(), "src id")?;
        let b: usize = field(path, line, parts.next(), "dst id")?;
        let rel = parts
            .next()
            .ok_or_else(|| Error::load(path, line, "missing relation name"))?;
        for id in [a, b] {
            if id >= n {
                return Err(Error::load(
                    path,
                    line,
                    format!("edge endpoint {id} is not one of the {n} POIs"),
                ));
            }
        }
        if a == b {
            return Err(Error::load(path, line, format!("self edge on POI {a}")));
        }
        raw.push((line, a, b, rel.to_string()));
    }
    let names: Vec<&str> = raw.iter().map(|(_, _, _, r)| r.as_str()).collect();
    let relations = RelationSet::new(&names).map_err(|e| Error::load(path, 0, e.to_string()))?;
    let mut seen: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    let mut edges = Vec::with_capacity(raw.len());
    for (line, a, b, name) in raw {
        let r = relations.id(&name).expect("relation collected above");
        match seen.get(&(a.min(b), a.max(b))) {
            Some(&(r0, _)) if r0 == r => continue,
            Some(&(r0, l0)) => {
                return Err(Error::load(
                    path,
                    line,
                    format!(
                        "pair ({a}, {b}) is already {} on line {l0}; one relation per pair",
                        relations.name(r0)
                    ),
                ))
            }
            None => {
                seen.insert((a.min(b), a.max(b)), (r, line));
                edges.push((a, b, r));
            }
        }
    }
    Ok((relations, edges))
}

/// Default locations of the three files under `dir`.
pub fn dataset_paths(dir: &Path) -> [PathBuf; 3] {
    [dir.join(POIS_FILE), dir.join(TAXONOMY_FILE), dir.join(EDGES_FILE)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_files(dir: &Path, pois: &str, tax: &str, edges: &str) {
        fs::write(dir.join(POIS_FILE), pois).unwrap();
        fs::write(dir.join(TAXONOMY_FILE), tax).unwrap();
        fs::write(dir.join(EDGES_FILE), edges).unwrap();
    }

    const TAX: &str = "0\t-1\troot\n1\t0\tfood\n2\t0\tshop\n";
    const POIS: &str = "#coords=planar\n0\t0\t0\t1\n1\t500\t0\t1\n2\t900\t900\t2\n";

    #[test]
    fn single_edge_is_mirrored() {
        let d = tempdir().unwrap();
        write_files(d.path(), POIS, TAX, "0\t1\tcompetitive\n");
        let raw = RawDataset::load_dir(d.path()).unwrap();
        let g = raw.graph(1.15).unwrap();
        let r = raw.relations.id("competitive").unwrap();
        assert_eq!(g.neighbors(r, 0), &[1]);
        assert_eq!(g.neighbors(r, 1), &[0]);
        assert!(g.neighbors(r, 2).is_empty());
    }

    fn load_err(pois: &str, tax: &str, edges: &str) -> String {
        let d = tempdir().unwrap();
        write_files(d.path(), pois, tax, edges);
        RawDataset::load_dir(d.path()).unwrap_err().to_string()
    }

    #[test]
    fn errors_carry_line_numbers() {
        let msg = load_err(POIS, TAX, "# header\n0\t1\tcompetitive\n0\t99\tcompetitive\n");
        assert!(msg.contains(":3") && msg.contains("99"), "{msg}");

        let msg = load_err("#coords=planar\n0\t0\t0\t1\n0\t1\t1\t1\n", TAX, "0\t0\tx\n");
        assert!(msg.contains(":3") && msg.contains("duplicate poi id 0"), "{msg}");

        let msg = load_err("#coords=planar\n0\t0\t0\t7\n", TAX, "");
        assert!(msg.contains(":2") && msg.contains("unknown category id 7"), "{msg}");

        let msg = load_err("#coords=planar\n0\t0\t0\t0\n", TAX, "");
        assert!(msg.contains("not a leaf"), "{msg}");

        let msg = load_err("0\t0\t0\t1\n", TAX, "");
        assert!(msg.contains("#coords"), "{msg}");
    }

    #[test]
    fn missing_file_names_the_path() {
        let d = tempdir().unwrap();
        let err = RawDataset::load_dir(d.path()).unwrap_err().to_string();
        assert!(err.contains(TAXONOMY_FILE), "{err}");
    }

    #[test]
    fn conflicting_relations_rejected_and_duplicates_merged() {
        let d = tempdir().unwrap();
        write_files(d.path(), POIS, TAX, "0\t1\ta\n1\t0\ta\n");
        assert_eq!(RawDataset::load_dir(d.path()).unwrap().edges.len(), 1);
        let msg = load_err(POIS, TAX, "0\t1\ta\n1\t0\tb\n");
        assert!(msg.contains("one relation per pair"), "{msg}");
    }
}
