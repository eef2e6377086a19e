use std::collections::HashSet;
use std::rc::Rc;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{PoiGraph, Taxonomy};
use crate::model::wrgnn::distance_features;
use crate::tensor::Tensor;

/// Index arrays and constant features derived once per (graph, config).
///
/// Structural edges are stored sorted by `(dst, relation, src)`, one entry
/// per direction plus one self loop per POI, so every reduction runs in a
/// fixed order regardless of how the adjacency was built.
#[derive(Clone, Debug)]
pub struct GraphContext {
    pub n: usize,
    pub n_tax: usize,
    /// Dense leaf category per POI.
    pub categories: Rc<[usize]>,
    /// Flattened root→node paths for every taxonomy node, and the owning node.
    pub tax_path_nodes: Rc<[usize]>,
    pub tax_path_owner: Rc<[usize]>,

    /// Relation ids taking part in aggregation (data relations, then self).
    pub structural: Vec<usize>,
    pub edge_src: Rc<[usize]>,
    pub edge_dst: Rc<[usize]>,
    /// Position of each edge's relation in `structural`.
    pub edge_rel: Rc<[usize]>,
    pub edge_dist_km: Vec<f64>,
    /// Row of the stacked message matrix: `rel_pos · n + src`.
    pub msg_row: Rc<[usize]>,
    /// Softmax segment: `dst · |structural| + rel_pos`.
    pub segment: Rc<[usize]>,
    pub n_segments: usize,
    /// Flattened (edge, head) lookups, index `e · K + k`.
    pub att_dst: Rc<[usize]>,
    pub att_src: Rc<[usize]>,
    pub att_edge: Rc<[usize]>,
    /// Attention-vector row: `rel_pos · K + k`.
    pub att_row: Rc<[usize]>,
    /// RBF features of each edge distance, `[m, K_d]`.
    pub rbf: Tensor,

    /// Spatial pairs `(i, j)`, `j ∈ S_i`, sorted by `i` then `j`.
    pub sp_i: Rc<[usize]>,
    pub sp_j: Rc<[usize]>,
    /// Geo kernel `exp(-θ d²)` per spatial pair.
    pub sp_kernel: Vec<f64>,
}

impl GraphContext {
    pub fn new(graph: &PoiGraph, taxonomy: &Taxonomy, cfg: &ModelConfig) -> Result<Self> {
        let n = graph.len();
        if n == 0 {
            return Err(Error::Contract("graph has no POIs".into()));
        }
        let rels = graph.relations();
        let structural = rels.structural();
        let rs = structural.len();
        let k = cfg.heads;

        let mut tax_path_nodes = Vec::new();
        let mut tax_path_owner = Vec::new();
        for t in 0..taxonomy.len() {
            for p in taxonomy.path(t)? {
                tax_path_nodes.push(p);
                tax_path_owner.push(t);
            }
        }

        // (dst, rel_pos, src)
        let mut edges: Vec<(usize, usize, usize)> = Vec::new();
        for i in 0..n {
            for (pos, &r) in structural.iter().enumerate() {
                if r == rels.self_id() {
                    edges.push((i, pos, i));
                } else {
                    edges.extend(graph.neighbors(r, i).iter().map(|&j| (i, pos, j)));
                }
            }
        }
        edges.sort_unstable();
        let m = edges.len();

        let edge_dist_km: Vec<f64> = edges
            .iter()
            .map(|&(i, _, j)| if i == j { 0.0 } else { graph.distance_km(i, j) })
            .collect();
        let mut rbf = Vec::with_capacity(m * cfg.rbf_centers.len());
        for &d in &edge_dist_km {
            rbf.extend(distance_features(d, &cfg.rbf_centers, cfg.rbf_width));
        }

        let mut att_dst = Vec::with_capacity(m * k);
        let mut att_src = Vec::with_capacity(m * k);
        let mut att_edge = Vec::with_capacity(m * k);
        let mut att_row = Vec::with_capacity(m * k);
        for (e, &(i, pos, j)) in edges.iter().enumerate() {
            for h in 0..k {
                att_dst.push(i);
                att_src.push(j);
                att_edge.push(e);
                att_row.push(pos * k + h);
            }
        }

        let mut sp_i = Vec::new();
        let mut sp_j = Vec::new();
        let mut sp_kernel = Vec::new();
        for i in 0..n {
            for j in graph.spatial_neighbors(i, cfg.radius_km) {
                let d = graph.distance_km(i, j);
                sp_i.push(i);
                sp_j.push(j);
                sp_kernel.push(geo_kernel(d, cfg.theta));
            }
        }

        Ok(Self {
            n,
            n_tax: taxonomy.len(),
            categories: graph.pois().iter().map(|p| p.category).collect(),
            tax_path_nodes: tax_path_nodes.into(),
            tax_path_owner: tax_path_owner.into(),
            structural,
            edge_src: edges.iter().map(|e| e.2).collect(),
            edge_dst: edges.iter().map(|e| e.0).collect(),
            edge_rel: edges.iter().map(|e| e.1).collect(),
            edge_dist_km,
            msg_row: edges.iter().map(|&(_, pos, j)| pos * n + j).collect(),
            segment: edges.iter().map(|&(i, pos, _)| i * rs + pos).collect(),
            n_segments: n * rs,
            att_dst: att_dst.into(),
            att_src: att_src.into(),
            att_edge: att_edge.into(),
            att_row: att_row.into(),
            rbf: Tensor::matrix(m, cfg.rbf_centers.len(), rbf)?,
            sp_i: sp_i.into(),
            sp_j: sp_j.into(),
            sp_kernel,
        })
    }

    /// Same context with the structural edges of `pairs` (either direction)
    /// removed; self loops and spatial pairs are kept.
    pub fn without_pairs(&self, pairs: &HashSet<(usize, usize)>) -> Result<Self> {
        let k = self.att_dst.len() / self.num_edges().max(1);
        let kd = self.rbf.shape()[1];
        let rs = self.structural.len();
        let keep: Vec<usize> = (0..self.num_edges())
            .filter(|&e| {
                let (i, j) = (self.edge_dst[e], self.edge_src[e]);
                i == j || !pairs.contains(&(i.min(j), i.max(j)))
            })
            .collect();
        let m = keep.len();
        let pick = |v: &[usize]| -> Rc<[usize]> { keep.iter().map(|&e| v[e]).collect() };
        let edge_src = pick(&self.edge_src);
        let edge_dst = pick(&self.edge_dst);
        let edge_rel = pick(&self.edge_rel);
        let mut rbf = Vec::with_capacity(m * kd);
        for &e in &keep {
            rbf.extend_from_slice(self.rbf.row(e));
        }
        let mut att_dst = Vec::with_capacity(m * k);
        let mut att_src = Vec::with_capacity(m * k);
        let mut att_edge = Vec::with_capacity(m * k);
        let mut att_row = Vec::with_capacity(m * k);
        for e in 0..m {
            for h in 0..k {
                att_dst.push(edge_dst[e]);
                att_src.push(edge_src[e]);
                att_edge.push(e);
                att_row.push(edge_rel[e] * k + h);
            }
        }
        Ok(Self {
            n: self.n,
            n_tax: self.n_tax,
            categories: self.categories.clone(),
            tax_path_nodes: self.tax_path_nodes.clone(),
            tax_path_owner: self.tax_path_owner.clone(),
            structural: self.structural.clone(),
            edge_dist_km: keep.iter().map(|&e| self.edge_dist_km[e]).collect(),
            msg_row: (0..m).map(|e| edge_rel[e] * self.n + edge_src[e]).collect(),
            segment: (0..m).map(|e| edge_dst[e] * rs + edge_rel[e]).collect(),
            n_segments: self.n_segments,
            att_dst: att_dst.into(),
            att_src: att_src.into(),
            att_edge: att_edge.into(),
            att_row: att_row.into(),
            rbf: Tensor::matrix(m, kd, rbf)?,
            edge_src,
            edge_dst,
            edge_rel,
            sp_i: self.sp_i.clone(),
            sp_j: self.sp_j.clone(),
            sp_kernel: self.sp_kernel.clone(),
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    /// Edge positions of segment `(dst, rel_pos)`.
    pub fn segment_edges(&self, dst: usize, rel_pos: usize) -> std::ops::Range<usize> {
        let s = dst * self.structural.len() + rel_pos;
        let lo = self.segment.partition_point(|&x| x < s);
        let hi = self.segment.partition_point(|&x| x <= s);
        lo..hi
    }
}

/// RBF geo kernel on a km distance.
pub fn geo_kernel(d_km: f64, theta: f64) -> f64 {
    (-theta * d_km * d_km).exp()
}
