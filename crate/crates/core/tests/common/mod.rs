//! Dense brute-force recomputation of the encoder and scorer, shared by
//! the oracle tests and the acceptance suite.
#![allow(dead_code)]

use poirel::graph::{PoiGraph, Taxonomy, Triple};
use poirel::model::{self, GammaScope, ModelConfig, NodeInit};
use poirel::model_check::{tiny_instance, TinyInstance};
use poirel::tensor::{ParamStore, Tensor};
use poirel::training::LossForm;

pub fn w(p: &ParamStore, name: &str) -> Tensor {
    p.get(name).unwrap().clone()
}

/// `W x` for `W: [r, c]`.
pub fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| m.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W[:, lo..hi] x`.
pub fn matvec_cols(m: &Tensor, lo: usize, hi: usize, x: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| dot(&m.row(r)[lo..hi], x)).collect()
}

pub fn softmax(e: &[f64]) -> Vec<f64> {
    let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = e.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.iter().map(|v| v / z).collect()
}

pub struct Dense {
    /// Node states after the last layer.
    pub h: Vec<Vec<f64>>,
    /// Relation rows after the last layer.
    pub rel: Vec<Vec<f64>>,
    /// `alpha[l][(i, r, j)]` per head.
    pub alpha: Vec<Vec<((usize, usize, usize), Vec<f64>)>>,
    pub q: Vec<Vec<f64>>,
}

/// Layered relational aggregation written directly from its definition:
/// per relation, softmax attention over neighbours (self loops form their
/// own relation), gated messages, sum across relations, ReLU.
pub fn dense_wrgnn(p: &ParamStore, cfg: &ModelConfig, graph: &PoiGraph, tax: &Taxonomy) -> Dense {
    let n = graph.len();
    let (dp, dc, da, kh) = (cfg.d_p, cfg.d_c, cfg.d_att, cfg.heads);
    let cat = w(p, "cat_emb");
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut v = vec![0.0; dc];
            let nodes = if cfg.ablations.no_taxonomy {
                vec![graph.poi(i).category]
            } else {
                tax.path(graph.poi(i).category).unwrap()
            };
            for t in nodes {
                v.iter_mut().zip(cat.row(t)).for_each(|(a, b)| *a += b);
            }
            v
        })
        .collect();
    let mut h: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut v = vec![0.0; dp];
            if cfg.node_init != NodeInit::Free {
                v = matvec(&w(p, "init.w"), &q[i]);
            }
            if cfg.node_init != NodeInit::Taxonomy {
                v.iter_mut().zip(w(p, "free").row(i)).for_each(|(a, b)| *a += b);
            }
            v
        })
        .collect();
    let rel_t = w(p, "rel");
    let mut rel: Vec<Vec<f64>> = (0..rel_t.rows()).map(|r| rel_t.row(r).to_vec()).collect();
    let rels = graph.relations();
    let structural = rels.structural();
    let mut alpha = Vec::new();

    for l in 0..cfg.layers {
        let wl = w(p, &format!("layer{l}.w"));
        let wa = w(p, &format!("layer{l}.w_a"));
        let wd = w(p, &format!("layer{l}.w_d"));
        let attn = w(p, &format!("layer{l}.attn"));
        let wr = w(p, &format!("layer{l}.w_r"));
        let rel_tax = (cfg.gamma_scope == GammaScope::Full).then(|| w(p, &format!("layer{l}.rel_tax")));

        let z: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let hq: Vec<f64> = h[i].iter().chain(&q[i]).copied().collect();
                matvec(&wa, &hq)
            })
            .collect();
        let mut out = vec![vec![0.0; dp]; n];
        let mut alpha_l = Vec::new();
        for i in 0..n {
            for (pos, &r) in structural.iter().enumerate() {
                let nbrs: Vec<usize> = if r == rels.self_id() {
                    vec![i]
                } else {
                    graph.neighbors(r, i).to_vec()
                };
                if nbrs.is_empty() {
                    continue;
                }
                let mut a_heads = vec![Vec::new(); kh];
                for (k, a_k) in a_heads.iter_mut().enumerate() {
                    let a = attn.row(pos * kh + k);
                    let e: Vec<f64> = nbrs
                        .iter()
                        .map(|&j| {
                            let d = if i == j { 0.0 } else { graph.distance_km(i, j) };
                            let rbf: Vec<f64> = cfg
                                .rbf_centers
                                .iter()
                                .map(|c| (-(d - c).powi(2) / cfg.rbf_width.powi(2)).exp())
                                .collect();
                            let g = matvec(&wd, &rbf);
                            let s = dot(&a[..da], &z[i]) + dot(&a[da..2 * da], &z[j]) + dot(&a[2 * da..], &g);
                            if s > 0.0 {
                                s
                            } else {
                                cfg.leaky_slope * s
                            }
                        })
                        .collect();
                    *a_k = softmax(&e);
                }
                for (t, &j) in nbrs.iter().enumerate() {
                    let gated: Vec<f64> = h[j].iter().zip(&rel[r]).map(|(a, b)| a * b).collect();
                    let qj: Vec<f64> = match &rel_tax {
                        Some(s) => q[j].iter().zip(s.row(pos)).map(|(a, b)| a * b).collect(),
                        None => q[j].clone(),
                    };
                    let m: Vec<f64> = matvec_cols(&wl, 0, dp, &gated)
                        .iter()
                        .zip(matvec_cols(&wl, dp, dp + dc, &qj))
                        .map(|(a, b)| a + b)
                        .collect();
                    let width = dp / kh;
                    for c in 0..dp {
                        out[i][c] += a_heads[c / width][t] * m[c];
                    }
                    alpha_l.push(((i, r, j), a_heads.iter().map(|a| a[t]).collect()));
                }
            }
        }
        h = out
            .into_iter()
            .map(|v| v.into_iter().map(|x| x.max(0.0)).collect())
            .collect();
        rel = rel.iter().map(|r| matvec(&wr, r)).collect();
        alpha.push(alpha_l);
    }
    Dense { h, rel, alpha, q }
}

/// Spatial pooling, fusion, projection and bilinear scores for `pairs`.
pub fn dense_scores(
    p: &ParamStore,
    cfg: &ModelConfig,
    graph: &PoiGraph,
    d: &Dense,
    pairs: &[(usize, usize)],
) -> Vec<Vec<f64>> {
    let n = graph.len();
    let mut h = d.h.clone();
    if !cfg.ablations.no_spatial {
        let (wq, wk, wv) = (w(p, "spatial.w_q"), w(p, "spatial.w_k"), w(p, "spatial.w_v"));
        for i in 0..n {
            let nb = graph.spatial_neighbors(i, cfg.radius_km);
            if nb.is_empty() {
                continue;
            }
            let qi = matvec(&wq, &d.h[i]);
            let e: Vec<f64> = nb
                .iter()
                .map(|&j| {
                    let dist = graph.distance_km(i, j);
                    dot(&qi, &matvec(&wk, &d.h[j])) / (cfg.d_p as f64).sqrt() * (-cfg.theta * dist * dist).exp()
                })
                .collect();
            let beta = softmax(&e);
            for (b, &j) in beta.iter().zip(&nb) {
                let v = matvec(&wv, &d.h[j]);
                h[i].iter_mut().zip(v).for_each(|(x, y)| *x += b * y);
            }
        }
    }
    let hyper = w(p, "hyper");
    let k = graph.relations().num_scored();
    pairs
        .iter()
        .map(|&(a, b)| {
            let (mut x, mut y) = (h[a].clone(), h[b].clone());
            if !cfg.ablations.no_distance {
                let bin = cfg.bins.bin_of(graph.distance_km(a, b)).unwrap();
                let norm = dot(hyper.row(bin), hyper.row(bin)).sqrt();
                let u: Vec<f64> = hyper.row(bin).iter().map(|v| v / norm).collect();
                for v in [&mut x, &mut y] {
                    let c = dot(&u, v);
                    v.iter_mut().zip(&u).for_each(|(t, s)| *t -= c * s);
                }
            }
            (0..k)
                .map(|r| (0..cfg.d_p).map(|c| x[c] * y[c] * d.rel[r][c]).sum())
                .collect()
        })
        .collect()
}

/// Largest elementwise absolute difference; infinite on a length mismatch.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{k}]: {x} vs {y}");
    }
}

pub fn five_poi(gamma: GammaScope, init: NodeInit, seed: u64) -> TinyInstance {
    let mut inst = tiny_instance(5, 3, seed).unwrap();
    inst.cfg.gamma_scope = gamma;
    inst.cfg.node_init = init;
    inst.cfg.radius_km = 1.5;
    inst.ctx = model::GraphContext::new(&inst.graph, &inst.taxonomy, &inst.cfg).unwrap();
    let shape = model::ModelShape {
        num_pois: 5,
        num_tax_nodes: inst.taxonomy.len(),
        relations: inst.graph.relations().clone(),
    };
    inst.params = model::init_params(&inst.cfg, &shape, seed).unwrap();
    inst
}

fn ln_sigmoid(x: f64) -> f64 {
    -(1.0 + (-x).exp()).ln()
}

/// Mean binary cross-entropy of `triples` recomputed term by term from a
/// row-major `[|B|, k]` score matrix.
pub fn scalar_loss(
    scores: &[f64],
    k: usize,
    none: usize,
    triples: &[Triple],
    relation_negatives: bool,
    form: LossForm,
) -> f64 {
    let neg = |x: f64| match form {
        LossForm::Standard => (1.0 - 1.0 / (1.0 + (-x).exp())).ln(),
        LossForm::AsPrinted => ln_sigmoid(1.0 - x),
    };
    let mut total = 0.0;
    for (p, t) in triples.iter().enumerate() {
        let s = |r: usize| scores[p * k + r];
        if t.positive {
            total += ln_sigmoid(s(t.relation)) + neg(s(none));
            if relation_negatives {
                total += (0..none).filter(|&r| r != t.relation).map(|r| neg(s(r))).sum::<f64>();
            }
        } else {
            total += neg(s(t.relation)) + ln_sigmoid(s(none));
        }
    }
    -total / triples.len() as f64
}
