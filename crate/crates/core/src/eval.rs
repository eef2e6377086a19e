//! Argmax inference, confusion matrices, F1 metrics and rule baselines.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::graph::{LabeledPair, PoiGraph, Taxonomy};
use crate::model::{self, argmax, GraphContext, ModelConfig, PairBatch};
use crate::tensor::ParamStore;

/// Counts over scored classes; rows are truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let k = rows.len();
        assert!(rows.iter().all(|r| r.len() == k), "square matrix");
        Self {
            k,
            counts: rows.concat(),
        }
    }

    pub fn from_labels(k: usize, truth: &[usize], pred: &[usize]) -> Self {
        let mut cm = Self::new(k);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.add(t, p);
        }
        cm
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.k + pred] += 1;
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::Eval("empty confusion matrix".into()))
        } else {
            Ok(())
        }
    }

    /// Per-class F1; a class with no true and no predicted instances scores 0.
    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let tp = self.get(c, c) as f64;
                let support: u64 = (0..self.k).map(|p| self.get(c, p)).sum();
                let predicted: u64 = (0..self.k).map(|t| self.get(t, c)).sum();
                let denom = (support + predicted) as f64;
                if denom == 0.0 {
                    0.0
                } else {
                    2.0 * tp / denom
                }
            })
            .collect()
    }

    pub fn macro_f1(&self) -> Result<f64> {
        self.ensure_nonempty()?;
        let f = self.per_class_f1();
        Ok(f.iter().sum::<f64>() / self.k as f64)
    }

    /// Pooled F1, which for single-label data is the accuracy.
    pub fn micro_f1(&self) -> Result<f64> {
        self.ensure_nonempty()?;
        let tp: u64 = (0..self.k).map(|c| self.get(c, c)).sum();
        let fp = self.total() - tp;
        let fneg = fp;
        Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
    }

    pub fn accuracy(&self) -> Result<f64> {
        self.ensure_nonempty()?;
        let tp: u64 = (0..self.k).map(|c| self.get(c, c)).sum();
        Ok(tp as f64 / self.total() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

impl EvalReport {
    pub fn from_confusion(label: impl Into<String>, class_names: Vec<String>, cm: ConfusionMatrix) -> Result<Self> {
        let macro_f1 = cm.macro_f1()?;
        let micro_f1 = cm.micro_f1()?;
        debug_assert!((micro_f1 - cm.accuracy()?).abs() < 1e-12);
        Ok(Self {
            label: label.into(),
            class_names,
            per_class_f1: cm.per_class_f1(),
            confusion: cm,
            macro_f1,
            micro_f1,
        })
    }

    pub fn total(&self) -> u64 {
        self.confusion.total()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("key\tvalue\n");
        writeln!(s, "label\t{}", self.label).unwrap();
        writeln!(s, "pairs\t{}", self.total()).unwrap();
        writeln!(s, "macro_f1\t{}", self.macro_f1).unwrap();
        writeln!(s, "micro_f1\t{}", self.micro_f1).unwrap();
        for (name, f) in self.class_names.iter().zip(&self.per_class_f1) {
            writeln!(s, "f1.{name}\t{f}").unwrap();
        }
        for (t, tn) in self.class_names.iter().enumerate() {
            for (p, pn) in self.class_names.iter().enumerate() {
                writeln!(s, "confusion.{tn}.{pn}\t{}", self.confusion.get(t, p)).unwrap();
            }
        }
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: {} pairs", self.label, self.total())?;
        writeln!(f, "  Macro-F1 {:.4}  Micro-F1 {:.4}", self.macro_f1, self.micro_f1)?;
        for (name, v) in self.class_names.iter().zip(&self.per_class_f1) {
            writeln!(f, "  F1[{name}] {v:.4}")?;
        }
        let w = self.class_names.iter().map(String::len).max().unwrap_or(4).max(6);
        write!(f, "  {:>w$}", "truth\\pred")?;
        for n in &self.class_names {
            write!(f, " {n:>w$}")?;
        }
        writeln!(f)?;
        for (t, n) in self.class_names.iter().enumerate() {
            write!(f, "  {n:>w$}")?;
            for p in 0..self.class_names.len() {
                write!(f, " {:>w$}", self.confusion.get(t, p))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// One prediction: the argmax class and its score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub relation: usize,
    pub score: f64,
}

/// Argmax over scored relations for each pair, ties to the lowest id.
pub fn predict(
    params: &ParamStore,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    graph: &PoiGraph,
    pairs: &[(usize, usize)],
) -> Result<Vec<Prediction>> {
    let k = graph.relations().num_scored();
    let batch = PairBatch::new(graph, &cfg.bins, pairs.iter().copied())?;
    let scores = model::predict_scores(params, cfg, ctx, k, &batch)?;
    Ok(scores
        .chunks(k)
        .map(|row| {
            let r = argmax(row);
            Prediction {
                relation: r,
                score: row[r],
            }
        })
        .collect())
}

/// Scores labelled pairs and assembles a report.
pub fn evaluate_pairs(
    label: &str,
    params: &ParamStore,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    graph: &PoiGraph,
    pairs: &[LabeledPair],
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Eval(format!("{label}: no pairs to evaluate")));
    }
    let k = graph.relations().num_scored();
    let xy: Vec<(usize, usize)> = pairs.iter().map(|p| (p.src, p.dst)).collect();
    let preds = predict(params, cfg, ctx, graph, &xy)?;
    let mut cm = ConfusionMatrix::new(k);
    for (p, pr) in pairs.iter().zip(&preds) {
        cm.add(p.relation, pr.relation);
    }
    EvalReport::from_confusion(label, class_names(graph), cm)
}

pub fn class_names(graph: &PoiGraph) -> Vec<String> {
    graph.relations().scored_names().into_iter().map(String::from).collect()
}

/// Pairs with at least one endpoint having fewer than `min_degree`
/// relationships in `train_graph`.
pub fn sparse_pairs(pairs: &[LabeledPair], train_graph: &PoiGraph, min_degree: usize) -> Result<Vec<LabeledPair>> {
    let out: Vec<LabeledPair> = pairs
        .iter()
        .copied()
        .filter(|p| train_graph.degree(p.src) < min_degree || train_graph.degree(p.dst) < min_degree)
        .collect();
    if out.is_empty() {
        return Err(Error::Eval(format!(
            "sparse split is empty: every evaluated POI has at least {min_degree} training relationships"
        )));
    }
    Ok(out)
}

/// Predicts the most frequent class of `pairs` for every pair.
pub fn majority_baseline(pairs: &[LabeledPair], k: usize, class_names: Vec<String>) -> Result<EvalReport> {
    let mut counts = vec![0usize; k];
    pairs.iter().for_each(|p| counts[p.relation] += 1);
    let majority = argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
    let mut cm = ConfusionMatrix::new(k);
    pairs.iter().for_each(|p| cm.add(p.relation, majority));
    EvalReport::from_confusion("majority", class_names, cm)
}

/// Threshold rules on taxonomy path distance (and geographic distance for `CAT-D`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RuleThresholds {
    /// Competitive when path distance ≤ `tau_c` (`None` disables).
    pub tau_c: Option<usize>,
    /// Complementary when path distance ≤ `tau_m`.
    pub tau_m: Option<usize>,
    /// CAT-D: competitive additionally requires distance ≤ `tau_d` km.
    pub tau_d: Option<f64>,
}

/// Relation ids the rules emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RuleClasses {
    pub competitive: usize,
    pub complementary: usize,
    pub none: usize,
}

impl RuleClasses {
    pub fn from_graph(graph: &PoiGraph) -> Result<Self> {
        let r = graph.relations();
        let find = |n: &str| {
            r.id(n)
                .ok_or_else(|| Error::Eval(format!("rule baselines need a relation named {n:?}")))
        };
        Ok(Self {
            competitive: find("competitive")?,
            complementary: find("complementary")?,
            none: r.none_id(),
        })
    }
}

pub fn rule_predict(th: &RuleThresholds, classes: &RuleClasses, path_dist: usize, dist_km: f64) -> usize {
    let within = |t: Option<usize>| t.is_some_and(|t| path_dist <= t);
    if within(th.tau_c) && th.tau_d.is_none_or(|d| dist_km <= d) {
        classes.competitive
    } else if within(th.tau_m) {
        classes.complementary
    } else {
        classes.none
    }
}

/// Per-pair features the rules look at.
pub fn rule_features(graph: &PoiGraph, taxonomy: &Taxonomy, pairs: &[LabeledPair]) -> Vec<(usize, f64)> {
    pairs
        .iter()
        .map(|p| {
            let (a, b) = (graph.poi(p.src).category, graph.poi(p.dst).category);
            (taxonomy.path_distance(a, b), graph.distance_km(p.src, p.dst))
        })
        .collect()
}

pub fn rule_report(
    label: &str,
    th: &RuleThresholds,
    classes: &RuleClasses,
    features: &[(usize, f64)],
    pairs: &[LabeledPair],
    class_names: Vec<String>,
) -> Result<EvalReport> {
    let mut cm = ConfusionMatrix::new(class_names.len());
    for (p, &(pd, d)) in pairs.iter().zip(features) {
        cm.add(p.relation, rule_predict(th, classes, pd, d));
    }
    EvalReport::from_confusion(label, class_names, cm)
}

/// Candidate thresholds: path distances `None, 0..=max_path` and, for CAT-D,
/// distances in 0.25 km steps up to 10 km.
pub fn rule_grid(max_path: usize, with_distance: bool) -> Vec<RuleThresholds> {
    let taus: Vec<Option<usize>> = std::iter::once(None).chain((0..=max_path).map(Some)).collect();
    let dists: Vec<Option<f64>> = if with_distance {
        (1..=40).map(|k| Some(0.25 * k as f64)).collect()
    } else {
        vec![None]
    };
    let mut grid = Vec::new();
    for &tau_c in &taus {
        for &tau_m in &taus {
            for &tau_d in &dists {
                grid.push(RuleThresholds { tau_c, tau_m, tau_d });
            }
        }
    }
    grid
}

/// Best thresholds on validation Macro-F1 (first maximum in grid order).
pub fn grid_search(
    grid: &[RuleThresholds],
    classes: &RuleClasses,
    features: &[(usize, f64)],
    pairs: &[LabeledPair],
    k: usize,
) -> Result<(RuleThresholds, f64)> {
    let mut best: Option<(RuleThresholds, f64)> = None;
    for th in grid {
        let mut cm = ConfusionMatrix::new(k);
        for (p, &(pd, d)) in pairs.iter().zip(features) {
            cm.add(p.relation, rule_predict(th, classes, pd, d));
        }
        let f = cm.macro_f1()?;
        if best.is_none_or(|(_, b)| f > b) {
            best = Some((*th, f));
        }
    }
    best.ok_or_else(|| Error::Eval("empty threshold grid".into()))
}
