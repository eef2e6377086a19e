//! End-to-end runs: split, build the training graph, train, evaluate.

use log::info;

use crate::config::{EvalMode, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, RuleClasses, RuleThresholds};
use crate::graph::{hidden_pois, Dataset, LabeledPair, PoiGraph, RawDataset};
use crate::model::{GraphContext, ModelConfig, ModelShape};
use crate::tensor::ParamStore;
use crate::training::{self, TrainOutcome, TrainSetup};

/// Split data plus the graph the model is allowed to see.
pub struct Prepared {
    pub dataset: Dataset,
    /// All POIs, training edges only.
    pub graph: PoiGraph,
    pub ctx: GraphContext,
    pub shape: ModelShape,
}

pub fn shape_of(graph: &PoiGraph, raw: &RawDataset) -> ModelShape {
    ModelShape {
        num_pois: graph.len(),
        num_tax_nodes: raw.taxonomy.len(),
        relations: graph.relations().clone(),
    }
}

pub fn prepare(raw: &RawDataset, cfg: &RunConfig) -> Result<Prepared> {
    let dataset = Dataset::split(raw, &cfg.split)?;
    let base = raw.graph(cfg.model.radius_km)?;
    let graph = base.with_edges(dataset.train_edges())?;
    let ctx = GraphContext::new(&graph, &raw.taxonomy, &cfg.model)?;
    let shape = shape_of(&graph, raw);
    Ok(Prepared {
        dataset,
        graph,
        ctx,
        shape,
    })
}

pub fn train_prepared(p: &Prepared, cfg: &RunConfig) -> Result<TrainOutcome> {
    let setup = TrainSetup {
        model: &cfg.model,
        shape: &p.shape,
        graph: &p.graph,
        ctx: &p.ctx,
        dataset: &p.dataset,
    };
    training::train(&setup, &cfg.train)
}

/// Training view for the inductive protocol: hidden POIs and everything
/// touching them removed.
pub struct InductiveSplit {
    pub hidden: Vec<usize>,
    pub visible: Prepared,
    /// Test pairs with at least one hidden endpoint, in full-graph ids.
    pub test: Vec<LabeledPair>,
    /// All POIs, training edges among visible POIs only.
    pub eval_graph: PoiGraph,
}

pub fn inductive_split(raw: &RawDataset, full: &Prepared, cfg: &RunConfig) -> Result<InductiveSplit> {
    let n = full.graph.len();
    let hidden = hidden_pois(n, cfg.eval.hidden_frac, cfg.split.seed);
    if hidden.is_empty() {
        return Err(Error::Eval("inductive mode hides no POIs; raise hidden_frac".into()));
    }
    let mut is_hidden = vec![false; n];
    hidden.iter().for_each(|&i| is_hidden[i] = true);
    let keep: Vec<usize> = (0..n).filter(|&i| !is_hidden[i]).collect();

    let (graph, map) = full.graph.induced(&keep, full.dataset.train_edges())?;
    let dataset = full.dataset.restrict(&map);
    let ctx = GraphContext::new(&graph, &raw.taxonomy, &cfg.model)?;
    let shape = shape_of(&graph, raw);

    let visible_edges = full
        .dataset
        .train_edges()
        .filter(|&(a, b, _)| !is_hidden[a] && !is_hidden[b]);
    let eval_graph = full.graph.with_edges(visible_edges.collect::<Vec<_>>())?;
    let test: Vec<LabeledPair> = full
        .dataset
        .test
        .iter()
        .copied()
        .filter(|p| is_hidden[p.src] || is_hidden[p.dst])
        .collect();
    if test.is_empty() {
        return Err(Error::Eval("no test pairs touch a hidden POI".into()));
    }
    Ok(InductiveSplit {
        hidden,
        visible: Prepared {
            dataset,
            graph,
            ctx,
            shape,
        },
        test,
        eval_graph,
    })
}

/// Pairs and graph an evaluation mode scores on.
pub struct EvalTarget {
    pub pairs: Vec<LabeledPair>,
    pub graph: PoiGraph,
}

pub fn eval_target(raw: &RawDataset, p: &Prepared, cfg: &RunConfig, mode: EvalMode) -> Result<EvalTarget> {
    Ok(match mode {
        EvalMode::Full => EvalTarget {
            pairs: p.dataset.test.clone(),
            graph: p.graph.clone(),
        },
        EvalMode::Sparse => EvalTarget {
            pairs: eval::sparse_pairs(&p.dataset.test, &p.graph, cfg.eval.sparse_min_degree)?,
            graph: p.graph.clone(),
        },
        EvalMode::Inductive => {
            let s = inductive_split(raw, p, cfg)?;
            EvalTarget {
                pairs: s.test,
                graph: s.eval_graph,
            }
        }
    })
}

/// Scores `target` with a trained model.
pub fn evaluate(
    label: &str,
    params: &ParamStore,
    model: &ModelConfig,
    raw: &RawDataset,
    target: &EvalTarget,
) -> Result<EvalReport> {
    let ctx = GraphContext::new(&target.graph, &raw.taxonomy, model)?;
    eval::evaluate_pairs(label, params, model, &ctx, &target.graph, &target.pairs)
}

/// Rule baseline tuned on validation pairs, reported on `test`.
pub struct RuleOutcome {
    pub thresholds: RuleThresholds,
    pub val_macro_f1: f64,
    pub report: EvalReport,
}

pub fn rule_baseline(raw: &RawDataset, p: &Prepared, test: &[LabeledPair], with_distance: bool) -> Result<RuleOutcome> {
    let classes = RuleClasses::from_graph(&p.graph)?;
    let names = eval::class_names(&p.graph);
    let grid = eval::rule_grid(2 * raw.taxonomy.max_depth(), with_distance);
    let val_feats = eval::rule_features(&p.graph, &raw.taxonomy, &p.dataset.val);
    let (th, f) = eval::grid_search(&grid, &classes, &val_feats, &p.dataset.val, names.len())?;
    let label = if with_distance { "CAT-D" } else { "CAT" };
    let feats = eval::rule_features(&p.graph, &raw.taxonomy, test);
    let report = eval::rule_report(label, &th, &classes, &feats, test, names)?;
    info!(
        "{label}: thresholds {th:?}, val macro-F1 {f:.4}, test macro-F1 {:.4}",
        report.macro_f1
    );
    Ok(RuleOutcome {
        thresholds: th,
        val_macro_f1: f,
        report,
    })
}

/// Everything one `train` invocation produces.
pub struct RunResult {
    pub prepared: Prepared,
    pub outcome: TrainOutcome,
    pub test: EvalReport,
}

/// Trains under `cfg.eval.mode` and reports on the matching test pairs.
pub fn run(raw: &RawDataset, cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let p = prepare(raw, cfg)?;
    match cfg.eval.mode {
        EvalMode::Inductive => {
            let s = inductive_split(raw, &p, cfg)?;
            let outcome = train_prepared(&s.visible, cfg)?;
            let target = EvalTarget {
                pairs: s.test,
                graph: s.eval_graph,
            };
            let test = evaluate("test/inductive", &outcome.params, &cfg.model, raw, &target)?;
            Ok(RunResult {
                prepared: p,
                outcome,
                test,
            })
        }
        mode => {
            let outcome = train_prepared(&p, cfg)?;
            let target = eval_target(raw, &p, cfg, mode)?;
            let test = eval::evaluate_pairs(
                &format!("test/{}", mode.as_str()),
                &outcome.params,
                &cfg.model,
                &p.ctx,
                &target.graph,
                &target.pairs,
            )?;
            Ok(RunResult {
                prepared: p,
                outcome,
                test,
            })
        }
    }
}
