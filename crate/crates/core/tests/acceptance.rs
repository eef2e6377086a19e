//! End-to-end acceptance suite. Prints one `[PASS]`/`[FAIL]` line per
//! criterion and exits nonzero if any fails.

mod common;

use std::collections::HashSet;
use std::time::Instant;

use common::{dense_scores, dense_wrgnn, five_poi, max_abs_diff, scalar_loss};
use poirel::checkpoint::{Checkpoint, Vocabulary};
use poirel::config::{EvalMode, RunConfig};
use poirel::eval;
use poirel::experiment;
use poirel::graph::{CoordMode, Poi, PoiGraph, RawDataset, Triple};
use poirel::model::{self, scoring, spatial_context, Ablations, GammaScope, GraphContext, NodeInit, PairBatch};
use poirel::model_check::{model_gradcheck, tiny_instance};
use poirel::synth::{generate, verify_stats, SynthConfig};
use poirel::tensor::{Tape, Tensor};
use poirel::training::{batch_loss, history_tsv, loss_terms, LossForm};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1. gradient fidelity

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for rn in [true, false] {
        let inst = tiny_instance(6, 2, 1).map_err(err)?;
        if inst.graph.relations().num_data() != 2 {
            return Err("tiny instance should carry two relations".into());
        }
        let report = model_gradcheck(&inst, rn, 1e-4).map_err(err)?;
        worst = worst.max(report.max_rel_err());
        failures.extend(report.failures().map(|f| f.name.clone()));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        failures.is_empty() && secs < 60.0,
        format!("max relative error {worst:.2e}, {secs:.1}s, failing params {failures:?}"),
    )
}

// 2. invariants over randomized instances

fn invariant_suite() -> Outcome {
    const CASES: u64 = 120;
    let mut worst_alpha = 0.0f64;
    let mut worst_beta = 0.0f64;
    let mut worst_proj = 0.0f64;
    let mut worst_perm = 0.0f64;
    let mut asymmetric = 0;
    for case in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let n = rng.gen_range(4..10);
        let mut inst = tiny_instance(n, 2, 5000 + case).map_err(err)?;
        inst.cfg.radius_km = 1.2;
        let ctx = GraphContext::new(&inst.graph, &inst.taxonomy, &inst.cfg).map_err(err)?;

        let mut tape = Tape::new();
        let b = inst.params.bind(&mut tape);
        let q = model::taxonomy_encoder::category_repr(&mut tape, &b, &ctx, false).map_err(err)?;
        let h0 = model::initial_states(&mut tape, &b, &inst.cfg, &ctx, q).map_err(err)?;
        let rel = b.var("rel").map_err(err)?;
        let out = model::wrgnn::forward(&mut tape, &b, &inst.cfg, &ctx, h0, q, rel).map_err(err)?;
        for &alpha in &out.alphas {
            let a = tape.value(alpha);
            for i in 0..n {
                for pos in 0..ctx.structural.len() {
                    let es = ctx.segment_edges(i, pos);
                    if es.is_empty() {
                        continue;
                    }
                    for k in 0..inst.cfg.heads {
                        let s: f64 = es.clone().map(|e| a.at(e, k)).sum();
                        worst_alpha = worst_alpha.max((s - 1.0).abs());
                    }
                }
            }
        }
        let s = spatial_context::spatial_context(&mut tape, &b, &inst.cfg, &ctx, out.h).map_err(err)?;
        if let Some(beta) = s.beta {
            let beta = tape.value(beta).data();
            let mut sums = vec![0.0; n];
            let mut seen = vec![false; n];
            for (p, &i) in ctx.sp_i.iter().enumerate() {
                sums[i] += beta[p];
                seen[i] = true;
            }
            for i in (0..n).filter(|&i| seen[i]) {
                worst_beta = worst_beta.max((sums[i] - 1.0).abs());
            }
        }

        // projection onto each bin's hyperplane
        let d = rng.gen_range(2..10);
        let rows = rng.gen_range(1..8);
        let h = Tensor::matrix(rows, d, (0..rows * d).map(|_| rng.gen_range(-3.0..3.0)).collect()).map_err(err)?;
        let normals = Tensor::matrix(3, d, (0..3 * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).map_err(err)?;
        let bins: std::rc::Rc<[usize]> = (0..rows).map(|_| rng.gen_range(0..3)).collect();
        let mut tape = Tape::new();
        let hv = tape.constant(h);
        let nv = tape.constant(normals);
        let u = tape.normalize_rows(nv).map_err(err)?;
        let once = scoring::project(&mut tape, hv, u, bins.clone()).map_err(err)?;
        let twice = scoring::project(&mut tape, once, u, bins.clone()).map_err(err)?;
        let (p1, p2, un) = (tape.value(once), tape.value(twice), tape.value(u));
        for r in 0..rows {
            let along: f64 = p1.row(r).iter().zip(un.row(bins[r])).map(|(a, b)| a * b).sum();
            worst_proj = worst_proj.max(along.abs());
            for c in 0..d {
                worst_proj = worst_proj.max((p1.at(r, c) - p2.at(r, c)).abs());
            }
        }

        // symmetry
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        let batch = PairBatch::new(&inst.graph, &inst.cfg.bins, pairs.iter().copied()).map_err(err)?;
        let k = inst.graph.relations().num_scored();
        let fwd = model::predict_scores(&inst.params, &inst.cfg, &ctx, k, &batch).map_err(err)?;
        let rev = model::predict_scores(&inst.params, &inst.cfg, &ctx, k, &batch.swapped()).map_err(err)?;
        if fwd.iter().zip(&rev).any(|(a, b)| a.to_bits() != b.to_bits()) {
            asymmetric += 1;
        }

        // relabel POIs and shuffle the edge list
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut pois: Vec<Option<Poi>> = vec![None; n];
        for (old, p) in inst.graph.pois().iter().enumerate() {
            pois[perm[old]] = Some(Poi {
                id: perm[old],
                ..p.clone()
            });
        }
        let pois: Vec<Poi> = pois.into_iter().flatten().collect();
        let rels = inst.graph.relations();
        let mut edges = Vec::new();
        for r in 0..rels.num_data() {
            for a in 0..n {
                edges.extend(
                    inst.graph
                        .neighbors(r, a)
                        .iter()
                        .filter(|&&b| a < b)
                        .map(|&b| (perm[b], perm[a], r)),
                );
            }
        }
        edges.shuffle(&mut rng);
        let g2 = PoiGraph::new(CoordMode::Planar, pois, rels.clone(), edges, 1.0).map_err(err)?;
        let ctx2 = GraphContext::new(&g2, &inst.taxonomy, &inst.cfg).map_err(err)?;
        let mut params2 = inst.params.clone();
        if let Ok(free) = inst.params.get("free") {
            let d = free.cols();
            let mut moved = vec![0.0; free.numel()];
            for old in 0..n {
                moved[perm[old] * d..(perm[old] + 1) * d].copy_from_slice(free.row(old));
            }
            *params2.get_mut("free").map_err(err)? = Tensor::matrix(n, d, moved).map_err(err)?;
        }
        let encode = |params: &poirel::tensor::ParamStore, ctx: &GraphContext| -> Result<Tensor, String> {
            let mut tape = Tape::new();
            let b = params.bind(&mut tape);
            let enc = model::encode(&mut tape, &b, &inst.cfg, ctx).map_err(err)?;
            Ok(tape.value(enc.h_graph).clone())
        };
        let (h1, h2) = (encode(&inst.params, &ctx)?, encode(&params2, &ctx2)?);
        for old in 0..n {
            for c in 0..h1.cols() {
                let (x, y) = (h1.at(old, c), h2.at(perm[old], c));
                worst_perm = worst_perm.max((x - y).abs() / (1.0 + x.abs()));
            }
        }
    }
    check(
        worst_alpha <= 1e-12 && worst_beta <= 1e-12 && worst_proj <= 1e-12 && asymmetric == 0 && worst_perm <= 1e-12,
        format!(
            "{CASES} instances: |Σα-1| {worst_alpha:.1e}, |Σβ-1| {worst_beta:.1e}, projection {worst_proj:.1e}, \
             asymmetric {asymmetric}, relabeling {worst_perm:.1e}"
        ),
    )
}

// 3. dense oracle

fn oracle_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for (seed, gamma, init) in [
        (1, GammaScope::GraphPart, NodeInit::Taxonomy),
        (2, GammaScope::Full, NodeInit::TaxonomyFree),
        (3, GammaScope::Full, NodeInit::Taxonomy),
    ] {
        let inst = five_poi(gamma, init, seed);
        let dense = dense_wrgnn(&inst.params, &inst.cfg, &inst.graph, &inst.taxonomy);
        let mut tape = Tape::new();
        let b = inst.params.bind(&mut tape);
        let enc = model::encode(&mut tape, &b, &inst.cfg, &inst.ctx).map_err(err)?;
        for i in 0..5 {
            worst = worst.max(max_abs_diff(tape.value(enc.h_graph).row(i), &dense.h[i]));
        }
        let pairs: Vec<(usize, usize)> = (0..5)
            .flat_map(|a| (0..5).filter(move |&b| b != a).map(move |b| (a, b)))
            .collect();
        let want = dense_scores(&inst.params, &inst.cfg, &inst.graph, &dense, &pairs);
        let k = inst.graph.relations().num_scored();
        let batch = PairBatch::new(&inst.graph, &inst.cfg.bins, pairs.iter().copied()).map_err(err)?;
        let got = model::predict_scores(&inst.params, &inst.cfg, &inst.ctx, k, &batch).map_err(err)?;
        for (row, w) in got.chunks(k).zip(&want) {
            worst = worst.max(max_abs_diff(row, w));
        }
    }

    let inst = five_poi(GammaScope::Full, NodeInit::TaxonomyFree, 8);
    let rels = inst.graph.relations();
    let (none, k) = (rels.none_id(), rels.num_scored());
    let triples = [
        Triple {
            src: 0,
            dst: 1,
            relation: 0,
            positive: true,
        },
        Triple {
            src: 0,
            dst: 3,
            relation: 0,
            positive: false,
        },
        Triple {
            src: 2,
            dst: 4,
            relation: 1,
            positive: true,
        },
        Triple {
            src: 4,
            dst: 1,
            relation: 1,
            positive: false,
        },
    ];
    let batch = PairBatch::new(&inst.graph, &inst.cfg.bins, triples.iter().map(|t| (t.src, t.dst))).map_err(err)?;
    let scores = model::predict_scores(&inst.params, &inst.cfg, &inst.ctx, k, &batch).map_err(err)?;
    let mut loss_err = 0.0f64;
    for rn in [true, false] {
        let want = scalar_loss(&scores, k, none, &triples, rn, LossForm::Standard);
        let mut tape = Tape::new();
        let b = inst.params.bind(&mut tape);
        let enc = model::encode(&mut tape, &b, &inst.cfg, &inst.ctx).map_err(err)?;
        let s = model::score_pairs(&mut tape, &b, &inst.cfg, &enc, k, &batch).map_err(err)?;
        let loss = batch_loss(
            &mut tape,
            s,
            &loss_terms(&triples, none, rn),
            triples.len(),
            LossForm::Standard,
        )
        .map_err(err)?;
        loss_err = loss_err.max((tape.value(loss).item() - want).abs());
    }
    check(
        worst <= 1e-12 && loss_err <= 1e-12,
        format!("forward and scores max error {worst:.1e}, 4-triple loss error {loss_err:.1e}"),
    )
}

// 4. planted recovery

fn planted_recovery(raw: &RawDataset) -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.train.time_budget_secs = Some(540.0);
    let start = Instant::now();
    let result = experiment::run(raw, &cfg).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let p = &result.prepared;
    let cat = experiment::rule_baseline(raw, p, &p.dataset.test, false).map_err(err)?;
    let cat_d = experiment::rule_baseline(raw, p, &p.dataset.test, true).map_err(err)?;
    let f1 = result.test.macro_f1;
    let (c, cd) = (cat.report.macro_f1, cat_d.report.macro_f1);
    check(
        raw.edges.len() >= 15000 && f1 >= 0.75 && f1 - c >= 0.05 && f1 - cd >= 0.05 && secs <= 600.0,
        format!(
            "{} edges, test Macro-F1 {f1:.4} (CAT {c:.4}, CAT-D {cd:.4}), best epoch {}, {secs:.0}s",
            raw.edges.len(),
            result.outcome.best_epoch
        ),
    )
}

// 5. ablation ordering

/// Zones whose theme marks them busy or quiet; inside a zone the theme flips
/// the balance between competitive and complementary links.
fn zoned_city(seed: u64) -> SynthConfig {
    let mut s = SynthConfig::default();
    for (k, v) in [
        ("n_pois", "1000"),
        ("side_km", "22"),
        ("depth", "4"),
        ("branching", "4"),
        ("zone_level", "1"),
        ("zones", "10"),
        ("zone_affinity", "0.5"),
        ("zone_boost", "0"),
        ("zone_mix", "3"),
        ("competitive", "7.0,2.75,1.2"),
        ("complementary", "11.0,3.0,1.2"),
        ("min_edges", "0"),
    ] {
        s.set(k, v).expect("known synth key");
    }
    s.seed = seed;
    s
}

fn ablation_ordering() -> Outcome {
    const VARIANTS: [&str; 5] = ["", "T", "S", "D", "DST"];
    let seeds = [1, 2, 3];
    let mut mean = [0.0; 5];
    for &seed in &seeds {
        let raw = generate(&zoned_city(seed)).map_err(err)?.dataset;
        for (v, abl) in VARIANTS.iter().enumerate() {
            let mut cfg = RunConfig::default();
            cfg.train.max_epochs = 20;
            cfg.model.ablations = Ablations::parse(abl).map_err(err)?;
            let f1 = experiment::run(&raw, &cfg).map_err(err)?.test.macro_f1;
            mean[v] += f1 / seeds.len() as f64;
        }
    }
    let [full, t, s, d, dst] = mean;
    check(
        full >= t && full >= s && full >= d && t >= dst && s >= dst && d >= dst && full - d >= 0.03,
        format!("mean Macro-F1 over 3 seeds: full {full:.4}, -T {t:.4}, -S {s:.4}, -D {d:.4}, -DST {dst:.4}"),
    )
}

// 6. inductive

fn inductive(raw: &RawDataset) -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.model.node_init = NodeInit::Taxonomy;
    cfg.eval.mode = EvalMode::Inductive;
    cfg.eval.hidden_frac = 0.2;
    let result = experiment::run(raw, &cfg).map_err(err)?;
    let p = &result.prepared;
    let split = experiment::inductive_split(raw, p, &cfg).map_err(err)?;
    let k = p.graph.relations().num_scored();
    let majority = eval::majority_baseline(&split.test, k, eval::class_names(&p.graph)).map_err(err)?;
    let (f1, base) = (result.test.macro_f1, majority.macro_f1);
    check(
        f1 - base >= 0.15,
        format!(
            "{} hidden POIs, {} test pairs: Macro-F1 {f1:.4} vs majority {base:.4}",
            split.hidden.len(),
            split.test.len()
        ),
    )
}

// 7. scaling

fn mean_epoch_seconds(raw: &RawDataset) -> Result<f64, String> {
    let mut cfg = RunConfig::default();
    cfg.train.max_epochs = 3;
    cfg.train.patience = 3;
    // One mini-batch per epoch, so an epoch is exactly one full-graph pass.
    cfg.train.batch_size = raw.edges.len();
    let p = experiment::prepare(raw, &cfg).map_err(err)?;
    let out = experiment::train_prepared(&p, &cfg).map_err(err)?;
    Ok(out.history.iter().map(|h| h.seconds).sum::<f64>() / out.history.len() as f64)
}

fn linear_scaling() -> Outcome {
    let mut s = SynthConfig::default();
    s.n_pois = 800;
    s.side_km = 25.0;
    s.min_edges = 0;
    let double = generate(&s).map_err(err)?.dataset;
    let mut single = double.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    single.edges.shuffle(&mut rng);
    single.edges.truncate(double.edges.len() / 2);
    let (t1, t2) = (mean_epoch_seconds(&single)?, mean_epoch_seconds(&double)?);
    let ratio = t2 / t1;
    check(
        ratio <= 2.5,
        format!(
            "n {}: {} edges {t1:.2}s/epoch, {} edges {t2:.2}s/epoch, ratio {ratio:.2}",
            double.pois.len(),
            single.edges.len(),
            double.edges.len()
        ),
    )
}

// 8. calibration

fn calibration(raw: &RawDataset) -> Outcome {
    let report = verify_stats(raw);
    let detail: Vec<String> = report
        .checks
        .iter()
        .map(|c| {
            format!(
                "{} {:.3}{}",
                c.name,
                c.value,
                if c.passed() { "" } else { " (out of band)" }
            )
        })
        .collect();
    check(report.passed(), detail.join(", "))
}

// 9. determinism and persistence

fn determinism() -> Outcome {
    let mut s = SynthConfig::default();
    s.n_pois = 300;
    s.side_km = 12.0;
    s.min_edges = 0;
    let raw = generate(&s).map_err(err)?.dataset;
    let mut cfg = RunConfig::default();
    cfg.train.max_epochs = 3;
    cfg.train.log_seconds = false;

    let dir = tempfile::tempdir().map_err(err)?;
    let mut files = Vec::new();
    let mut last = None;
    for run in 0..2 {
        let result = experiment::run(&raw, &cfg).map_err(err)?;
        let path = dir.path().join(format!("history{run}.tsv"));
        std::fs::write(&path, history_tsv(&result.outcome.history, cfg.train.log_seconds)).map_err(err)?;
        files.push(std::fs::read(&path).map_err(err)?);
        last = Some(result);
    }
    let same_history = files[0] == files[1];

    let result = last.expect("two runs");
    let p = &result.prepared;
    let ckpt = Checkpoint {
        config: cfg.clone(),
        vocab: Vocabulary::of(&p.graph, &raw.taxonomy, cfg.model.bins.bounds()),
        params: result.outcome.params.clone(),
    };
    let path = dir.path().join("checkpoint.bin");
    ckpt.save(&path).map_err(err)?;
    let loaded = Checkpoint::load(&path).map_err(err)?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    while pairs.len() < 100 {
        let (a, b) = (rng.gen_range(0..raw.pois.len()), rng.gen_range(0..raw.pois.len()));
        if a != b && seen.insert((a, b)) {
            pairs.push((a, b));
        }
    }
    let k = p.graph.relations().num_scored();
    let batch = PairBatch::new(&p.graph, &cfg.model.bins, pairs.iter().copied()).map_err(err)?;
    let before = model::predict_scores(&ckpt.params, &cfg.model, &p.ctx, k, &batch).map_err(err)?;
    let after = model::predict_scores(&loaded.params, &loaded.config.model, &p.ctx, k, &batch).map_err(err)?;
    let bits = |c: &Checkpoint| -> Vec<(String, Vec<usize>, Vec<u64>)> {
        c.params
            .iter()
            .map(|(n, t)| {
                (
                    n.to_string(),
                    t.shape().to_vec(),
                    t.data().iter().map(|x| x.to_bits()).collect(),
                )
            })
            .collect()
    };
    let restored = loaded.config == ckpt.config && loaded.vocab == ckpt.vocab && bits(&loaded) == bits(&ckpt);
    let identical = before.len() == after.len() && before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits());
    check(
        same_history && restored && identical,
        format!(
            "history files identical: {same_history}; checkpoint restored: {restored}; {} pairs x {k} scores bit-identical after reload: {identical}",
            pairs.len()
        ),
    )
}

fn main() {
    let default_data = generate(&SynthConfig::default()).expect("default generation").dataset;
    let criteria: [(&str, Box<dyn Fn() -> Outcome>); 9] = [
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("invariant suite", Box::new(invariant_suite)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("planted recovery", Box::new(|| planted_recovery(&default_data))),
        ("ablation ordering", Box::new(ablation_ordering)),
        ("inductive capability", Box::new(|| inductive(&default_data))),
        ("linear scaling", Box::new(linear_scaling)),
        ("synthetic calibration", Box::new(|| calibration(&default_data))),
        ("determinism and persistence", Box::new(determinism)),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (tag, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {id}. {name}: {detail} ({:.0}s)", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
