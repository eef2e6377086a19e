//! Negative sampling, the binary cross-entropy objective, and the training loop.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::rc::Rc;
use std::time::Instant;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::evaluate_pairs;
use crate::graph::dataset::key;
use crate::graph::{Dataset, PoiGraph, Triple};
use crate::model::{self, GraphContext, ModelConfig, ModelShape, PairBatch};
use crate::tensor::{AdamConfig, AdamState, ParamStore, Tape, Tensor, Var};

/// How a `y = 0` term is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossForm {
    /// `-log(1 - σ(s))`.
    Standard,
    /// `-log σ(1 - s)`, the literal printed variant.
    AsPrinted,
}

impl LossForm {
    pub fn as_str(self) -> &'static str {
        match self {
            LossForm::Standard => "standard",
            LossForm::AsPrinted => "as_printed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "standard" => Some(LossForm::Standard),
            "as_printed" => Some(LossForm::AsPrinted),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Negatives per positive.
    pub omega: usize,
    /// Positive triples per mini-batch; each brings its `omega` negatives.
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss_form: LossForm,
    /// Positives also push down the scores of the other data relations.
    pub relation_negatives: bool,
    /// Record wall-clock seconds in the history (otherwise `NA`).
    pub log_seconds: bool,
    /// Stop early once this many seconds of training have elapsed.
    pub time_budget_secs: Option<f64>,
    /// Hide each batch's positive pairs from message passing while they are scored.
    pub mask_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            omega: 5,
            batch_size: 512,
            lr: 1e-3,
            max_epochs: 100,
            patience: 10,
            seed: 7,
            loss_form: LossForm::Standard,
            relation_negatives: true,
            log_seconds: true,
            time_budget_secs: None,
            mask_targets: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Which endpoint a negative replaced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Src,
    Dst,
}

/// Corrupts one endpoint of a positive, avoiding self pairs and known positives.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    n: usize,
    positives: HashSet<(usize, usize, usize)>,
    /// Samples accepted after exhausting the resampling budget.
    pub exhausted: usize,
    pub replaced_src: usize,
    pub replaced_dst: usize,
}

pub const MAX_RESAMPLE: usize = 100;

impl NegativeSampler {
    pub fn new(n: usize, positives: HashSet<(usize, usize, usize)>) -> Self {
        Self {
            n,
            positives,
            exhausted: 0,
            replaced_src: 0,
            replaced_dst: 0,
        }
    }

    pub fn is_positive(&self, a: usize, b: usize, r: usize) -> bool {
        let (x, y) = key(a, b);
        self.positives.contains(&(x, y, r))
    }

    pub fn sample_one<R: Rng>(&mut self, pos: &Triple, rng: &mut R) -> (Triple, Side) {
        let mut last = None;
        for _ in 0..MAX_RESAMPLE {
            let side = if rng.gen::<bool>() { Side::Src } else { Side::Dst };
            let x = rng.gen_range(0..self.n);
            let (src, dst) = match side {
                Side::Src => (x, pos.dst),
                Side::Dst => (pos.src, x),
            };
            let t = Triple {
                src,
                dst,
                relation: pos.relation,
                positive: false,
            };
            last = Some((t, side));
            if src != dst && !self.is_positive(src, dst, pos.relation) {
                return self.count(t, side);
            }
        }
        self.exhausted += 1;
        let (t, side) = last.expect("at least one attempt");
        self.count(t, side)
    }

    fn count(&mut self, t: Triple, side: Side) -> (Triple, Side) {
        match side {
            Side::Src => self.replaced_src += 1,
            Side::Dst => self.replaced_dst += 1,
        }
        (t, side)
    }

    pub fn sample<R: Rng>(&mut self, pos: &Triple, omega: usize, rng: &mut R) -> Vec<Triple> {
        (0..omega).map(|_| self.sample_one(pos, rng).0).collect()
    }
}

/// One `ℓ(y, s)` term: the score of `relation` on triple `pair`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerm {
    pub pair: usize,
    pub relation: usize,
    pub label: bool,
}

/// Terms for a batch of triples. A positive `(i, r, j)` gives `y = 1` on `r`
/// and `y = 0` on the non-relation class; a negative gives `y = 0` on `r` and
/// `y = 1` on the non-relation class. With `relation_negatives`, positives
/// also give `y = 0` on every other data relation.
pub fn loss_terms(triples: &[Triple], none: usize, relation_negatives: bool) -> Vec<LossTerm> {
    let mut terms = Vec::with_capacity(triples.len() * 2);
    for (pair, t) in triples.iter().enumerate() {
        terms.push(LossTerm {
            pair,
            relation: t.relation,
            label: t.positive,
        });
        terms.push(LossTerm {
            pair,
            relation: none,
            label: !t.positive,
        });
        if relation_negatives && t.positive {
            for r in (0..none).filter(|&r| r != t.relation) {
                terms.push(LossTerm {
                    pair,
                    relation: r,
                    label: false,
                });
            }
        }
    }
    terms
}

/// `-(1/|B|) Σ [y log σ(s) + (1 - y) log(1 - σ(s))]` over `terms`, where
/// `|B|` is the number of triples. `scores` is `[|B|, R*]`.
pub fn batch_loss(tape: &mut Tape, scores: Var, terms: &[LossTerm], n_triples: usize, form: LossForm) -> Result<Var> {
    let k = tape.value(scores).cols();
    let idx: Rc<[usize]> = terms.iter().map(|t| t.pair * k + t.relation).collect();
    let s = tape.pick(scores, idx)?;
    let (sign, offset): (Vec<f64>, Vec<f64>) = terms
        .iter()
        .map(|t| match (t.label, form) {
            (true, _) => (1.0, 0.0),
            (false, LossForm::Standard) => (-1.0, 0.0),
            (false, LossForm::AsPrinted) => (-1.0, 1.0),
        })
        .unzip();
    let sign = tape.constant(Tensor::vector(sign)?);
    let offset = tape.constant(Tensor::vector(offset)?);
    let z = tape.mul(s, sign)?;
    let z = tape.add(z, offset)?;
    let ls = tape.log_sigmoid(z);
    let total = tape.sum(ls);
    Ok(tape.scale(total, -1.0 / n_triples as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub val_micro_f1: f64,
    pub seconds: f64,
}

pub fn history_tsv(history: &[EpochRecord], log_seconds: bool) -> String {
    let mut s = String::from("epoch\ttrain_loss\tval_macro_f1\tval_micro_f1\tseconds\n");
    for r in history {
        let secs = if log_seconds {
            format!("{:.3}", r.seconds)
        } else {
            "NA".to_string()
        };
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            r.epoch, r.train_loss, r.val_macro_f1, r.val_micro_f1, secs
        )
        .unwrap();
    }
    s
}

/// Everything the loop needs besides its own config.
pub struct TrainSetup<'a> {
    pub model: &'a ModelConfig,
    pub shape: &'a ModelShape,
    /// Graph holding training edges only.
    pub graph: &'a PoiGraph,
    pub ctx: &'a GraphContext,
    pub dataset: &'a Dataset,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub exhausted_negatives: usize,
}

/// Loss and gradients of one batch; parameter grads are overwritten.
pub fn batch_step(
    params: &mut ParamStore,
    setup: &TrainSetup<'_>,
    ctx: &GraphContext,
    cfg: &TrainConfig,
    triples: &[Triple],
) -> Result<f64> {
    let none = setup.graph.relations().none_id();
    let k = setup.graph.relations().num_scored();
    let pairs = PairBatch::new(setup.graph, &setup.model.bins, triples.iter().map(|t| (t.src, t.dst)))?;
    let terms = loss_terms(triples, none, cfg.relation_negatives);

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let enc = model::encode(&mut tape, &bound, setup.model, ctx)?;
    let scores = model::score_pairs(&mut tape, &bound, setup.model, &enc, k, &pairs)?;
    let loss = batch_loss(&mut tape, scores, &terms, triples.len(), cfg.loss_form)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        let s = tape.value(scores);
        let bad = triples
            .iter()
            .enumerate()
            .find(|(p, _)| s.row(*p).iter().any(|x| !x.is_finite()))
            .map(|(_, t)| *t)
            .or(triples.first().copied());
        return Err(Error::Diverged(format!("non-finite loss {value}; triple {bad:?}")));
    }
    let grads = tape.backward(loss)?;
    params.zero_grad();
    params.accumulate(&grads, &bound);
    Ok(value)
}

pub fn train(setup: &TrainSetup<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = model::init_params(setup.model, setup.shape, cfg.seed)?;
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut sampler = NegativeSampler::new(setup.graph.len(), setup.dataset.train_positive_set());
    if cfg.omega == 0 {
        warn!("omega = 0: training on positive terms only");
    }

    let mut history = Vec::new();
    let mut best = (params.clone(), f64::NEG_INFINITY, 0usize);
    let mut since_best = 0;
    let started = Instant::now();
    let positives = &setup.dataset.train;
    let mut order: Vec<usize> = (0..positives.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut triples = Vec::with_capacity(chunk.len() * (1 + cfg.omega));
            for &i in chunk {
                let pos = positives[i];
                triples.push(pos);
                triples.extend(sampler.sample(&pos, cfg.omega, &mut rng));
            }
            if cfg!(debug_assertions) && sampler.exhausted == 0 {
                debug_assert!(triples
                    .iter()
                    .filter(|t| !t.positive)
                    .all(|t| t.src != t.dst && !sampler.is_positive(t.src, t.dst, t.relation)));
            }
            let masked;
            let ctx = if cfg.mask_targets {
                let targets: HashSet<(usize, usize)> =
                    chunk.iter().map(|&i| key(positives[i].src, positives[i].dst)).collect();
                masked = setup.ctx.without_pairs(&targets)?;
                &masked
            } else {
                setup.ctx
            };
            let loss = batch_step(&mut params, setup, ctx, cfg, &triples).map_err(|e| match e {
                Error::Diverged(m) => Error::Diverged(format!("epoch {epoch}, step {b}: {m}")),
                other => other,
            })?;
            adam.step(&mut params)?;
            loss_sum += loss;
            batches += 1;
        }
        let seconds = t0.elapsed().as_secs_f64();
        let (val_macro, val_micro) = if setup.dataset.val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let r = evaluate_pairs(
                "validation",
                &params,
                setup.model,
                setup.ctx,
                setup.graph,
                &setup.dataset.val,
            )?;
            (r.macro_f1, r.micro_f1)
        };
        let rec = EpochRecord {
            epoch,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            val_macro_f1: val_macro,
            val_micro_f1: val_micro,
            seconds,
        };
        info!(
            "epoch {epoch}: loss {:.5} val macro-F1 {:.4} micro-F1 {:.4} ({seconds:.1}s)",
            rec.train_loss, val_macro, val_micro
        );
        history.push(rec);

        if val_macro.is_nan() || val_macro > best.1 {
            best = (params.clone(), val_macro, epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                debug!("early stop at epoch {epoch}; best epoch {}", best.2);
                break;
            }
        }
        if cfg
            .time_budget_secs
            .is_some_and(|b| started.elapsed().as_secs_f64() >= b)
        {
            info!("time budget reached after epoch {epoch}");
            break;
        }
    }
    if sampler.exhausted > 0 {
        warn!(
            "{} negatives accepted after {MAX_RESAMPLE} resampling attempts",
            sampler.exhausted
        );
    }
    Ok(TrainOutcome {
        params: best.0,
        history,
        best_epoch: best.2,
        exhausted_negatives: sampler.exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(src: usize, dst: usize, relation: usize) -> Triple {
        Triple {
            src,
            dst,
            relation,
            positive: true,
        }
    }

    #[test]
    fn degenerate_pool_exhausts_with_warning() {
        // 2 POIs: the only pair is the positive itself
        let mut s = NegativeSampler::new(2, [(0, 1, 0)].into_iter().collect());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let negs = s.sample(&pos(0, 1, 0), 1, &mut rng);
        assert_eq!(negs.len(), 1);
        assert_eq!(s.exhausted, 1);
    }

    #[test]
    fn omega_negatives_with_label_zero() {
        let mut s = NegativeSampler::new(50, [(0, 1, 1)].into_iter().collect());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let negs = s.sample(&pos(0, 1, 1), 5, &mut rng);
        assert_eq!(negs.len(), 5);
        for n in negs {
            assert!(!n.positive && n.relation == 1 && n.src != n.dst);
            assert!(n.src == 0 || n.dst == 1);
            assert!(!s.is_positive(n.src, n.dst, 1));
        }
    }

    #[test]
    fn terms_cover_none_class() {
        let mut neg = pos(0, 2, 1);
        neg.positive = false;
        let t = loss_terms(&[pos(0, 1, 1), neg], 2, false);
        assert_eq!(t.len(), 4);
        assert_eq!(
            t[1],
            LossTerm {
                pair: 0,
                relation: 2,
                label: false
            }
        );
        assert_eq!(
            t[3],
            LossTerm {
                pair: 1,
                relation: 2,
                label: true
            }
        );
        assert_eq!(loss_terms(&[pos(0, 1, 1)], 2, true).len(), 3);
    }

    #[test]
    fn history_format() {
        let h = vec![EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_macro_f1: 0.25,
            val_micro_f1: 0.75,
            seconds: 1.23456,
        }];
        assert_eq!(
            history_tsv(&h, true),
            "epoch\ttrain_loss\tval_macro_f1\tval_micro_f1\tseconds\n1\t0.5\t0.25\t0.75\t1.235\n"
        );
        assert!(history_tsv(&h, false).ends_with("\tNA\n"));
    }
}
