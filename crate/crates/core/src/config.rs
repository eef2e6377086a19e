//! Flat `key = value` run configuration covering every module's knobs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{DistanceBins, SplitConfig};
use crate::model::{Ablations, GammaScope, ModelConfig, NodeInit};
use crate::training::{LossForm, TrainConfig};

/// Evaluation protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Full,
    Sparse,
    Inductive,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Full => "full",
            EvalMode::Sparse => "sparse",
            EvalMode::Inductive => "inductive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(EvalMode::Full),
            "sparse" => Some(EvalMode::Sparse),
            "inductive" => Some(EvalMode::Inductive),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub mode: EvalMode,
    /// Fraction of POIs hidden from training in inductive mode.
    pub hidden_frac: f64,
    /// Sparse mode keeps pairs touching a POI with fewer training relationships than this.
    pub sparse_min_degree: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Full,
            hidden_frac: 0.2,
            sparse_min_degree: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub eval: EvalConfig,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn choice<T>(key: &str, v: &str, parsed: Option<T>, allowed: &str) -> Result<T> {
    parsed.ok_or_else(|| Error::Config(format!("{key}: {v:?} is not one of {allowed}")))
}

impl RunConfig {
    /// Every key in echo order.
    pub const KEYS: &'static [&'static str] = &[
        "d_p",
        "d_c",
        "heads",
        "layers",
        "d_att",
        "d_dfeat",
        "rbf_centers",
        "rbf_width",
        "leaky_slope",
        "radius_km",
        "theta",
        "bins",
        "node_init",
        "gamma_scope",
        "ablate",
        "omega",
        "batch_size",
        "lr",
        "max_epochs",
        "patience",
        "seed",
        "loss_form",
        "relation_negatives",
        "log_seconds",
        "time_budget_secs",
        "mask_targets",
        "train_frac",
        "val_frac",
        "none_ratio",
        "split_seed",
        "eval_mode",
        "hidden_frac",
        "sparse_min_degree",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        match key.trim() {
            "d_p" => m.d_p = parse_num(key, v)?,
            "d_c" => m.d_c = parse_num(key, v)?,
            "heads" => m.heads = parse_num(key, v)?,
            "layers" => m.layers = parse_num(key, v)?,
            "d_att" => m.d_att = parse_num(key, v)?,
            "d_dfeat" => m.d_dfeat = parse_num(key, v)?,
            "rbf_centers" => m.rbf_centers = parse_list(key, v)?,
            "rbf_width" => m.rbf_width = parse_num(key, v)?,
            "leaky_slope" => m.leaky_slope = parse_num(key, v)?,
            "radius_km" => m.radius_km = parse_num(key, v)?,
            "theta" => m.theta = parse_num(key, v)?,
            "bins" => m.bins = DistanceBins::new(parse_list(key, v)?)?,
            "node_init" => m.node_init = choice(key, v, NodeInit::parse(v), "taxonomy, free, taxonomy+free")?,
            "gamma_scope" => m.gamma_scope = choice(key, v, GammaScope::parse(v), "graph_part, full")?,
            "ablate" => m.ablations = Ablations::parse(v)?,
            "omega" => t.omega = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "lr" => t.lr = parse_num(key, v)?,
            "max_epochs" => t.max_epochs = parse_num(key, v)?,
            "patience" => t.patience = parse_num(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "loss_form" => t.loss_form = choice(key, v, LossForm::parse(v), "standard, as_printed")?,
            "relation_negatives" => t.relation_negatives = parse_bool(key, v)?,
            "log_seconds" => t.log_seconds = parse_bool(key, v)?,
            "time_budget_secs" => {
                let s: f64 = parse_num(key, v)?;
                t.time_budget_secs = (s > 0.0).then_some(s);
            }
            "mask_targets" => t.mask_targets = parse_bool(key, v)?,
            "train_frac" => self.split.train_frac = parse_num(key, v)?,
            "val_frac" => self.split.val_frac = parse_num(key, v)?,
            "none_ratio" => self.split.none_ratio = parse_num(key, v)?,
            "split_seed" => self.split.seed = parse_num(key, v)?,
            "eval_mode" => self.eval.mode = choice(key, v, EvalMode::parse(v), "full, sparse, inductive")?,
            "hidden_frac" => self.eval.hidden_frac = parse_num(key, v)?,
            "sparse_min_degree" => self.eval.sparse_min_degree = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (m, t) = (&self.model, &self.train);
        Some(match key {
            "d_p" => m.d_p.to_string(),
            "d_c" => m.d_c.to_string(),
            "heads" => m.heads.to_string(),
            "layers" => m.layers.to_string(),
            "d_att" => m.d_att.to_string(),
            "d_dfeat" => m.d_dfeat.to_string(),
            "rbf_centers" => list(&m.rbf_centers),
            "rbf_width" => m.rbf_width.to_string(),
            "leaky_slope" => m.leaky_slope.to_string(),
            "radius_km" => m.radius_km.to_string(),
            "theta" => m.theta.to_string(),
            "bins" => list(m.bins.bounds()),
            "node_init" => m.node_init.as_str().into(),
            "gamma_scope" => m.gamma_scope.as_str().into(),
            "ablate" => m.ablations.label(),
            "omega" => t.omega.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => t.lr.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "patience" => t.patience.to_string(),
            "seed" => t.seed.to_string(),
            "loss_form" => t.loss_form.as_str().into(),
            "relation_negatives" => t.relation_negatives.to_string(),
            "log_seconds" => t.log_seconds.to_string(),
            "time_budget_secs" => t.time_budget_secs.unwrap_or(0.0).to_string(),
            "mask_targets" => t.mask_targets.to_string(),
            "train_frac" => self.split.train_frac.to_string(),
            "val_frac" => self.split.val_frac.to_string(),
            "none_ratio" => self.split.none_ratio.to_string(),
            "split_seed" => self.split.seed.to_string(),
            "eval_mode" => self.eval.mode.as_str().into(),
            "hidden_frac" => self.eval.hidden_frac.to_string(),
            "sparse_min_degree" => self.eval.sparse_min_degree.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, sets: &[S]) -> Result<()> {
        for s in sets {
            let s = s.as_ref();
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        if !(0.0..1.0).contains(&self.eval.hidden_frac) {
            return Err(Error::Config("hidden_frac must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Every key with its effective value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            writeln!(s, "{k} = {}", self.get(k).expect("listed key")).unwrap();
        }
        s
    }
}
