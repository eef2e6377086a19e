use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use poirel::checkpoint::{Checkpoint, Vocabulary};
use poirel::config::{EvalMode, RunConfig};
use poirel::eval::{self, EvalReport};
use poirel::experiment::{self, EvalTarget, Prepared};
use poirel::graph::RawDataset;
use poirel::model::{Ablations, GraphContext};
use poirel::model_check;
use poirel::synth::{self, SynthConfig};
use poirel::training::history_tsv;

#[derive(Parser)]
#[command(
    name = "poirel",
    version,
    about = "Typed relationship inference between points of interest"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, history and effective config.
    Train {
        /// Directory holding pois.tsv, taxonomy.tsv and edges.tsv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Flat `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one key, e.g. `--set lr=0.005`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Evaluate a checkpoint on the test pairs of its split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// full, sparse or inductive.
        #[arg(long, default_value = "full")]
        mode: String,
        /// Extra ablations applied at evaluation time (S, D); T must match training.
        #[arg(long, default_value = "")]
        ablate: String,
        /// Also report the CAT, CAT-D and majority-class baselines.
        #[arg(long)]
        baselines: bool,
        /// Write the report TSV here as well as printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the relation of each `src dst` line of a pairs file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic city with planted relationships.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Compare autodiff gradients of the full model with finite differences.
    Gradcheck {
        /// tiny (6 POIs, 2 layers) or small (12 POIs, 3 layers).
        #[arg(long, default_value = "tiny")]
        scale: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn run_config(config: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(sets)?;
    Ok(cfg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn train(data: &Path, out: &Path, config: Option<&Path>, sets: &[String]) -> Result<()> {
    let cfg = run_config(config, sets)?;
    let raw = RawDataset::load_dir(data)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("config.txt"), cfg.to_text())?;

    let result = experiment::run(&raw, &cfg)?;
    let vocab = Vocabulary::of(&result.prepared.graph, &raw.taxonomy, cfg.model.bins.bounds());
    write(
        &out.join("history.tsv"),
        history_tsv(&result.outcome.history, cfg.train.log_seconds),
    )?;
    Checkpoint {
        config: cfg.clone(),
        vocab,
        params: result.outcome.params,
    }
    .save(&out.join("checkpoint.bin"))?;
    write(&out.join("report.tsv"), result.test.to_tsv())?;
    println!("best epoch {}", result.outcome.best_epoch);
    print!("{}", result.test);
    Ok(())
}

/// Checkpoint, data and split reassembled for scoring.
struct Loaded {
    cfg: RunConfig,
    ckpt: Checkpoint,
    raw: RawDataset,
    prepared: Prepared,
}

fn load(checkpoint: &Path, data: &Path, ablate: &str) -> Result<Loaded> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut cfg = ckpt.config.clone();
    let extra = Ablations::parse(ablate)?;
    if extra.no_taxonomy && !cfg.model.ablations.no_taxonomy {
        bail!("--ablate T changes the architecture; the checkpoint was trained with taxonomy embeddings");
    }
    cfg.model.ablations.no_spatial |= extra.no_spatial;
    cfg.model.ablations.no_distance |= extra.no_distance;

    let raw = RawDataset::load_dir(data)?;
    let prepared = experiment::prepare(&raw, &cfg)?;
    Vocabulary::of(&prepared.graph, &raw.taxonomy, cfg.model.bins.bounds()).check(&ckpt.vocab)?;
    Ok(Loaded {
        cfg,
        ckpt,
        raw,
        prepared,
    })
}

/// The graph the checkpoint's own protocol scores with.
fn target(l: &Loaded, mode: EvalMode) -> Result<EvalTarget> {
    if mode == EvalMode::Inductive && l.cfg.eval.mode != EvalMode::Inductive {
        log::warn!(
            "checkpoint was trained in {} mode; hidden POIs were visible during training",
            l.cfg.eval.mode.as_str()
        );
    }
    Ok(experiment::eval_target(&l.raw, &l.prepared, &l.cfg, mode)?)
}

fn evaluate(
    checkpoint: &Path,
    data: &Path,
    mode: &str,
    ablate: &str,
    baselines: bool,
    out: Option<&Path>,
) -> Result<()> {
    let mode =
        EvalMode::parse(mode).with_context(|| format!("invalid mode {mode:?}; expected full, sparse or inductive"))?;
    let l = load(checkpoint, data, ablate)?;
    let t = target(&l, mode)?;
    let mut reports = vec![experiment::evaluate(
        &format!("test/{}", mode.as_str()),
        &l.ckpt.params,
        &l.cfg.model,
        &l.raw,
        &t,
    )?];
    if baselines {
        let names = eval::class_names(&l.prepared.graph);
        for with_distance in [false, true] {
            reports.push(experiment::rule_baseline(&l.raw, &l.prepared, &t.pairs, with_distance)?.report);
        }
        reports.push(eval::majority_baseline(&t.pairs, names.len(), names)?);
    }
    let tsv: String = reports.iter().map(EvalReport::to_tsv).collect();
    if let Some(out) = out {
        write(out, &tsv)?;
    }
    reports.iter().for_each(|r| print!("{r}"));
    Ok(())
}

fn read_pairs(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pairs = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ids: Vec<usize> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}:{}: expected two POI ids", path.display(), k + 1))?;
        match ids[..] {
            [a, b] if a < n && b < n && a != b => pairs.push((a, b)),
            [a, b] if a == b => bail!("{}:{}: a POI cannot be paired with itself", path.display(), k + 1),
            [_, _] => bail!(
                "{}:{}: POI id out of range (dataset has {n} POIs)",
                path.display(),
                k + 1
            ),
            _ => bail!("{}:{}: expected two POI ids", path.display(), k + 1),
        }
    }
    Ok(pairs)
}

fn predict(checkpoint: &Path, data: &Path, pairs: &Path, out: Option<&Path>) -> Result<()> {
    let l = load(checkpoint, data, "")?;
    let graph = match l.cfg.eval.mode {
        EvalMode::Inductive => target(&l, EvalMode::Inductive)?.graph,
        _ => l.prepared.graph.clone(),
    };
    let pairs = read_pairs(pairs, graph.len())?;
    let mut text = String::new();
    if !pairs.is_empty() {
        let ctx = GraphContext::new(&graph, &l.raw.taxonomy, &l.cfg.model)?;
        let preds = eval::predict(&l.ckpt.params, &l.cfg.model, &ctx, &graph, &pairs)?;
        let names = eval::class_names(&graph);
        for (&(a, b), p) in pairs.iter().zip(&preds) {
            text.push_str(&format!("{a}\t{b}\t{}\t{}\n", names[p.relation], p.score));
        }
    }
    match out {
        Some(out) => write(out, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn synthesize(out: &Path, config: Option<&Path>, sets: &[String]) -> Result<()> {
    let mut cfg = match config {
        Some(p) => SynthConfig::from_text(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SynthConfig::default(),
    };
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .with_context(|| format!("override {s:?} is not key=value"))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let generated = synth::generate(&cfg)?;
    generated.dataset.write_dir(out)?;
    info!(
        "planted {} edges after {} attempt(s)",
        generated.dataset.edges.len(),
        generated.attempts
    );
    print!("{}", synth::verify_stats(&generated.dataset));
    Ok(())
}

fn gradcheck(scale: &str, seed: u64, tolerance: f64) -> Result<()> {
    let (n, layers) = match scale {
        "tiny" => (6, 2),
        "small" => (12, 3),
        other => bail!("unknown scale {other:?}; expected tiny or small"),
    };
    let inst = model_check::tiny_instance(n, layers, seed)?;
    let report = model_check::model_gradcheck(&inst, true, tolerance)?;
    print!("{report}");
    if !report.passed() {
        bail!(
            "gradient check failed: max relative error {:.3e} exceeds {tolerance:e}",
            report.max_rel_err()
        );
    }
    println!(
        "passed: {} parameters, max relative error {:.3e}",
        report.params.len(),
        report.max_rel_err()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train {
            data,
            out,
            config,
            sets,
        } => train(data, out, config.as_deref(), sets),
        Command::Eval {
            checkpoint,
            data,
            mode,
            ablate,
            baselines,
            out,
        } => evaluate(checkpoint, data, mode, ablate, *baselines, out.as_deref()),
        Command::Predict {
            checkpoint,
            data,
            pairs,
            out,
        } => predict(checkpoint, data, pairs, out.as_deref()),
        Command::Synth { out, config, sets } => synthesize(out, config.as_deref(), sets),
        Command::Gradcheck { scale, seed, tolerance } => gradcheck(scale, *seed, *tolerance),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
