//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
//! Progress goes to standard error through `log`; results go to standard
//! output and to files under the workspace.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::attack::{build_adversarial_dataset, AttackConfig};
use crate::data::{load_idx, make_synthetic, DatasetRef, Provenance};
use crate::defense::{adversarial_train, DefenseConfig};
use crate::error::{Error, Result};
use crate::monitor::{evaluate_accuracy, DEFAULT_THRESHOLD};
use crate::nn::{train, Architecture, Model, Optimizer, TrainConfig};
use crate::orchestrator::{
    run_grid, run_scenario, write_csv, ModelRole, NewModel, ScenarioConfig, Workspace, REFERENCE_GRID,
};

#[derive(Debug, Parser)]
#[command(name = "robustops", version, about = "Closed-loop FGSM attack and PGD defense pipeline")]
pub struct Cli {
    /// Seed for model initialization, shuffling and PGD random starts.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root directory for the registry, model volume and all outputs.
    #[arg(long, global = true)]
    pub workspace: Option<PathBuf>,
    /// Flat JSON manifest; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import MNIST IDX files (plain or gzipped) into the registry.
    IngestMnist(IngestArgs),
    /// Generate synthetic train and test splits into the registry.
    MakeSynthetic(SyntheticArgs),
    /// Train a baseline model and store it in the volume.
    Train(TrainArgs),
    /// Upload an FGSM dataset crafted against a stored model.
    Attack(AttackArgs),
    /// Adversarially fine-tune a stored baseline.
    Defend(DefendArgs),
    /// Print a model's accuracy (percent) on a dataset.
    Eval(EvalArgs),
    /// Normal usage, attack and triggered defense in one run.
    RunScenario(ScenarioArgs),
    /// Sweep (attack ε, defense ϵ) pairs.
    RunGrid(GridArgs),
    /// Dataset registry commands.
    #[command(subcommand)]
    Registry(ListCommand),
    /// Model volume commands.
    #[command(subcommand)]
    Volume(ListCommand),
}

#[derive(Debug, Subcommand)]
pub enum ListCommand {
    /// List entries.
    Ls,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory with the four standard MNIST files; imports both splits
    /// as `mnist-train` and `mnist-test`.
    #[arg(long, conflicts_with_all = ["images", "labels"])]
    pub dir: Option<PathBuf>,
    #[arg(long, requires = "labels")]
    pub images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    pub labels: Option<PathBuf>,
    /// Registry name for a single `--images/--labels` pair.
    #[arg(long, default_value = "mnist")]
    pub name: String,
    #[arg(long, default_value = "1")]
    pub version: String,
    /// Keep only the first N samples of each split.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Splits are stored as `<name>-train` and `<name>-test`.
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    #[arg(long, default_value = "1")]
    pub version: String,
}

/// Settings shared by every command that trains, attacks or defends.
#[derive(Debug, Args, Default)]
pub struct ScenarioFlags {
    /// Clean training split, `name:version`.
    #[arg(long)]
    pub train_data: Option<String>,
    /// Clean evaluation split, `name:version`.
    #[arg(long)]
    pub eval_data: Option<String>,
    /// `small-cnn` or `mlp[-HIDDEN]`.
    #[arg(long)]
    pub architecture: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub attack_epsilon: Option<f64>,
    #[arg(long)]
    pub defense_epsilon: Option<f64>,
    #[arg(long)]
    pub defense_alpha: Option<f64>,
    #[arg(long)]
    pub pgd_steps: Option<usize>,
    #[arg(long)]
    pub defense_epochs: Option<usize>,
    #[arg(long)]
    pub defense_learning_rate: Option<f64>,
    /// `true` or `false`.
    #[arg(long)]
    pub random_start: Option<bool>,
    /// Monitor trigger threshold in percentage points.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: ScenarioFlags,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: String,
    /// Clean dataset to perturb, `name:version`.
    #[arg(long)]
    pub dataset: String,
    #[command(flatten)]
    pub flags: ScenarioFlags,
}

#[derive(Debug, Args)]
pub struct DefendArgs {
    /// Baseline model id.
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub flags: ScenarioFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub dataset: String,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[command(flatten)]
    pub flags: ScenarioFlags,
    /// Results CSV, relative to the workspace.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Event log, relative to the workspace.
    #[arg(long)]
    pub event_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub flags: ScenarioFlags,
    /// Comma-separated `attack:defense` pairs; defaults to the nine
    /// reference cells.
    #[arg(long)]
    pub pairs: Option<String>,
    /// Worker threads for independent cells.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Results CSV, relative to the workspace.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Flat JSON run manifest. Every key is optional; unknown keys are errors.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub workspace: Option<PathBuf>,
    pub seed: Option<u64>,
    pub train_data: Option<String>,
    pub eval_data: Option<String>,
    pub architecture: Option<String>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub attack_epsilon: Option<f64>,
    pub defense_epsilon: Option<f64>,
    pub defense_alpha: Option<f64>,
    pub pgd_steps: Option<usize>,
    pub defense_epochs: Option<usize>,
    pub defense_learning_rate: Option<f64>,
    pub random_start: Option<bool>,
    pub threshold: Option<f64>,
    pub pairs: Option<Vec<(f64, f64)>>,
    pub parallel: Option<usize>,
    pub output: Option<PathBuf>,
    pub event_log: Option<PathBuf>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::validation(format!("manifest {} not found", path.display())),
            _ => Error::io(path.display().to_string(), e),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::validation(format!("manifest {}: {e}", path.display())))
    }
}

/// Fully resolved settings for one invocation.
struct Context {
    ws: Workspace,
    seed: u64,
    manifest: Manifest,
}

impl Context {
    /// Resolves a workspace-relative output path, refusing anything that
    /// would escape the workspace.
    fn output_path(&self, flag: Option<&PathBuf>, manifest: Option<&PathBuf>, default: &str) -> Result<PathBuf> {
        let rel = flag.or(manifest).cloned().unwrap_or_else(|| PathBuf::from(default));
        let escapes = rel
            .components()
            .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir));
        if escapes || rel.as_os_str().is_empty() {
            return Err(Error::validation(format!(
                "output path {} must be relative and stay inside the workspace",
                rel.display()
            )));
        }
        Ok(self.ws.root().join(rel))
    }

    fn scenario(&self, f: &ScenarioFlags) -> Result<ScenarioConfig> {
        let m = &self.manifest;
        let pick = |flag: &Option<String>, man: &Option<String>, default: &str| {
            flag.clone().or_else(|| man.clone()).unwrap_or_else(|| default.to_string())
        };
        let train_data: DatasetRef = pick(&f.train_data, &m.train_data, "mnist-train:1").parse()?;
        let eval_data: DatasetRef = pick(&f.eval_data, &m.eval_data, "mnist-test:1").parse()?;
        let architecture: Architecture = pick(&f.architecture, &m.architecture, "small-cnn").parse()?;
        let base_train = TrainConfig::default();
        let base_defense = DefenseConfig::default();
        let train = TrainConfig {
            epochs: f.epochs.or(m.epochs).unwrap_or(base_train.epochs),
            learning_rate: f.learning_rate.or(m.learning_rate).unwrap_or(base_train.learning_rate),
            batch_size: f.batch_size.or(m.batch_size).unwrap_or(base_train.batch_size),
            seed: self.seed,
            optimizer: Optimizer::Adam,
        };
        let attack = AttackConfig {
            seed: self.seed,
            ..AttackConfig::new(f.attack_epsilon.or(m.attack_epsilon).unwrap_or(0.25))
        };
        let defense = DefenseConfig {
            epsilon_budget: f.defense_epsilon.or(m.defense_epsilon).unwrap_or(base_defense.epsilon_budget),
            step_size_alpha: f.defense_alpha.or(m.defense_alpha).unwrap_or(base_defense.step_size_alpha),
            pgd_steps_k: f.pgd_steps.or(m.pgd_steps).unwrap_or(base_defense.pgd_steps_k),
            epochs: f.defense_epochs.or(m.defense_epochs).unwrap_or(base_defense.epochs),
            learning_rate: f
                .defense_learning_rate
                .or(m.defense_learning_rate)
                .unwrap_or(base_defense.learning_rate),
            random_start: f.random_start.or(m.random_start).unwrap_or(base_defense.random_start),
            seed: self.seed,
            batch_size: f.batch_size.or(m.batch_size).unwrap_or(base_defense.batch_size),
        };
        let cfg = ScenarioConfig {
            train_data,
            eval_data,
            architecture,
            train,
            attack,
            defense,
            threshold_points: f.threshold.or(m.threshold).unwrap_or(DEFAULT_THRESHOLD),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn require_dataset(&self, r: &DatasetRef) -> Result<()> {
        self.ws.registry.entry(&r.name, &r.version).map(|_| ())
    }
}

fn parse_pairs(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|pair| {
            let (a, d) = pair
                .split_once(':')
                .ok_or_else(|| Error::validation(format!("pair {pair:?} must be attack:defense")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::validation(format!("{v:?} in pair {pair:?}: {e}")))
            };
            Ok((num(a)?, num(d)?))
        })
        .collect()
}

/// Runs one parsed command, writing machine-readable output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let manifest = match &cli.config {
        Some(p) => Manifest::load(p)?,
        None => Manifest::default(),
    };
    let root = cli
        .workspace
        .clone()
        .or_else(|| manifest.workspace.clone())
        .unwrap_or_else(|| PathBuf::from("workspace"));
    let ctx = Context {
        ws: Workspace::new(root),
        seed: cli.seed.or(manifest.seed).unwrap_or(0),
        manifest,
    };
    let print = |out: &mut dyn Write, text: String| {
        writeln!(out, "{text}").map_err(|e| Error::io("standard output", e))
    };

    match cli.command {
        Command::IngestMnist(a) => {
            let sets: Vec<(PathBuf, PathBuf, String)> = match (&a.dir, &a.images, &a.labels) {
                (Some(dir), _, _) => {
                    let find = |stem: &str| {
                        let gz = dir.join(format!("{stem}.gz"));
                        if gz.exists() {
                            gz
                        } else {
                            dir.join(stem)
                        }
                    };
                    vec![
                        (
                            find("train-images-idx3-ubyte"),
                            find("train-labels-idx1-ubyte"),
                            "mnist-train".to_string(),
                        ),
                        (
                            find("t10k-images-idx3-ubyte"),
                            find("t10k-labels-idx1-ubyte"),
                            "mnist-test".to_string(),
                        ),
                    ]
                }
                (None, Some(i), Some(l)) => vec![(i.clone(), l.clone(), a.name.clone())],
                _ => return Err(Error::validation("give either --dir or --images with --labels")),
            };
            for (images, labels, name) in sets {
                for p in [&images, &labels] {
                    if !p.exists() {
                        return Err(Error::validation(format!("{} does not exist", p.display())));
                    }
                }
                let mut d = load_idx(&images, &labels)?.with_identity(name, a.version.clone());
                if let Some(n) = a.limit {
                    d = d.take(n)?;
                }
                let e = ctx.ws.registry.put(&d)?;
                print(out, format!("{} {} samples", e.reference(), d.len()))?;
            }
        }
        Command::MakeSynthetic(a) => {
            for (split, n, seed) in [
                ("train", a.per_class, ctx.seed),
                ("test", a.test_per_class, ctx.seed.wrapping_add(1)),
            ] {
                let d = make_synthetic(n, a.classes, seed)?.with_identity(format!("{}-{split}", a.name), a.version.clone());
                let e = ctx.ws.registry.put(&d)?;
                print(out, format!("{} {} samples", e.reference(), d.len()))?;
            }
        }
        Command::Train(a) => {
            let cfg = ctx.scenario(&a.flags)?;
            ctx.require_dataset(&cfg.train_data)?;
            ctx.require_dataset(&cfg.eval_data)?;
            let data = ctx.ws.registry.get_ref(&cfg.train_data)?;
            let eval = ctx.ws.registry.get_ref(&cfg.eval_data)?;
            let model = train(&Model::new(cfg.architecture, cfg.seed)?, &data, &cfg.train)?.model;
            let alpha = evaluate_accuracy(&model, &eval)?;
            let rec = ctx.ws.volume.store(NewModel {
                role: ModelRole::Baseline,
                model,
                baseline_accuracy: alpha,
                train_config: Some(cfg.train.clone()),
                defense_config: None,
                parent_model_id: None,
            })?;
            print(out, rec.meta.model_id)?;
        }
        Command::Attack(a) => {
            let cfg = ctx.scenario(&a.flags)?;
            let target: DatasetRef = a.dataset.parse()?;
            ctx.require_dataset(&target)?;
            let model = ctx.ws.volume.load(&a.model)?.model;
            let clean = ctx.ws.registry.get_ref(&target)?;
            let adv = build_adversarial_dataset(&model, &clean, &cfg.attack)?;
            let e = ctx.ws.registry.put(&adv)?;
            print(out, e.reference().to_string())?;
        }
        Command::Defend(a) => {
            let cfg = ctx.scenario(&a.flags)?;
            ctx.require_dataset(&cfg.train_data)?;
            ctx.require_dataset(&cfg.eval_data)?;
            let base = ctx.ws.volume.load(&a.model)?;
            if base.meta.role != ModelRole::Baseline {
                return Err(Error::validation(format!("{} is not a baseline model", a.model)));
            }
            let data = ctx.ws.registry.get_ref(&cfg.train_data)?;
            let eval = ctx.ws.registry.get_ref(&cfg.eval_data)?;
            let hardened = adversarial_train(&base.model, &data, &cfg.defense)?.model;
            let clean = evaluate_accuracy(&hardened, &eval)?;
            let rec = ctx.ws.volume.store(NewModel {
                role: ModelRole::Hardened,
                model: hardened,
                baseline_accuracy: clean,
                train_config: None,
                defense_config: Some(cfg.defense.clone()),
                parent_model_id: Some(a.model.clone()),
            })?;
            print(out, rec.meta.model_id)?;
        }
        Command::Eval(a) => {
            let target: DatasetRef = a.dataset.parse()?;
            let model = ctx.ws.volume.load(&a.model)?.model;
            let data = ctx.ws.registry.get_ref(&target)?;
            print(out, format!("{:.2}", 100.0 * evaluate_accuracy(&model, &data)?))?;
        }
        Command::RunScenario(a) => {
            let cfg = ctx.scenario(&a.flags)?;
            let csv = ctx.output_path(a.output.as_ref(), ctx.manifest.output.as_ref(), "results/scenario.csv")?;
            let log = ctx.output_path(
                a.event_log.as_ref(),
                ctx.manifest.event_log.as_ref(),
                "events/scenario.jsonl",
            )?;
            ctx.require_dataset(&cfg.train_data)?;
            ctx.require_dataset(&cfg.eval_data)?;
            let outcome = run_scenario(&ctx.ws, &cfg, &log)?;
            write_csv(&csv, &[outcome.row])?;
            print(out, crate::orchestrator::to_csv(&[outcome.row]).trim_end().to_string())?;
        }
        Command::RunGrid(a) => {
            let cfg = ctx.scenario(&a.flags)?;
            let pairs = match (&a.pairs, &ctx.manifest.pairs) {
                (Some(s), _) => parse_pairs(s)?,
                (None, Some(p)) => p.clone(),
                (None, None) => REFERENCE_GRID.to_vec(),
            };
            let parallel = a.parallel.or(ctx.manifest.parallel).unwrap_or(1);
            if parallel == 0 {
                return Err(Error::validation("--parallel must be at least 1"));
            }
            let csv = ctx.output_path(a.output.as_ref(), ctx.manifest.output.as_ref(), "results/grid.csv")?;
            ctx.require_dataset(&cfg.train_data)?;
            ctx.require_dataset(&cfg.eval_data)?;
            let outcome = run_grid(&ctx.ws, &cfg, &pairs, parallel)?;
            write_csv(&csv, &outcome.rows)?;
            print(out, crate::orchestrator::to_csv(&outcome.rows).trim_end().to_string())?;
        }
        Command::Registry(ListCommand::Ls) => {
            for e in ctx.ws.registry.list()? {
                let kind = match e.provenance {
                    Provenance::Clean => "clean",
                    Provenance::Adversarial => "adversarial",
                };
                print(out, format!("{}\t{kind}\t{}", e.reference(), e.checksum))?;
            }
        }
        Command::Volume(ListCommand::Ls) => {
            for m in ctx.ws.volume.list()? {
                print(
                    out,
                    format!(
                        "{}\t{}\t{}\t{:.2}\t{}",
                        m.model_id,
                        m.role,
                        m.architecture,
                        100.0 * m.baseline_accuracy,
                        m.parent_model_id.as_deref().unwrap_or("-")
                    ),
                )?;
            }
        }
    }
    Ok(())
}

/// Parses `argv`, runs the command and maps the outcome to an exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
