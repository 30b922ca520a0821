//! Attack/defense budget sweeps and the results table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};

use crate::defense::{adversarial_train, DefenseConfig};
use crate::error::{Error, Result};
use crate::monitor::evaluate_accuracy;
use crate::nn::Model;
use crate::orchestrator::pipeline::{
    run_attack, run_defense_with, run_normal, run_normal_with, whitebox_accuracy, ScenarioConfig, Workspace,
};
use crate::orchestrator::state::PipelineState;

pub const CSV_HEADER: &str =
    "attack_eps,defense_eps,acc_fgsm_on_A,acc_transfer_A_on_Aprime,acc_whitebox_Aprime,acc_clean_Aprime";

/// The nine (attack ε, defense ϵ) cells of the reference experiment: each
/// attack magnitude paired with budgets just below, at and above it.
pub const REFERENCE_GRID: [(f64, f64); 9] = [
    (0.15, 0.10),
    (0.15, 0.15),
    (0.15, 0.20),
    (0.20, 0.15),
    (0.20, 0.20),
    (0.20, 0.25),
    (0.25, 0.20),
    (0.25, 0.25),
    (0.25, 0.30),
];

/// One results-table row. Accuracies are fractions; NaN marks a value that
/// could not be produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub attack_eps: f64,
    pub defense_eps: f64,
    /// f_A on FGSM examples crafted against f_A.
    pub acc_fgsm_on_a: f64,
    /// f_A′ on FGSM examples crafted against f_A.
    pub acc_transfer: f64,
    /// f_A′ on FGSM examples crafted against f_A′.
    pub acc_whitebox: f64,
    pub acc_clean_aprime: f64,
}

impl ResultRow {
    pub fn pending(attack_eps: f64, defense_eps: f64) -> Self {
        ResultRow {
            attack_eps,
            defense_eps,
            acc_fgsm_on_a: f64::NAN,
            acc_transfer: f64::NAN,
            acc_whitebox: f64::NAN,
            acc_clean_aprime: f64::NAN,
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{:.2},{:.2},{:.2},{:.2}",
            self.attack_eps,
            self.defense_eps,
            100.0 * self.acc_fgsm_on_a,
            100.0 * self.acc_transfer,
            100.0 * self.acc_whitebox,
            100.0 * self.acc_clean_aprime
        )
    }
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

/// Writes the table, creating parent directories.
pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, to_csv(rows)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parses a table written by [`write_csv`]; accuracies come back as
/// fractions.
pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad("missing or unexpected header".into()));
    }
    lines
        .map(|line| {
            let f: Vec<f64> = line
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}"))))
                .collect::<Result<_>>()?;
            if f.len() != 6 {
                return Err(bad(format!("expected 6 columns, got {}", f.len())));
            }
            Ok(ResultRow {
                attack_eps: f[0],
                defense_eps: f[1],
                acc_fgsm_on_a: f[2] / 100.0,
                acc_transfer: f[3] / 100.0,
                acc_whitebox: f[4] / 100.0,
                acc_clean_aprime: f[5] / 100.0,
            })
        })
        .collect()
}

/// Maps `f` over `items` on up to `workers` threads; output order matches
/// input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub rows: Vec<ResultRow>,
    pub baseline_model_id: String,
    /// Event log of every cell, in row order.
    pub cell_logs: Vec<PathBuf>,
}

/// Sweeps `(attack ε, defense ϵ)` pairs.
///
/// One baseline f_A is trained and shared by every cell, and one hardened
/// model is trained per distinct defense budget. Each cell then replays the
/// attack and defense stages in its own workspace under
/// `<root>/grid/cells/`, with its own event log. A failing cell yields a NaN
/// row and the sweep continues.
pub fn run_grid(ws: &Workspace, base: &ScenarioConfig, pairs: &[(f64, f64)], parallel: usize) -> Result<GridOutcome> {
    if pairs.is_empty() {
        return Err(Error::validation("grid needs at least one (attack, defense) pair"));
    }
    let cell_cfgs: Vec<ScenarioConfig> = pairs
        .iter()
        .map(|&(a, d)| {
            let mut c = base.clone();
            c.attack.epsilon = a;
            c.defense.epsilon_budget = d;
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let grid_root = ws.root().join("grid");
    if grid_root.exists() {
        return Err(Error::Conflict(format!("grid directory {}", grid_root.display())));
    }

    let mut shared = PipelineState::with_log(grid_root.join("baseline.events.jsonl"))?;
    let baseline_model_id = run_normal(ws, &mut shared, base)?;
    let baseline = ws.volume.load(&baseline_model_id)?.model;
    let train_data = ws.registry.get_ref(&base.train_data)?;
    let eval = ws.registry.get_ref(&base.eval_data)?;

    let mut budgets: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    budgets.sort_by(f64::total_cmp);
    budgets.dedup();
    info!("grid: hardening {} budgets with {} worker(s)", budgets.len(), parallel.max(1));
    let hardened: BTreeMap<u64, std::result::Result<Model, String>> = budgets
        .iter()
        .zip(parallel_map(&budgets, parallel, |&d| {
            let cfg = DefenseConfig {
                epsilon_budget: d,
                ..base.defense.clone()
            };
            adversarial_train(&baseline, &train_data, &cfg)
                .map(|o| o.model)
                .map_err(|e| e.to_string())
        }))
        .map(|(d, m)| (d.to_bits(), m))
        .collect();

    let cells: Vec<(usize, &ScenarioConfig)> = cell_cfgs.iter().enumerate().collect();
    let results = parallel_map(&cells, parallel, |&(i, cfg)| {
        let dir = grid_root
            .join("cells")
            .join(format!("{:02}-a{}-d{}", i, cfg.attack.epsilon, cfg.defense.epsilon_budget));
        let log = dir.join("events.jsonl");
        let hardened = &hardened[&cfg.defense.epsilon_budget.to_bits()];
        let row = run_cell(&dir, &log, cfg, &baseline, hardened, &eval).unwrap_or_else(|e| {
            warn!(
                "grid cell ε={} ϵ={} failed: {e}",
                cfg.attack.epsilon, cfg.defense.epsilon_budget
            );
            ResultRow::pending(cfg.attack.epsilon, cfg.defense.epsilon_budget)
        });
        (row, log)
    });
    let (rows, cell_logs) = results.into_iter().unzip();
    Ok(GridOutcome {
        rows,
        baseline_model_id,
        cell_logs,
    })
}

fn run_cell(
    dir: &Path,
    log: &Path,
    cfg: &ScenarioConfig,
    baseline: &Model,
    hardened: &std::result::Result<Model, String>,
    eval: &crate::data::LabeledDataset,
) -> Result<ResultRow> {
    let ws = Workspace::new(dir);
    ws.registry.put(eval)?;
    let mut state = PipelineState::with_log(log)?;
    // the shared baseline stands in for this cell's training stage
    run_normal_with(&ws, &mut state, &train_free(cfg), || Ok(baseline.clone()))?;
    let report = run_attack(&ws, &mut state, cfg)?;
    let mut row = ResultRow::pending(cfg.attack.epsilon, cfg.defense.epsilon_budget);
    row.acc_fgsm_on_a = report.observed_accuracy;
    let hardened = hardened.as_ref().map_err(|e| Error::Internal(format!("hardening failed: {e}")))?;
    if report.triggered {
        let d = run_defense_with(&ws, &mut state, cfg, |_| Ok(hardened.clone()))?;
        row.acc_transfer = d.report.observed_accuracy;
        row.acc_clean_aprime = d.clean_accuracy;
    } else {
        // no trigger means no defense stage; the table still gets f_A′'s numbers
        let stream = crate::attack::build_adversarial_dataset(baseline, eval, &cfg.attack)?;
        row.acc_transfer = evaluate_accuracy(hardened, &stream)?;
        row.acc_clean_aprime = evaluate_accuracy(hardened, eval)?;
    }
    row.acc_whitebox = whitebox_accuracy(hardened, eval, &cfg.attack)?;
    Ok(row)
}

/// The cell workspace only holds the evaluation split, so the baseline
/// stage must not look for the training split there.
fn train_free(cfg: &ScenarioConfig) -> ScenarioConfig {
    ScenarioConfig {
        train_data: cfg.eval_data.clone(),
        ..cfg.clone()
    }
}
