//! Sweeps attack and defense budgets on synthetic data and prints the
//! results table.

use robustops::data::{make_synthetic, DatasetRef};
use robustops::nn::Architecture;
use robustops::orchestrator::{run_grid, to_csv, ScenarioConfig, Workspace};
use robustops::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let ws = Workspace::new(dir.path());
    ws.registry.put(&make_synthetic(100, 10, 0)?.with_identity("synthetic-train", "1"))?;
    ws.registry.put(&make_synthetic(20, 10, 1)?.with_identity("synthetic-test", "1"))?;

    let mut cfg = ScenarioConfig::new(DatasetRef::new("synthetic-train", "1"), DatasetRef::new("synthetic-test", "1"));
    cfg.architecture = Architecture::DEFAULT_MLP;
    cfg.defense.epochs = 10;
    cfg.defense.learning_rate = 1e-3;

    let pairs = [(0.15, 0.10), (0.15, 0.20), (0.25, 0.20), (0.25, 0.30)];
    let parallel = std::thread::available_parallelism().map_or(1, |n| n.get());
    let outcome = run_grid(&ws, &cfg, &pairs, parallel)?;
    print!("{}", to_csv(&outcome.rows));
    println!("baseline {}; per-cell logs under {}", outcome.baseline_model_id, dir.path().join("grid/cells").display());
    Ok(())
}
