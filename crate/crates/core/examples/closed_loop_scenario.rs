//! Runs train → attack → detect → harden end to end in a temporary
//! workspace and prints the event log.

use robustops::data::{make_synthetic, DatasetRef};
use robustops::nn::Architecture;
use robustops::orchestrator::{read_event_log, run_scenario, to_csv, EventBody, ScenarioConfig, Workspace};
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

    let log = dir.path().join("events.jsonl");
    let outcome = run_scenario(&ws, &cfg, &log)?;
    for e in read_event_log(&log)? {
        let what = match &e.body {
            EventBody::StateEntered { state, served_model_id, .. } => {
                format!("→ {state} {}", served_model_id.as_deref().unwrap_or(""))
            }
            EventBody::DatasetUploaded { dataset, provenance, .. } => format!("uploaded {dataset} ({provenance:?})"),
            EventBody::MonitorReport(r) => format!(
                "monitor: {:.2}% → {:.2}% (drop {:.2}){}",
                100.0 * r.baseline_accuracy,
                100.0 * r.observed_accuracy,
                r.drop_points,
                if r.triggered { " TRIGGER" } else { "" }
            ),
            EventBody::DefenseTriggered { report } => format!("defense triggered by event {report}"),
            EventBody::ModelStored { model_id, parent_model_id, .. } => {
                format!("stored {model_id} (parent {})", parent_model_id.as_deref().unwrap_or("none"))
            }
        };
        println!("{}  {what}", e.ts.format("%H:%M:%S%.3f"));
    }
    println!("final state {}", outcome.state.state());
    print!("{}", to_csv(&[outcome.row]));
    Ok(())
}
