//! Pipeline stages: baseline training, insider attack, triggered defense.
//!
//! Stages share nothing in memory; every model and dataset passes through
//! the volume or the registry.

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::attack::{build_adversarial_dataset, AttackConfig};
use crate::data::{DatasetRef, DatasetRegistry, LabeledDataset, Provenance};
use crate::defense::{adversarial_train, DefenseConfig};
use crate::error::{Error, Result};
use crate::monitor::{check_degradation, evaluate_accuracy, MonitorReport, DEFAULT_THRESHOLD};
use crate::nn::{train, Architecture, Model, TrainConfig};
use crate::orchestrator::grid::ResultRow;
use crate::orchestrator::state::{EventBody, PipelineState, State};
use crate::orchestrator::volume::{ModelRole, ModelVolume, NewModel};

/// The dataset registry and model volume under one root directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    pub registry: DatasetRegistry,
    pub volume: ModelVolume,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Workspace {
            registry: DatasetRegistry::new(&root),
            volume: ModelVolume::new(&root),
            root,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Clean training split.
    pub train_data: DatasetRef,
    /// Clean held-out split: α_A is measured here and the adversary perturbs it.
    pub eval_data: DatasetRef,
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub defense: DefenseConfig,
    pub threshold_points: f64,
    /// Seeds the baseline model's initialization.
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(train_data: DatasetRef, eval_data: DatasetRef) -> Self {
        ScenarioConfig {
            train_data,
            eval_data,
            architecture: Architecture::SmallCnn,
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            defense: DefenseConfig::default(),
            threshold_points: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.attack.validate()?;
        self.defense.validate()?;
        if !self.threshold_points.is_finite() {
            return Err(Error::validation("monitor threshold must be finite"));
        }
        if let Architecture::Mlp { hidden: 0 } = self.architecture {
            return Err(Error::validation("MLP hidden width must be positive"));
        }
        Ok(())
    }
}

/// Runs `work`; on failure moves the pipeline to `Failed` with the cause.
fn guarded<T>(state: &mut PipelineState, work: impl FnOnce(&mut PipelineState) -> Result<T>) -> Result<T> {
    match work(state) {
        Ok(v) => Ok(v),
        Err(e) => {
            state.fail(&e);
            Err(e)
        }
    }
}

fn require(state: &PipelineState, expected: State, op: &str) -> Result<()> {
    if state.state() != expected {
        return Err(Error::State(format!(
            "{op} needs state {expected}, pipeline is {}",
            state.state()
        )));
    }
    Ok(())
}

/// Normal usage: trains f_A on the clean split, measures α_A on the
/// held-out split, stores the baseline and starts serving it.
pub fn run_normal(ws: &Workspace, state: &mut PipelineState, cfg: &ScenarioConfig) -> Result<String> {
    run_normal_with(ws, state, cfg, || {
        let data = ws.registry.get_ref(&cfg.train_data)?;
        let init = Model::new(cfg.architecture, cfg.seed)?;
        Ok(train(&init, &data, &cfg.train)?.model)
    })
}

pub(crate) fn run_normal_with(
    ws: &Workspace,
    state: &mut PipelineState,
    cfg: &ScenarioConfig,
    fit: impl FnOnce() -> Result<Model>,
) -> Result<String> {
    cfg.validate()?;
    require(state, State::Idle, "baseline training")?;
    for r in [&cfg.train_data, &cfg.eval_data] {
        let entry = ws.registry.entry(&r.name, &r.version)?;
        if entry.provenance != Provenance::Clean {
            return Err(Error::validation(format!("dataset {r} is not clean")));
        }
    }
    guarded(state, |state| {
        state.record(EventBody::enter(State::TrainingBaseline, None))?;
        let model = fit()?;
        let eval = ws.registry.get_ref(&cfg.eval_data)?;
        let alpha = evaluate_accuracy(&model, &eval)?;
        info!("baseline clean accuracy α_A = {:.2}%", 100.0 * alpha);
        let rec = ws.volume.store(NewModel {
            role: ModelRole::Baseline,
            model,
            baseline_accuracy: alpha,
            train_config: Some(cfg.train.clone()),
            defense_config: None,
            parent_model_id: None,
        })?;
        let id = rec.meta.model_id;
        state.record(EventBody::ModelStored {
            model_id: id.clone(),
            role: ModelRole::Baseline,
            parent_model_id: None,
        })?;
        state.record(EventBody::enter(State::Serving, Some(id.clone())))?;
        Ok(id)
    })
}

/// Insider attack: pulls the served model from the volume, uploads an FGSM
/// version of the evaluation split, and lets the monitor judge the served
/// model on it. Appends a `DefenseTriggered` event when the drop exceeds
/// the threshold.
pub fn run_attack(ws: &Workspace, state: &mut PipelineState, cfg: &ScenarioConfig) -> Result<MonitorReport> {
    cfg.validate()?;
    require(state, State::Serving, "attack")?;
    let served = state
        .served_model_id()
        .ok_or_else(|| Error::State("no served model".into()))?
        .to_string();
    guarded(state, |state| {
        let victim = ws.volume.load(&served)?;
        let clean = ws.registry.get_ref(&cfg.eval_data)?;
        let adv = build_adversarial_dataset(&victim.model, &clean, &cfg.attack)?;
        let entry = ws.registry.put(&adv)?;
        state.record(EventBody::DatasetUploaded {
            dataset: entry.reference(),
            provenance: entry.provenance,
            checksum: entry.checksum.clone(),
        })?;
        state.record(EventBody::enter(State::Attacked, None))?;
        let stream = ws.registry.get(&entry.name, &entry.version)?;
        let observed = evaluate_accuracy(&victim.model, &stream)?;
        let report = check_degradation(victim.meta.baseline_accuracy, observed, cfg.threshold_points)?
            .on(entry.reference());
        info!(
            "monitor: {:.2}% on {} (drop {:.2} points, triggered: {})",
            100.0 * observed,
            entry.reference(),
            report.drop_points,
            report.triggered
        );
        let idx = state.record(EventBody::MonitorReport(report.clone()))?;
        if report.triggered {
            state.record(EventBody::DefenseTriggered { report: idx })?;
        }
        Ok(report)
    })
}

#[derive(Debug, Clone)]
pub struct DefenseResult {
    pub hardened_model_id: String,
    /// Clean accuracy of f_A′ on the evaluation split.
    pub clean_accuracy: f64,
    /// The hardened model judged on the adversarial stream.
    pub report: MonitorReport,
}

/// Defense pipeline for the pending trigger: fine-tunes f_A with PGD
/// adversarial training, stores and deploys f_A′, then re-evaluates it on
/// the adversarial stream.
pub fn run_defense(ws: &Workspace, state: &mut PipelineState, cfg: &ScenarioConfig) -> Result<DefenseResult> {
    run_defense_with(ws, state, cfg, |base| {
        let data = ws.registry.get_ref(&cfg.train_data)?;
        Ok(adversarial_train(base, &data, &cfg.defense)?.model)
    })
}

/// The most recent adversarial upload recorded in the log.
fn adversarial_stream(state: &PipelineState) -> Option<DatasetRef> {
    state.events().iter().rev().find_map(|e| match &e.body {
        EventBody::DatasetUploaded {
            dataset,
            provenance: Provenance::Adversarial,
            ..
        } => Some(dataset.clone()),
        _ => None,
    })
}

pub(crate) fn run_defense_with(
    ws: &Workspace,
    state: &mut PipelineState,
    cfg: &ScenarioConfig,
    harden: impl FnOnce(&Model) -> Result<Model>,
) -> Result<DefenseResult> {
    cfg.validate()?;
    require(state, State::Attacked, "defense")?;
    let trigger = state
        .pending_trigger()
        .ok_or_else(|| Error::State("no pending defense trigger".into()))?;
    let stream_ref = adversarial_stream(state).ok_or_else(|| Error::State("no adversarial stream".into()))?;
    let base_id = state
        .served_model_id()
        .ok_or_else(|| Error::State("no served model".into()))?
        .to_string();
    guarded(state, |state| {
        state.record(EventBody::StateEntered {
            state: State::Defending,
            served_model_id: None,
            trigger: Some(trigger),
            note: Some(format!("{base_id} keeps serving until the hardened model is deployed")),
        })?;
        let base = ws.volume.load(&base_id)?;
        let hardened = harden(&base.model)?;
        let clean = ws.registry.get_ref(&cfg.eval_data)?;
        let clean_accuracy = evaluate_accuracy(&hardened, &clean)?;
        let rec = ws.volume.store(NewModel {
            role: ModelRole::Hardened,
            model: hardened,
            baseline_accuracy: clean_accuracy,
            train_config: None,
            defense_config: Some(cfg.defense.clone()),
            parent_model_id: Some(base_id.clone()),
        })?;
        let id = rec.meta.model_id.clone();
        state.record(EventBody::ModelStored {
            model_id: id.clone(),
            role: ModelRole::Hardened,
            parent_model_id: Some(base_id.clone()),
        })?;
        state.record(EventBody::enter(State::ServingHardened, Some(id.clone())))?;
        let stream = ws.registry.get_ref(&stream_ref)?;
        let observed = evaluate_accuracy(&rec.model, &stream)?;
        // judged against the original integrity baseline α_A
        let report = check_degradation(base.meta.baseline_accuracy, observed, cfg.threshold_points)?.on(stream_ref);
        info!(
            "post-defense monitor: {:.2}% on the adversarial stream, clean {:.2}%",
            100.0 * observed,
            100.0 * clean_accuracy
        );
        state.record(EventBody::MonitorReport(report.clone()))?;
        Ok(DefenseResult {
            hardened_model_id: id,
            clean_accuracy,
            report,
        })
    })
}

/// White-box accuracy: FGSM crafted against `model` itself.
pub fn whitebox_accuracy(model: &Model, clean: &LabeledDataset, attack: &AttackConfig) -> Result<f64> {
    let adv = build_adversarial_dataset(model, clean, attack)?;
    evaluate_accuracy(model, &adv)
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub state: PipelineState,
    pub baseline_model_id: String,
    pub attack_report: MonitorReport,
    pub defense: Option<DefenseResult>,
    pub row: ResultRow,
}

/// Normal usage, attack and (if triggered) defense in sequence, logging
/// events to `event_log`.
pub fn run_scenario(ws: &Workspace, cfg: &ScenarioConfig, event_log: &Path) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let mut state = PipelineState::with_log(event_log)?;
    let baseline_model_id = run_normal(ws, &mut state, cfg)?;
    let attack_report = run_attack(ws, &mut state, cfg)?;
    let mut row = ResultRow::pending(cfg.attack.epsilon, cfg.defense.epsilon_budget);
    row.acc_fgsm_on_a = attack_report.observed_accuracy;
    let defense = if attack_report.triggered {
        let d = run_defense(ws, &mut state, cfg)?;
        let hardened = ws.volume.load(&d.hardened_model_id)?.model;
        let clean = ws.registry.get_ref(&cfg.eval_data)?;
        row.acc_transfer = d.report.observed_accuracy;
        row.acc_whitebox = whitebox_accuracy(&hardened, &clean, &cfg.attack)?;
        row.acc_clean_aprime = d.clean_accuracy;
        Some(d)
    } else {
        info!("monitor did not trigger; no defense run");
        None
    };
    Ok(ScenarioOutcome {
        state,
        baseline_model_id,
        attack_report,
        defense,
        row,
    })
}
