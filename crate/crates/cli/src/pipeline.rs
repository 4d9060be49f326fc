//! Runs planned units in order, skipping those whose inputs and outputs are
//! unchanged since their last successful run.

use std::path::{Path, PathBuf};

use anbn_core::Error;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::plan::{plan, Stage, Unit};
use crate::stages::Ctx;
use crate::store::{sha256_hex, RunDir, Stamp};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
}

pub fn run_dir(runs_dir: &Path, cfg: &ExperimentConfig) -> RunDir {
    RunDir::new(runs_dir.join(&cfg.name))
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(cfg.to_toml().as_bytes())
}

fn input_hash(run: &RunDir, unit: &Unit) -> CliResult<String> {
    let mut deps = Vec::new();
    for d in &unit.deps {
        let stamp = run.read_stamp(d).ok_or_else(|| {
            CliError::stage(
                unit.stage.name(),
                run.stamp_path(d),
                Error::Validation(format!("unit {} needs {d}, which has not been run", unit.id)),
            )
        })?;
        if let Some(missing) = stamp.outputs.iter().map(|o| run.path(o)).find(|p| !p.exists()) {
            return Err(CliError::stage(unit.stage.name(), &missing, Error::MissingFile(missing.clone())));
        }
        deps.push(json!([d, stamp.output_hash]));
    }
    let doc = json!({ "unit": unit.id, "params": unit.params, "deps": deps });
    Ok(sha256_hex(doc.to_string().as_bytes()))
}

fn write_provenance(run: &RunDir, cfg: &ExperimentConfig, hash: &str, units: &[Unit]) -> CliResult<()> {
    let text = cfg.to_toml();
    let fail = |p: PathBuf, e: std::io::Error| CliError::stage("provenance", p, e);
    let p = run.path("provenance/config.toml");
    std::fs::write(&p, &text).map_err(|e| fail(p.clone(), e))?;
    let p = run.path(format!("provenance/configs/{hash}.toml"));
    std::fs::write(&p, &text).map_err(|e| fail(p.clone(), e))?;
    let doc = json!({
        "config_hash": hash,
        "seed": cfg.seed,
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "platform": format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
        "units": units.iter().map(|u| json!({
            "id": u.id,
            "stage": u.stage.name(),
            "outputs": u.outputs,
            "deps": u.deps,
        })).collect::<Vec<_>>(),
    });
    let p = run.path("provenance/run.json");
    std::fs::write(&p, serde_json::to_string_pretty(&doc).expect("json"))
        .map_err(|e| fail(p.clone(), e))
}

/// Runs the units of the selected stages (all when `stages` is `None`).
/// Dependencies outside the selection must already have been run.
pub fn run_stages(cfg: &ExperimentConfig, runs_dir: &Path, stages: Option<&[Stage]>) -> CliResult<Outcome> {
    cfg.validate()?;
    let run = run_dir(runs_dir, cfg);
    run.create()
        .map_err(|e| CliError::stage("setup", run.root(), e))?;
    let hash = config_hash(cfg);
    let units = plan(cfg);
    write_provenance(&run, cfg, &hash, &units)?;
    let ctx = Ctx { cfg, run: &run, layout: cfg.layout() };
    let mut outcome = Outcome::default();
    for unit in units.iter().filter(|u| stages.is_none_or(|s| s.contains(&u.stage))) {
        let stage = unit.stage.name();
        let ih = input_hash(&run, unit)?;
        if let Some(stamp) = run.read_stamp(&unit.id) {
            let unchanged = stamp.input_hash == ih
                && stamp.outputs == unit.outputs
                && run.hash_outputs(&unit.outputs).is_ok_and(|h| h == stamp.output_hash);
            if unchanged {
                log::debug!(target: stage, "{}: up to date", unit.id);
                outcome.skipped.push(unit.id.clone());
                continue;
            }
        }
        log::info!(target: stage, "{}: running", unit.id);
        let artifact = run.path(&unit.outputs[0]);
        run.remove_stamp(&unit.id)
            .and_then(|_| run.clear(&unit.outputs))
            .map_err(|e| CliError::stage(stage, &artifact, e))?;
        for o in &unit.outputs {
            if let Some(parent) = run.path(o).parent() {
                std::fs::create_dir_all(parent).map_err(|e| CliError::stage(stage, parent, e))?;
            }
        }
        ctx.execute(unit)?;
        let output_hash = run
            .hash_outputs(&unit.outputs)
            .map_err(|e| CliError::stage(stage, &artifact, e))?;
        run.write_stamp(&Stamp {
            unit: unit.id.clone(),
            input_hash: ih,
            output_hash,
            outputs: unit.outputs.clone(),
            config_hash: hash.clone(),
            params: unit.params.clone(),
        })
        .map_err(|e| CliError::stage(stage, run.stamp_path(&unit.id), e))?;
        outcome.executed.push(unit.id.clone());
    }
    Ok(outcome)
}

/// The full experiment: corpus generation through report tables.
pub fn run_pipeline(cfg: &ExperimentConfig, runs_dir: &Path) -> CliResult<Outcome> {
    run_stages(cfg, runs_dir, None)
}
