//! The experiment as a list of units in dependency order. Each unit names
//! its inputs (other units plus the config values it reads) and its output
//! paths relative to the run directory.

use std::fmt;

use anbn_core::corpus::{Condition, Partition};
use anbn_core::gmm::EnrollCondition;
use anbn_core::seed::{derive_seed, name_hash};
use serde_json::json;

use crate::config::{ExperimentConfig, Family, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    GenCorpus,
    Mix,
    Featurize,
    TrainAn,
    TrainDnnse,
    Enhance,
    Extract,
    TrainUbm,
    Enroll,
    Score,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 12] = [
        Stage::GenCorpus,
        Stage::Mix,
        Stage::Featurize,
        Stage::TrainAn,
        Stage::TrainDnnse,
        Stage::Enhance,
        Stage::Extract,
        Stage::TrainUbm,
        Stage::Enroll,
        Stage::Score,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCorpus => "gen-corpus",
            Stage::Mix => "mix",
            Stage::Featurize => "featurize",
            Stage::TrainAn => "train-an",
            Stage::TrainDnnse => "train-dnnse",
            Stage::Enhance => "enhance",
            Stage::Extract => "extract",
            Stage::TrainUbm => "train-ubm",
            Stage::Enroll => "enroll",
            Stage::Score => "score",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Utterances of one role under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub part: Partition,
    pub cond: Condition,
}

impl DataSet {
    pub fn new(part: Partition, cond: Condition) -> Self {
        Self { part, cond }
    }

    pub fn clean(part: Partition) -> Self {
        Self::new(part, Condition::Clean)
    }

    pub fn key(&self) -> String {
        format!("{}/{}", self.part, self.cond)
    }

    pub fn noise(&self) -> Option<&str> {
        match &self.cond {
            Condition::Clean => None,
            Condition::Noisy { noise, .. } => Some(noise),
        }
    }

    /// Directory holding the set's waveforms.
    pub fn wav_dir(&self) -> String {
        match self.cond {
            Condition::Clean => "corpus/clean".into(),
            Condition::Noisy { .. } => format!("corpus/mix/{}", self.key()),
        }
    }

    fn source_unit(&self) -> String {
        match self.cond {
            Condition::Clean => "corpus".into(),
            Condition::Noisy { .. } => format!("mix/{}", self.key()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Corpus,
    Mix(DataSet),
    /// Full-length 57-dim MFCCs of the observed signal plus its VAD mask.
    Base(DataSet),
    TrainAn(Instance),
    TrainDnnse(Instance),
    /// MFCCs of an enhanced signal, speech frames only.
    Enhance(Instance, DataSet),
    /// Bottleneck features, speech frames only.
    Extract(Instance, DataSet),
    Ubm(Instance),
    Enroll(Instance, EnrollCondition),
    Score(Instance, EnrollCondition, Condition),
    Eval,
    Report,
}

#[derive(Debug, Clone)]
pub struct Unit {
    pub id: String,
    pub stage: Stage,
    pub job: Job,
    pub params: serde_json::Value,
    pub deps: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn base_dir(set: &DataSet) -> String {
    format!("features/base/{}", set.key())
}

/// Directory of an instance's per-utterance features; the plain MFCC front
/// end reads the base features and applies the VAD mask on load.
pub fn feature_dir(inst: &Instance, set: &DataSet) -> String {
    match inst.front_end.family {
        Family::Mfcc => base_dir(set),
        _ => format!("features/{}/{}", inst.id(), set.key()),
    }
}

fn feature_unit(inst: &Instance, set: &DataSet) -> String {
    feature_dir(inst, set)
}

pub fn model_path(inst: &Instance) -> Option<String> {
    match inst.front_end.family {
        Family::Anbn => Some(format!("models/an/{}.model", inst.id())),
        Family::Dnnse => Some(format!("models/dnnse/{}.model", inst.id())),
        _ => None,
    }
}

fn model_unit(inst: &Instance) -> Option<String> {
    match inst.front_end.family {
        Family::Anbn => Some(format!("models/an/{}", inst.id())),
        Family::Dnnse => Some(format!("models/dnnse/{}", inst.id())),
        _ => None,
    }
}

pub fn ubm_path(inst: &Instance) -> String {
    format!("models/ubm/{}.gmm", inst.id())
}

pub fn speaker_dir(inst: &Instance, cond: EnrollCondition) -> String {
    format!("models/speakers/{}/{cond}", inst.id())
}

pub fn score_path(inst: &Instance, enroll: EnrollCondition, test: &Condition) -> String {
    format!("scores/{}/{enroll}/{test}.csv", inst.id())
}

pub const EER_CSV: &str = "reports/eer.csv";

pub fn table_paths(enroll: EnrollCondition) -> [String; 2] {
    [format!("reports/table_{enroll}.csv"), format!("reports/table_{enroll}.txt")]
}

fn in_scope(inst: &Instance, set: &DataSet) -> bool {
    match (&inst.noise, set.noise()) {
        (Some(own), Some(n)) => own == n,
        _ => true,
    }
}

fn noisy_sets(cfg: &ExperimentConfig, part: Partition, snrs: &[f64]) -> Vec<DataSet> {
    cfg.noise
        .names
        .iter()
        .flat_map(|n| snrs.iter().map(move |&s| DataSet::new(part, Condition::noisy(n, s))))
        .collect()
}

/// Front-end training sets: clean plus every noise at every training SNR.
pub fn train_sets(cfg: &ExperimentConfig) -> Vec<DataSet> {
    let mut v = vec![DataSet::clean(Partition::Train)];
    v.extend(noisy_sets(cfg, Partition::Train, &cfg.noise.train_snrs));
    v
}

pub fn test_conditions(cfg: &ExperimentConfig) -> Vec<Condition> {
    let mut v: Vec<Condition> = noisy_sets(cfg, Partition::Test, &cfg.noise.test_snrs)
        .into_iter()
        .map(|s| s.cond)
        .collect();
    if cfg.noise.test_clean {
        v.push(Condition::Clean);
    }
    v
}

/// Enrollment sets of one instance: clean, plus for multi-condition
/// enrollment the noisy copies of every noise the instance covers.
pub fn enroll_sets(cfg: &ExperimentConfig, inst: &Instance, cond: EnrollCondition) -> Vec<DataSet> {
    let mut v = vec![DataSet::clean(Partition::Enroll)];
    if cond == EnrollCondition::Multi {
        v.extend(
            noisy_sets(cfg, Partition::Enroll, &cfg.noise.enroll_snrs)
                .into_iter()
                .filter(|s| in_scope(inst, s)),
        );
    }
    v
}

pub fn test_sets(cfg: &ExperimentConfig, inst: &Instance) -> Vec<DataSet> {
    test_conditions(cfg)
        .into_iter()
        .map(|c| DataSet::new(Partition::Test, c))
        .filter(|s| in_scope(inst, s))
        .collect()
}

/// Sets an instance needs features for, in a fixed order.
fn instance_sets(cfg: &ExperimentConfig, inst: &Instance) -> Vec<DataSet> {
    let mut v = vec![DataSet::clean(Partition::Train)];
    for e in cfg.enroll_conditions() {
        v.extend(enroll_sets(cfg, inst, e));
    }
    v.extend(test_sets(cfg, inst));
    dedup(v)
}

/// Training sets of a trained instance; the mask estimator only uses
/// mixtures since it needs a noise component.
pub fn model_train_sets(cfg: &ExperimentConfig, inst: &Instance) -> Vec<DataSet> {
    train_sets(cfg)
        .into_iter()
        .filter(|s| in_scope(inst, s))
        .filter(|s| inst.front_end.family != Family::Dnnse || s.noise().is_some())
        .collect()
}

pub fn model_noises(cfg: &ExperimentConfig, inst: &Instance) -> Vec<String> {
    match &inst.noise {
        Some(n) => vec![n.clone()],
        None => cfg.noise.names.clone(),
    }
}

fn dedup(sets: Vec<DataSet>) -> Vec<DataSet> {
    let mut out: Vec<DataSet> = Vec::new();
    for s in sets {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

pub fn model_seed(cfg: &ExperimentConfig, inst: &Instance) -> u64 {
    derive_seed(cfg.seed, &[name_hash("front-end model"), name_hash(&inst.id())])
}

pub fn mix_seed(cfg: &ExperimentConfig, set: &DataSet, utterance: &str) -> u64 {
    derive_seed(cfg.seed, &[name_hash("mix"), name_hash(&set.key()), name_hash(utterance)])
}

pub fn noise_partition(set: &DataSet) -> Partition {
    set.part
}

/// All units of the configured experiment in dependency order.
pub fn plan(cfg: &ExperimentConfig) -> Vec<Unit> {
    let mut units = Vec::new();
    let instances = cfg.instances();
    let trained = instances.iter().any(|i| i.front_end.trained());

    units.push(Unit {
        id: "corpus".into(),
        stage: Stage::GenCorpus,
        job: Job::Corpus,
        params: json!({ "layout": cfg.layout() }),
        deps: vec![],
        outputs: vec!["corpus/clean".into(), "corpus/manifest.csv".into()],
    });

    let mut sets: Vec<DataSet> = Vec::new();
    if trained {
        sets.extend(train_sets(cfg));
    }
    for inst in &instances {
        sets.extend(instance_sets(cfg, inst));
        if inst.front_end.trained() {
            sets.extend(model_train_sets(cfg, inst));
        }
    }
    let sets = dedup(sets);

    for set in sets.iter().filter(|s| !s.cond.is_clean()) {
        let Condition::Noisy { noise, snr_db } = &set.cond else { unreachable!() };
        units.push(Unit {
            id: set.source_unit(),
            stage: Stage::Mix,
            job: Job::Mix(set.clone()),
            params: json!({
                "set": set.key(),
                "noise": noise,
                "snr_db": snr_db,
                "partition": noise_partition(set).to_string(),
                "stream_seconds": cfg.noise.stream_seconds,
                "seed": cfg.seed,
                "keep_noise": set.part == Partition::Train,
            }),
            deps: vec!["corpus".into()],
            outputs: vec![set.wav_dir()],
        });
    }

    let base_needed = |s: &DataSet| {
        instances.iter().any(|i| {
            matches!(i.front_end.family, Family::Mfcc | Family::Anbn) && instance_sets(cfg, i).contains(s)
                || i.front_end.family == Family::Anbn && model_train_sets(cfg, i).contains(s)
        })
    };
    for set in sets.iter().filter(|s| base_needed(s)) {
        units.push(Unit {
            id: base_dir(set),
            stage: Stage::Featurize,
            job: Job::Base(set.clone()),
            params: json!({ "set": set.key(), "features": "mfcc57", "vad_threshold_db": 30.0 }),
            deps: vec![set.source_unit()],
            outputs: vec![base_dir(set)],
        });
    }

    for inst in instances.iter().filter(|i| i.front_end.trained()) {
        let train = model_train_sets(cfg, inst);
        let (stage, job, hyper) = match inst.front_end.family {
            Family::Anbn => (Stage::TrainAn, Job::TrainAn(inst.clone()), json!(cfg.an)),
            Family::Dnnse => (Stage::TrainDnnse, Job::TrainDnnse(inst.clone()), json!(cfg.dnnse)),
            _ => unreachable!("only AN-BN and DNN-SE front ends are trained"),
        };
        let deps = train
            .iter()
            .map(|s| if stage == Stage::TrainAn { base_dir(s) } else { s.source_unit() })
            .collect();
        let model = model_path(inst).expect("trained instance");
        units.push(Unit {
            id: model_unit(inst).expect("trained instance"),
            stage,
            job,
            params: json!({
                "instance": inst.id(),
                "noises": model_noises(cfg, inst),
                "sets": train.iter().map(DataSet::key).collect::<Vec<_>>(),
                "hyper": hyper,
                "seed": model_seed(cfg, inst),
            }),
            deps,
            outputs: vec![model.clone(), model.replace(".model", ".log.csv")],
        });
    }

    for inst in &instances {
        let (stage, make): (Stage, fn(Instance, DataSet) -> Job) = match inst.front_end.family {
            Family::Mfcc => continue,
            Family::Mmse | Family::Dnnse => (Stage::Enhance, Job::Enhance),
            Family::Anbn => (Stage::Extract, Job::Extract),
        };
        for set in instance_sets(cfg, inst) {
            let mut deps = vec![if inst.front_end.family == Family::Anbn {
                base_dir(&set)
            } else {
                set.source_unit()
            }];
            deps.extend(model_unit(inst));
            units.push(Unit {
                id: feature_unit(inst, &set),
                stage,
                job: make(inst.clone(), set.clone()),
                params: json!({ "instance": inst.id(), "set": set.key(), "vad_threshold_db": 30.0 }),
                deps,
                outputs: vec![feature_dir(inst, &set)],
            });
        }
    }

    for inst in &instances {
        let set = DataSet::clean(Partition::Train);
        units.push(Unit {
            id: format!("models/ubm/{}", inst.id()),
            stage: Stage::TrainUbm,
            job: Job::Ubm(inst.clone()),
            params: json!({
                "instance": inst.id(),
                "components": cfg.ubm.components,
                "iters": cfg.ubm.iters,
                "iters_per_split": cfg.ubm.iters_per_split,
            }),
            deps: vec![feature_unit(inst, &set)],
            outputs: vec![ubm_path(inst)],
        });
    }

    for inst in &instances {
        for e in cfg.enroll_conditions() {
            let sets = enroll_sets(cfg, inst, e);
            let mut deps = vec![format!("models/ubm/{}", inst.id())];
            deps.extend(sets.iter().map(|s| feature_unit(inst, s)));
            units.push(Unit {
                id: speaker_dir(inst, e),
                stage: Stage::Enroll,
                job: Job::Enroll(inst.clone(), e),
                params: json!({
                    "instance": inst.id(),
                    "enrollment": e.name(),
                    "sets": sets.iter().map(DataSet::key).collect::<Vec<_>>(),
                    "relevance": cfg.ubm.relevance,
                }),
                deps,
                outputs: vec![speaker_dir(inst, e)],
            });
        }
    }

    let mut score_units = Vec::new();
    for inst in &instances {
        for e in cfg.enroll_conditions() {
            for set in test_sets(cfg, inst) {
                let id = score_path(inst, e, &set.cond).trim_end_matches(".csv").to_string();
                score_units.push(id.clone());
                units.push(Unit {
                    id,
                    stage: Stage::Score,
                    job: Job::Score(inst.clone(), e, set.cond.clone()),
                    params: json!({ "instance": inst.id(), "enrollment": e.name(), "set": set.key() }),
                    deps: vec![
                        format!("models/ubm/{}", inst.id()),
                        speaker_dir(inst, e),
                        feature_unit(inst, &set),
                    ],
                    outputs: vec![score_path(inst, e, &set.cond)],
                });
            }
        }
    }

    units.push(Unit {
        id: "eval".into(),
        stage: Stage::Eval,
        job: Job::Eval,
        params: json!({ "scores": score_units }),
        deps: score_units,
        outputs: vec![EER_CSV.into()],
    });
    units.push(Unit {
        id: "report".into(),
        stage: Stage::Report,
        job: Job::Report,
        params: json!({
            "noises": cfg.noise.names,
            "front_ends": cfg.front_ends,
            "enrollment": cfg.enrollment,
        }),
        deps: vec!["eval".into()],
        outputs: cfg.enroll_conditions().into_iter().flat_map(table_paths).collect(),
    });
    units
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn dependencies_precede_their_users() {
        let cfg = ExperimentConfig::default();
        let units = plan(&cfg);
        let mut seen = HashSet::new();
        for u in &units {
            for d in &u.deps {
                assert!(seen.contains(d), "{} depends on later or unknown unit {d}", u.id);
            }
            assert!(seen.insert(u.id.clone()), "duplicate unit {}", u.id);
        }
    }

    #[test]
    fn noise_specific_models_one_per_noise() {
        let mut cfg = ExperimentConfig::default();
        cfg.noise.names = ["white", "babble", "cantine", "market", "airplane"].map(String::from).to_vec();
        cfg.front_ends = vec!["anbn-ns".parse().unwrap()];
        let an: Vec<String> = plan(&cfg)
            .into_iter()
            .filter(|u| u.stage == Stage::TrainAn)
            .map(|u| u.id)
            .collect();
        assert_eq!(an.len(), 5);
        assert!(an.contains(&"models/an/anbn-ns-market".to_string()));
    }

    #[test]
    fn noise_specific_instances_see_only_their_noise() {
        let mut cfg = ExperimentConfig::default();
        cfg.front_ends = vec!["anbn-ns".parse().unwrap()];
        let inst = &cfg.instances()[0];
        assert_eq!(inst.id(), "anbn-ns-white");
        assert!(test_sets(&cfg, inst).iter().all(|s| s.noise().is_none_or(|n| n == "white")));
        let multi = enroll_sets(&cfg, inst, EnrollCondition::Multi);
        assert_eq!(multi.len(), 1 + cfg.noise.enroll_snrs.len());
    }

    #[test]
    fn mixing_is_planned_once_per_set() {
        let cfg = ExperimentConfig::default();
        let mixes: Vec<String> = plan(&cfg)
            .into_iter()
            .filter(|u| u.stage == Stage::Mix)
            .map(|u| u.id)
            .collect();
        let n = cfg.noise.names.len();
        let expected = n * (cfg.noise.train_snrs.len() + cfg.noise.enroll_snrs.len() + cfg.noise.test_snrs.len());
        assert_eq!(mixes.len(), expected);
        assert!(mixes.contains(&"mix/test/babble@15".to_string()));
    }
}
