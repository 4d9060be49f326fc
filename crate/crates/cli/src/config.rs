//! Experiment configuration: one TOML file, optionally patched by
//! `section.key=value` overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anbn_core::corpus::{noise_kind, CorpusLayout};
use anbn_core::gmm::EnrollCondition;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    /// No enhancement: MFCCs of the observed signal.
    Mfcc,
    Mmse,
    Dnnse,
    Anbn,
}

/// Noise-general (one model for all noises) or noise-specific (one per noise).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    General,
    Specific,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FrontEnd {
    pub family: Family,
    /// Only the trained front ends have a scope.
    pub scope: Option<Scope>,
}

impl FrontEnd {
    pub const MFCC: FrontEnd = FrontEnd { family: Family::Mfcc, scope: None };
    pub const MMSE: FrontEnd = FrontEnd { family: Family::Mmse, scope: None };

    pub fn trained(self) -> bool {
        self.scope.is_some()
    }
}

impl fmt::Display for FrontEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fam = match self.family {
            Family::Mfcc => "mfcc",
            Family::Mmse => "mmse",
            Family::Dnnse => "dnnse",
            Family::Anbn => "anbn",
        };
        match self.scope {
            None => f.write_str(fam),
            Some(Scope::General) => write!(f, "{fam}-ng"),
            Some(Scope::Specific) => write!(f, "{fam}-ns"),
        }
    }
}

impl FromStr for FrontEnd {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let (family, scope) = match s {
            "mfcc" | "none" => (Family::Mfcc, None),
            "mmse" => (Family::Mmse, None),
            "dnnse-ng" => (Family::Dnnse, Some(Scope::General)),
            "dnnse-ns" => (Family::Dnnse, Some(Scope::Specific)),
            "anbn-ng" => (Family::Anbn, Some(Scope::General)),
            "anbn-ns" => (Family::Anbn, Some(Scope::Specific)),
            other => {
                return Err(CliError::Config(format!(
                    "unknown front end '{other}' (expected none, mfcc, mmse, dnnse-ng, dnnse-ns, anbn-ng or anbn-ns)"
                )))
            }
        };
        Ok(FrontEnd { family, scope })
    }
}

impl TryFrom<String> for FrontEnd {
    type Error = CliError;

    fn try_from(s: String) -> CliResult<Self> {
        s.parse()
    }
}

impl From<FrontEnd> for String {
    fn from(f: FrontEnd) -> String {
        f.to_string()
    }
}

/// A concrete front end: noise-specific ones exist once per noise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Instance {
    pub front_end: FrontEnd,
    pub noise: Option<String>,
}

impl Instance {
    pub fn id(&self) -> String {
        match &self.noise {
            Some(n) => format!("{}-{n}", self.front_end),
            None => self.front_end.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub extractor_speakers: Vec<u32>,
    pub extractor_texts: Vec<u32>,
    pub extractor_sessions: Vec<u32>,
    pub sv_speakers: Vec<u32>,
    pub sv_text: u32,
    pub enroll_sessions: Vec<u32>,
    pub test_sessions: Vec<u32>,
    pub duration_s: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let l = CorpusLayout::default();
        Self {
            extractor_speakers: l.extractor_speakers,
            extractor_texts: l.extractor_texts,
            extractor_sessions: l.extractor_sessions,
            sv_speakers: l.sv_speakers,
            sv_text: l.sv_text,
            enroll_sessions: l.enroll_sessions,
            test_sessions: l.test_sessions,
            duration_s: l.duration_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub names: Vec<String>,
    /// SNRs of the front-end training mixtures.
    pub train_snrs: Vec<f64>,
    /// SNRs of the noisy copies added to multi-condition enrollment.
    pub enroll_snrs: Vec<f64>,
    pub test_snrs: Vec<f64>,
    pub test_clean: bool,
    /// Length of each generated noise stream.
    pub stream_seconds: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            names: vec!["white".into(), "babble".into()],
            train_snrs: vec![10.0, 20.0],
            enroll_snrs: vec![10.0, 20.0],
            test_snrs: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            test_clean: true,
            stream_seconds: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnConfig {
    pub en_hidden: usize,
    pub dn_hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_utterances: usize,
    pub en_updates_per_batch: usize,
    pub dn_update_probability: f64,
    /// Keep every n-th speech frame of each training utterance.
    pub frame_stride: usize,
}

impl Default for AnConfig {
    fn default() -> Self {
        Self {
            en_hidden: 128,
            dn_hidden: 128,
            epochs: 30,
            learning_rate: 0.01,
            batch_utterances: 32,
            en_updates_per_batch: 3,
            dn_update_probability: 0.5,
            frame_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DnnseConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_utterances: usize,
}

impl Default for DnnseConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            epochs: 30,
            learning_rate: 0.01,
            batch_utterances: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UbmConfig {
    pub components: usize,
    pub iters: usize,
    pub iters_per_split: usize,
    pub relevance: f64,
}

impl Default for UbmConfig {
    fn default() -> Self {
        Self {
            components: 64,
            iters: 10,
            iters_per_split: 4,
            relevance: anbn_core::gmm::DEFAULT_RELEVANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub front_ends: Vec<FrontEnd>,
    pub enrollment: Vec<String>,
    pub corpus: CorpusConfig,
    pub noise: NoiseConfig,
    pub an: AnConfig,
    pub dnnse: DnnseConfig,
    pub ubm: UbmConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            seed: 1,
            front_ends: vec![
                FrontEnd::MFCC,
                FrontEnd::MMSE,
                "dnnse-ng".parse().expect("valid front end"),
                "anbn-ng".parse().expect("valid front end"),
                "anbn-ns".parse().expect("valid front end"),
            ],
            enrollment: vec!["clean".into(), "multi".into()],
            corpus: CorpusConfig::default(),
            noise: NoiseConfig::default(),
            an: AnConfig::default(),
            dnnse: DnnseConfig::default(),
            ubm: UbmConfig::default(),
        }
    }
}

fn check_snrs(what: &str, snrs: &[f64]) -> CliResult<()> {
    if let Some(s) = snrs.iter().find(|s| !s.is_finite()) {
        return Err(CliError::Config(format!("{what} contains non-finite SNR {s}")));
    }
    for (i, a) in snrs.iter().enumerate() {
        if snrs[..i].contains(a) {
            return Err(CliError::Config(format!("{what} lists {a} dB twice")));
        }
    }
    Ok(())
}

/// Turns `value` into a TOML value, falling back to a bare string.
fn parse_override_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key '{key}'")));
    }
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override '{key}': '{part}' is not a section")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), parse_override_value(value.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` (defaults when `None`), applies overrides in order and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn layout(&self) -> CorpusLayout {
        let c = &self.corpus;
        CorpusLayout {
            extractor_speakers: c.extractor_speakers.clone(),
            extractor_texts: c.extractor_texts.clone(),
            extractor_sessions: c.extractor_sessions.clone(),
            sv_speakers: c.sv_speakers.clone(),
            sv_text: c.sv_text,
            enroll_sessions: c.enroll_sessions.clone(),
            test_sessions: c.test_sessions.clone(),
            duration_s: c.duration_s,
            seed: self.seed,
        }
    }

    pub fn enroll_conditions(&self) -> Vec<EnrollCondition> {
        self.enrollment
            .iter()
            .map(|e| e.parse().expect("validated"))
            .collect()
    }

    /// Concrete front ends in configuration order.
    pub fn instances(&self) -> Vec<Instance> {
        let mut out = Vec::new();
        for &fe in &self.front_ends {
            match fe.scope {
                Some(Scope::Specific) => out.extend(self.noise.names.iter().map(|n| Instance {
                    front_end: fe,
                    noise: Some(n.clone()),
                })),
                _ => out.push(Instance { front_end: fe, noise: None }),
            }
        }
        out
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad(format!("run name '{}' must be a plain directory name", self.name));
        }
        self.layout()
            .validate()
            .map_err(|e| CliError::Config(format!("corpus: {e}")))?;
        if self.noise.names.is_empty() {
            return bad("no noises configured".into());
        }
        for (i, n) in self.noise.names.iter().enumerate() {
            noise_kind(n).map_err(|e| CliError::Config(e.to_string()))?;
            if self.noise.names[..i].contains(n) {
                return bad(format!("noise '{n}' listed twice"));
            }
        }
        check_snrs("noise.train_snrs", &self.noise.train_snrs)?;
        check_snrs("noise.enroll_snrs", &self.noise.enroll_snrs)?;
        check_snrs("noise.test_snrs", &self.noise.test_snrs)?;
        if self.noise.test_snrs.is_empty() && !self.noise.test_clean {
            return bad("no test conditions".into());
        }
        if !(self.noise.stream_seconds >= 2.0 * self.corpus.duration_s) {
            return bad("noise.stream_seconds must be at least twice the utterance duration".into());
        }
        if self.front_ends.is_empty() {
            return bad("no front ends configured".into());
        }
        for (i, f) in self.front_ends.iter().enumerate() {
            if self.front_ends[..i].contains(f) {
                return bad(format!("front end '{f}' listed twice"));
            }
        }
        let trains_models = self.front_ends.iter().any(|f| f.trained());
        if trains_models && self.noise.train_snrs.is_empty() {
            return bad("trained front ends need noise.train_snrs".into());
        }
        if self.enrollment.is_empty() {
            return bad("no enrollment conditions".into());
        }
        for (i, e) in self.enrollment.iter().enumerate() {
            e.parse::<EnrollCondition>().map_err(|e| CliError::Config(e.to_string()))?;
            if self.enrollment[..i].contains(e) {
                return bad(format!("enrollment '{e}' listed twice"));
            }
        }
        if self.enrollment.iter().any(|e| e == "multi") && self.noise.enroll_snrs.is_empty() {
            return bad("multi-condition enrollment needs noise.enroll_snrs".into());
        }
        let an = &self.an;
        if an.en_hidden == 0 || an.dn_hidden == 0 || an.frame_stride == 0 {
            return bad("an widths and frame_stride must be >= 1".into());
        }
        self.an_schedule()
            .validate()
            .map_err(|e| CliError::Config(format!("an: {e}")))?;
        if self.dnnse.hidden == 0 {
            return bad("dnnse.hidden must be >= 1".into());
        }
        self.dnnse_train(0)
            .validate()
            .map_err(|e| CliError::Config(format!("dnnse: {e}")))?;
        let u = &self.ubm;
        if !u.components.is_power_of_two() {
            return bad(format!("ubm.components = {} must be a power of two", u.components));
        }
        if u.iters == 0 {
            return bad("ubm.iters must be >= 1".into());
        }
        if !(u.relevance > 0.0 && u.relevance.is_finite()) {
            return bad("ubm.relevance must be positive".into());
        }
        Ok(())
    }

    pub fn an_schedule(&self) -> anbn_core::anbn::AnSchedule {
        anbn_core::anbn::AnSchedule {
            en_updates_per_batch: self.an.en_updates_per_batch,
            dn_update_probability: self.an.dn_update_probability,
            epochs: self.an.epochs,
            batch_utterances: self.an.batch_utterances,
            learning_rate: self.an.learning_rate,
        }
    }

    pub fn dnnse_train(&self, seed: u64) -> anbn_core::nnet::TrainConfig {
        anbn_core::nnet::TrainConfig {
            learning_rate: self.dnnse.learning_rate,
            epochs: self.dnnse.epochs,
            batch_utterances: self.dnnse.batch_utterances,
            seed,
        }
    }

    pub fn em_config(&self) -> anbn_core::gmm::EmConfig {
        anbn_core::gmm::EmConfig {
            components: self.ubm.components,
            iters: self.ubm.iters,
            iters_per_split: self.ubm.iters_per_split,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn front_end_names() {
        for s in ["mfcc", "mmse", "dnnse-ng", "dnnse-ns", "anbn-ng", "anbn-ns"] {
            assert_eq!(s.parse::<FrontEnd>().unwrap().to_string(), s);
        }
        assert_eq!("none".parse::<FrontEnd>().unwrap(), FrontEnd::MFCC);
        assert!("anbn".parse::<FrontEnd>().is_err());
    }

    #[test]
    fn noise_specific_front_ends_expand_per_noise() {
        let mut c = ExperimentConfig::default();
        c.noise.names = ["white", "babble", "cantine", "market", "airplane"].map(String::from).to_vec();
        c.front_ends = vec!["anbn-ns".parse().unwrap(), FrontEnd::MFCC];
        let ids: Vec<String> = c.instances().iter().map(Instance::id).collect();
        assert_eq!(
            ids,
            ["anbn-ns-white", "anbn-ns-babble", "anbn-ns-cantine", "anbn-ns-market", "anbn-ns-airplane", "mfcc"]
        );
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let c = ExperimentConfig::load(
            None,
            &[
                "seed=7".into(),
                "noise.test_snrs=[0.0, 10.0]".into(),
                "name=abc".into(),
                "ubm.components = 32".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.noise.test_snrs, vec![0.0, 10.0]);
        assert_eq!(c.name, "abc");
        assert_eq!(c.ubm.components, 32);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for o in [
            "ubm.components=48",
            "noise.names=[\"rain\"]",
            "front_ends=[\"wiener\"]",
            "enrollment=[\"noisy\"]",
            "noise.test_snrs=[5.0, 5.0]",
            "corpus.sv_speakers=[51]",
            "an.learning_rate=0.0",
            "unknown_key=1",
            "name=../x",
        ] {
            let e = ExperimentConfig::load(None, &[o.to_string()]).unwrap_err();
            assert!(matches!(e, CliError::Config(_)), "{o}: {e}");
        }
    }
}
