use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::synth::gen_speaker_utterance;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const MANIFEST_HEADER: [&str; 6] = [
    "utterance_id",
    "speaker_id",
    "session_id",
    "text_id",
    "file_path",
    "condition_tag",
];

/// `clean` or `<noise>@<snr_db>`.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Clean,
    Noisy { noise: String, snr_db: f64 },
}

impl Condition {
    pub fn noisy(noise: &str, snr_db: f64) -> Self {
        Condition::Noisy {
            noise: noise.to_string(),
            snr_db,
        }
    }

    pub fn is_clean(&self) -> bool {
        matches!(self, Condition::Clean)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Clean => f.write_str("clean"),
            Condition::Noisy { noise, snr_db } => write!(f, "{noise}@{snr_db}"),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "clean" {
            return Ok(Condition::Clean);
        }
        let (noise, snr) = s
            .split_once('@')
            .ok_or_else(|| Error::Validation(format!("bad condition tag '{s}'")))?;
        let snr_db: f64 = snr
            .parse()
            .map_err(|_| Error::Validation(format!("bad SNR in condition tag '{s}'")))?;
        if noise.is_empty() || !snr_db.is_finite() {
            return Err(Error::Validation(format!("bad condition tag '{s}'")));
        }
        Ok(Condition::noisy(noise, snr_db))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub speaker_id: u32,
    pub session_id: u32,
    pub text_id: u32,
    pub file_path: PathBuf,
    pub condition_tag: String,
}

impl ManifestEntry {
    pub fn condition(&self) -> Result<Condition> {
        self.condition_tag.parse()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(Error::DuplicateId(e.utterance_id.clone()));
            }
            e.condition()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, utterance_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.utterance_id == utterance_id)
    }

    pub fn speakers(&self) -> BTreeSet<u32> {
        self.entries.iter().map(|e| e.speaker_id).collect()
    }

    /// Writes the CSV; file paths are stored relative to the manifest's
    /// directory when possible.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        if !base.as_os_str().is_empty() {
            std::fs::create_dir_all(base)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(MANIFEST_HEADER)?;
        for e in &self.entries {
            let rel = e.file_path.strip_prefix(base).unwrap_or(&e.file_path);
            w.write_record([
                e.utterance_id.as_str(),
                &e.speaker_id.to_string(),
                &e.session_id.to_string(),
                &e.text_id.to_string(),
                &rel.to_string_lossy(),
                e.condition_tag.as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a manifest CSV, resolving relative paths against its directory
    /// and checking that every referenced file exists.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != MANIFEST_HEADER {
            return Err(Error::Format(format!(
                "manifest header mismatch: {}",
                header.join(",")
            )));
        }
        let mut entries = Vec::new();
        for rec in r.deserialize() {
            let mut e: ManifestEntry = rec?;
            if e.file_path.is_relative() {
                e.file_path = base.join(&e.file_path);
            }
            if !e.file_path.exists() {
                return Err(Error::MissingFile(e.file_path));
            }
            entries.push(e);
        }
        Self::new(entries)
    }
}

/// Which role an utterance plays in the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Front-end (AN / DNN-SE) and UBM training data.
    ExtractorTrain,
    Enroll,
    Test,
}

/// Speaker / text / session partitioning of the synthetic corpus.
///
/// Front-end training speakers and verification speakers are disjoint; the
/// verification speakers use one fixed text for enrollment and testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusLayout {
    pub extractor_speakers: Vec<u32>,
    pub extractor_texts: Vec<u32>,
    pub extractor_sessions: Vec<u32>,
    pub sv_speakers: Vec<u32>,
    pub sv_text: u32,
    pub enroll_sessions: Vec<u32>,
    pub test_sessions: Vec<u32>,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for CorpusLayout {
    fn default() -> Self {
        Self {
            extractor_speakers: (51..=60).collect(),
            extractor_texts: vec![2, 3, 4],
            extractor_sessions: vec![1, 4, 7],
            sv_speakers: (2..=11).collect(),
            sv_text: 1,
            enroll_sessions: vec![1, 4, 7],
            test_sessions: vec![2, 3, 5, 6, 8, 9],
            duration_s: 1.5,
            seed: 1,
        }
    }
}

fn check_unique(name: &str, ids: &[u32]) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(format!("{name} {id}")));
        }
    }
    if ids.is_empty() {
        return Err(Error::Validation(format!("{name} list is empty")));
    }
    Ok(())
}

impl CorpusLayout {
    pub fn validate(&self) -> Result<()> {
        check_unique("extractor speaker", &self.extractor_speakers)?;
        check_unique("extractor text", &self.extractor_texts)?;
        check_unique("extractor session", &self.extractor_sessions)?;
        check_unique("sv speaker", &self.sv_speakers)?;
        check_unique("enroll session", &self.enroll_sessions)?;
        check_unique("test session", &self.test_sessions)?;
        let ext: HashSet<_> = self.extractor_speakers.iter().collect();
        if let Some(s) = self.sv_speakers.iter().find(|s| ext.contains(s)) {
            return Err(Error::Validation(format!(
                "speaker {s} appears in both the extractor-training and verification sets"
            )));
        }
        if let Some(s) = self
            .enroll_sessions
            .iter()
            .find(|s| self.test_sessions.contains(s))
        {
            return Err(Error::Validation(format!(
                "session {s} used for both enrollment and test"
            )));
        }
        if !(1.0..=10.0).contains(&self.duration_s) {
            return Err(Error::param("utterance duration must be in [1, 10] s"));
        }
        Ok(())
    }

    pub fn utterance_id(speaker: u32, text: u32, session: u32) -> String {
        format!("m{speaker:03}_t{text:02}_s{session}")
    }

    pub fn relative_path(speaker: u32, text: u32, session: u32) -> PathBuf {
        PathBuf::from(format!("spk{speaker:03}/t{text:02}_s{session}.wav"))
    }

    /// Every (speaker, text, session) the layout requires, in a fixed order.
    pub fn expected(&self) -> Vec<(u32, u32, u32)> {
        let mut out = Vec::new();
        for &spk in &self.extractor_speakers {
            for &txt in &self.extractor_texts {
                for &ses in &self.extractor_sessions {
                    out.push((spk, txt, ses));
                }
            }
        }
        for &spk in &self.sv_speakers {
            let mut sessions: Vec<u32> = self
                .enroll_sessions
                .iter()
                .chain(&self.test_sessions)
                .copied()
                .collect();
            sessions.sort_unstable();
            for ses in sessions {
                out.push((spk, self.sv_text, ses));
            }
        }
        out
    }

    pub fn role(&self, entry: &ManifestEntry) -> Option<Role> {
        if self.extractor_speakers.contains(&entry.speaker_id) {
            Some(Role::ExtractorTrain)
        } else if self.sv_speakers.contains(&entry.speaker_id) {
            if self.enroll_sessions.contains(&entry.session_id) {
                Some(Role::Enroll)
            } else if self.test_sessions.contains(&entry.session_id) {
                Some(Role::Test)
            } else {
                None
            }
        } else {
            None
        }
    }

    pub fn speaker_seed(&self, speaker: u32) -> u64 {
        derive_seed(self.seed, &[0x5350, u64::from(speaker)])
    }

    pub fn utterance_seed(&self, speaker: u32, text: u32, session: u32) -> u64 {
        derive_seed(
            self.seed,
            &[0x5554, u64::from(speaker), u64::from(text), u64::from(session)],
        )
    }
}

/// Scans `root` for the WAV tree described by `layout`.
pub fn build_manifest(root: impl AsRef<Path>, layout: &CorpusLayout) -> Result<CorpusManifest> {
    let root = root.as_ref();
    layout.validate()?;
    let has_wav = root.is_dir()
        && walk_has_wav(root)?;
    if !has_wav {
        return Err(Error::Validation(format!(
            "corpus root {} contains no WAV files",
            root.display()
        )));
    }
    let mut entries = Vec::new();
    for (spk, txt, ses) in layout.expected() {
        let path = root.join(CorpusLayout::relative_path(spk, txt, ses));
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        entries.push(ManifestEntry {
            utterance_id: CorpusLayout::utterance_id(spk, txt, ses),
            speaker_id: spk,
            session_id: ses,
            text_id: txt,
            file_path: path,
            condition_tag: Condition::Clean.to_string(),
        });
    }
    CorpusManifest::new(entries)
}

fn walk_has_wav(dir: &Path) -> Result<bool> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            if walk_has_wav(&p)? {
                return Ok(true);
            }
        } else if p.extension().is_some_and(|e| e == "wav") {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Synthesises every utterance of `layout` under `root` and returns the
/// resulting manifest.
pub fn generate_corpus(root: impl AsRef<Path>, layout: &CorpusLayout) -> Result<CorpusManifest> {
    let root = root.as_ref();
    layout.validate()?;
    for (spk, txt, ses) in layout.expected() {
        let w = gen_speaker_utterance(
            layout.speaker_seed(spk),
            layout.utterance_seed(spk, txt, ses),
            u64::from(txt),
            layout.duration_s,
        )?;
        w.write_wav(root.join(CorpusLayout::relative_path(spk, txt, ses)))?;
    }
    build_manifest(root, layout)
}
