//! Trials, equal error rate and result tables.
//!
//! The EER is read off the crossing of the FAR and FRR curves. Thresholds are
//! `-inf`, the midpoints between consecutive distinct scores, and `+inf`; a
//! trial is accepted when `score > threshold`. With `d_i = FRR_i - FAR_i` and
//! `i` the first threshold where `d_i >= 0`:
//!
//! ```text
//! lambda = -d_{i-1} / (d_i - d_{i-1})
//! EER    = FAR_{i-1} + lambda * (FAR_i - FAR_{i-1})
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCORES_HEADER: [&str; 5] = ["claimed_speaker", "test_utterance", "is_target", "score", "condition"];
/// Rendered in place of a missing table cell.
pub const MISSING_CELL: &str = "—";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub claimed_speaker: String,
    pub test_utterance: String,
    pub is_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub claimed_speaker: String,
    pub test_utterance: String,
    pub is_target: bool,
    pub score: f64,
    pub condition: String,
}

impl ScoreRecord {
    pub fn new(trial: &TrialRecord, score: f64, condition: impl Into<String>) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::Numerical(format!(
                "score for {} vs {} is not finite",
                trial.claimed_speaker, trial.test_utterance
            )));
        }
        Ok(Self {
            claimed_speaker: trial.claimed_speaker.clone(),
            test_utterance: trial.test_utterance.clone(),
            is_target: trial.is_target,
            score,
            condition: condition.into(),
        })
    }
}

/// Every enrolled speaker against every test utterance, given as
/// `(utterance_id, true_speaker_id)`.
pub fn make_trials(speakers: &[String], tests: &[(String, String)]) -> Vec<TrialRecord> {
    speakers
        .iter()
        .flat_map(|spk| {
            tests.iter().map(move |(utt, owner)| TrialRecord {
                claimed_speaker: spk.clone(),
                test_utterance: utt.clone(),
                is_target: owner == spk,
            })
        })
        .collect()
}

/// Equal error rate in percent from `(score, is_target)` pairs.
pub fn eer_from_pairs(pairs: &[(f64, bool)]) -> Result<f64> {
    if pairs.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Numerical("non-finite score".into()));
    }
    let n_tar = pairs.iter().filter(|p| p.1).count();
    let n_imp = pairs.len() - n_tar;
    if n_tar == 0 || n_imp == 0 {
        return Err(Error::Validation(format!(
            "EER needs both classes, got {n_tar} target and {n_imp} impostor trials"
        )));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Operating points after each block of equal scores, preceded by -inf.
    let (nt, ni) = (n_tar as f64, n_imp as f64);
    let (mut tar_below, mut imp_below) = (0usize, 0usize);
    let mut prev = (1.0, 0.0); // (FAR, FRR) at -inf
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tar_below += 1;
            } else {
                imp_below += 1;
            }
            i += 1;
        }
        let cur = ((ni - imp_below as f64) / ni, tar_below as f64 / nt);
        let d_prev = prev.1 - prev.0;
        let d_cur = cur.1 - cur.0;
        if d_cur >= 0.0 {
            let lambda = -d_prev / (d_cur - d_prev);
            return Ok(100.0 * (prev.0 + lambda * (cur.0 - prev.0)));
        }
        prev = cur;
    }
    unreachable!("FRR reaches 1 and FAR reaches 0 at +inf")
}

pub fn eer(scores: &[ScoreRecord]) -> Result<f64> {
    let pairs: Vec<(f64, bool)> = scores.iter().map(|s| (s.score, s.is_target)).collect();
    eer_from_pairs(&pairs)
}

pub fn write_scores(path: impl AsRef<Path>, scores: &[ScoreRecord]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(SCORES_HEADER)?;
    for s in scores {
        // shortest round-trip formatting keeps the file bit-exact
        w.write_record([
            s.claimed_speaker.as_str(),
            s.test_utterance.as_str(),
            if s.is_target { "1" } else { "0" },
            &format!("{:?}", s.score),
            s.condition.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(SCORES_HEADER) {
        return Err(Error::Format(format!("{}: unexpected scores header", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |what: &str| Error::Format(format!("{}: bad {what} in {:?}", path.display(), rec));
        let is_target = match &rec[2] {
            "1" => true,
            "0" => false,
            _ => return Err(bad("is_target")),
        };
        let score: f64 = rec[3].parse().map_err(|_| bad("score"))?;
        if !score.is_finite() {
            return Err(bad("score"));
        }
        out.push(ScoreRecord {
            claimed_speaker: rec[0].to_string(),
            test_utterance: rec[1].to_string(),
            is_target,
            score,
            condition: rec[4].to_string(),
        });
    }
    Ok(out)
}

/// Test condition of a table row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Snr(f64),
    Clean,
}

impl Condition {
    fn order_key(self) -> (u8, f64) {
        match self {
            Condition::Snr(s) => (0, s),
            Condition::Clean => (1, 0.0),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Snr(s) => write!(f, "{s}dB"),
            Condition::Clean => f.write_str("clean"),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "clean" {
            return Ok(Condition::Clean);
        }
        s.strip_suffix("dB")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .map(Condition::Snr)
            .ok_or_else(|| Error::param(format!("bad test condition '{s}'")))
    }
}

/// One EER value of the result table.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub front_end: String,
    pub noise: String,
    pub condition: Condition,
    pub eer: f64,
}

/// Table rows in display order: for each noise its SNRs ascending, then
/// clean, then the mean row (`None` condition).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportGrid {
    pub front_ends: Vec<String>,
    pub rows: Vec<(String, Option<Condition>, Vec<Option<f64>>)>,
}

/// Arranges cells into the result table. A noise's mean row averages every
/// condition row of that noise and is missing for any front end lacking one
/// of them.
pub fn report_grid(cells: &[GridCell]) -> ReportGrid {
    let mut front_ends: Vec<String> = Vec::new();
    let mut noises: Vec<String> = Vec::new();
    for c in cells {
        if !front_ends.contains(&c.front_end) {
            front_ends.push(c.front_end.clone());
        }
        if !noises.contains(&c.noise) {
            noises.push(c.noise.clone());
        }
    }
    let mut rows = Vec::new();
    for noise in &noises {
        let mut conds: Vec<Condition> = Vec::new();
        for c in cells.iter().filter(|c| &c.noise == noise) {
            if !conds.contains(&c.condition) {
                conds.push(c.condition);
            }
        }
        conds.sort_by(|a, b| {
            let (ka, kb) = (a.order_key(), b.order_key());
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
        });
        let mut block: Vec<Vec<Option<f64>>> = Vec::new();
        for cond in &conds {
            let vals: Vec<Option<f64>> = front_ends
                .iter()
                .map(|fe| {
                    cells
                        .iter()
                        .rev()
                        .find(|c| &c.noise == noise && c.condition == *cond && &c.front_end == fe)
                        .map(|c| c.eer)
                })
                .collect();
            rows.push((noise.clone(), Some(*cond), vals.clone()));
            block.push(vals);
        }
        let means = (0..front_ends.len())
            .map(|j| {
                let col: Option<Vec<f64>> = block.iter().map(|r| r[j]).collect();
                col.map(|v| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        rows.push((noise.clone(), None, means));
    }
    ReportGrid { front_ends, rows }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING_CELL.to_string(), |v| format!("{v:.2}"))
}

fn condition_label(c: Option<Condition>) -> String {
    c.map_or_else(|| "mean".to_string(), |c| c.to_string())
}

impl ReportGrid {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let mut header = vec!["noise".to_string(), "condition".to_string()];
        header.extend(self.front_ends.iter().cloned());
        w.write_record(&header)?;
        for (noise, cond, vals) in &self.rows {
            let mut rec = vec![noise.clone(), condition_label(*cond)];
            rec.extend(vals.iter().map(|v| cell(*v)));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut table: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["noise".to_string(), "condition".to_string()];
        header.extend(self.front_ends.iter().cloned());
        table.push(header);
        for (noise, cond, vals) in &self.rows {
            let mut rec = vec![noise.clone(), condition_label(*cond)];
            rec.extend(vals.iter().map(|v| cell(*v)));
            table.push(rec);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|j| table.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in table.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (s, &w))| {
                    let pad = w - s.chars().count();
                    if j < 2 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Groups scores by condition tag, in tag order.
pub fn group_by_condition(scores: &[ScoreRecord]) -> BTreeMap<String, Vec<ScoreRecord>> {
    let mut out: BTreeMap<String, Vec<ScoreRecord>> = BTreeMap::new();
    for s in scores {
        out.entry(s.condition.clone()).or_default().push(s.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Evaluates FAR/FRR directly at every candidate threshold.
    pub(crate) fn brute_force_eer(pairs: &[(f64, bool)]) -> f64 {
        let mut uniq: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        let mut thresholds = vec![f64::NEG_INFINITY];
        thresholds.extend(uniq.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        thresholds.push(f64::INFINITY);
        let nt = pairs.iter().filter(|p| p.1).count() as f64;
        let ni = pairs.len() as f64 - nt;
        let rates: Vec<(f64, f64)> = thresholds
            .iter()
            .map(|&t| {
                let fa = pairs.iter().filter(|p| !p.1 && p.0 > t).count() as f64 / ni;
                let fr = pairs.iter().filter(|p| p.1 && p.0 <= t).count() as f64 / nt;
                (fa, fr)
            })
            .collect();
        let i = rates.iter().position(|(fa, fr)| fr >= fa).unwrap();
        let (a0, r0) = rates[i - 1];
        let (a1, r1) = rates[i];
        let lambda = (a0 - r0) / ((r1 - a1) - (r0 - a0));
        100.0 * (a0 + lambda * (a1 - a0))
    }

    fn random_pairs(seed: u64) -> Vec<(f64, bool)> {
        let mut rng = crate::seed::rng_for(seed, &[]);
        let n = rng.random_range(2..60);
        let quantize = rng.random_bool(0.3);
        let mut pairs: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let t = rng.random_bool(0.4);
                let mut s: f64 = rng.random_range(-2.0..2.0) + if t { 1.0 } else { 0.0 };
                if quantize {
                    s = (s * 2.0).round() / 2.0;
                }
                (s, t)
            })
            .collect();
        pairs[0].1 = true;
        pairs[1].1 = false;
        pairs
    }

    #[test]
    fn matches_brute_force() {
        for seed in 0..1000 {
            let p = random_pairs(seed);
            let (a, b) = (eer_from_pairs(&p).unwrap(), brute_force_eer(&p));
            assert!((a - b).abs() < 1e-9, "seed {seed}: {a} vs {b}");
        }
    }

    #[test]
    fn closed_cases() {
        let sep = [(2.0, true), (3.0, true), (0.0, false), (1.0, false)];
        assert_eq!(eer_from_pairs(&sep).unwrap(), 0.0);
        let tied = [(1.0, true), (1.0, true), (1.0, false)];
        assert_eq!(eer_from_pairs(&tied).unwrap(), 50.0);
        let inverted = [(0.0, true), (1.0, false)];
        assert_eq!(eer_from_pairs(&inverted).unwrap(), 100.0);
        assert!(eer_from_pairs(&[(1.0, true)]).is_err());
        assert!(eer_from_pairs(&[(1.0, false), (2.0, false)]).is_err());
        assert!(eer_from_pairs(&[(f64::NAN, true), (1.0, false)]).is_err());
    }

    #[test]
    fn trial_cross() {
        let spk: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let tests: Vec<(String, String)> = (0..60).map(|i| (format!("u{i}"), format!("s{}", i % 10))).collect();
        let trials = make_trials(&spk, &tests);
        assert_eq!(trials.len(), 600);
        for s in &spk {
            assert_eq!(trials.iter().filter(|t| &t.claimed_speaker == s && t.is_target).count(), 6);
        }
        let one = make_trials(&["a".into()], &[("u".into(), "a".into())]);
        assert_eq!(one.len(), 1);
        assert!(one[0].is_target);
    }

    #[test]
    fn scores_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let trials = make_trials(&["a".into(), "b,c".into()], &[("u1".into(), "a".into())]);
        let scores: Vec<ScoreRecord> = trials
            .iter()
            .zip([0.1 + 0.2, -1e-300])
            .map(|(t, s)| ScoreRecord::new(t, s, "white_10dB").unwrap())
            .collect();
        write_scores(&path, &scores).unwrap();
        assert_eq!(read_scores(&path).unwrap(), scores);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("claimed_speaker,test_utterance,is_target,score,condition\n"));
        assert!(ScoreRecord::new(&trials[0], f64::INFINITY, "x").is_err());
    }

    fn cells_for(noises: &[&str], conds: &[Condition], fes: &[&str]) -> Vec<GridCell> {
        let mut out = Vec::new();
        let mut v = 1.0;
        for n in noises {
            for c in conds {
                for f in fes {
                    out.push(GridCell { front_end: f.to_string(), noise: n.to_string(), condition: *c, eer: v });
                    v += 1.0;
                }
            }
        }
        out
    }

    #[test]
    fn grid_layout() {
        let conds = [
            Condition::Clean,
            Condition::Snr(20.0),
            Condition::Snr(0.0),
            Condition::Snr(5.0),
            Condition::Snr(10.0),
            Condition::Snr(15.0),
        ];
        let noises = ["white", "babble", "cantine", "market", "airplane"];
        let g = report_grid(&cells_for(&noises, &conds, &["mfcc", "anbn"]));
        assert_eq!(g.rows.len(), 35);
        let labels: Vec<String> = g.rows[..7].iter().map(|r| condition_label(r.1)).collect();
        assert_eq!(labels, ["0dB", "5dB", "10dB", "15dB", "20dB", "clean", "mean"]);
        let first_six: Vec<f64> = g.rows[..6].iter().map(|r| r.2[0].unwrap()).collect();
        let mean = first_six.iter().sum::<f64>() / 6.0;
        assert_eq!(g.rows[6].2[0], Some(mean));
        let csv = g.to_csv().unwrap();
        assert!(csv.starts_with("noise,condition,mfcc,anbn\n"));
        assert!(csv.contains(&format!("white,mean,{mean:.2},")));
        assert!(g.to_text().lines().count() == 37);
    }

    #[test]
    fn grid_missing_and_empty() {
        let mut cells = cells_for(&["white"], &[Condition::Snr(0.0), Condition::Clean], &["mfcc", "mmse"]);
        cells.retain(|c| !(c.front_end == "mmse" && c.condition == Condition::Clean));
        let g = report_grid(&cells);
        let csv = g.to_csv().unwrap();
        assert!(csv.contains("white,clean,3.00,—"));
        assert!(csv.contains("white,mean,2.00,—"));
        assert_eq!(report_grid(&[]).to_csv().unwrap(), "noise,condition\n");
    }

    #[test]
    fn condition_tags() {
        for c in [Condition::Snr(0.0), Condition::Snr(-5.0), Condition::Snr(12.5), Condition::Clean] {
            assert_eq!(c.to_string().parse::<Condition>().unwrap(), c);
        }
        assert!("10".parse::<Condition>().is_err());
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(seed in 0u64..10_000) {
            let p = random_pairs(seed);
            let q: Vec<(f64, bool)> = p.iter().map(|&(s, t)| (s.exp() * 3.0 + 1.0, t)).collect();
            prop_assert!((eer_from_pairs(&p).unwrap() - eer_from_pairs(&q).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn class_swap_symmetry(seed in 0u64..10_000) {
            let p = random_pairs(seed);
            let q: Vec<(f64, bool)> = p.iter().map(|&(s, t)| (-s, !t)).collect();
            prop_assert!((eer_from_pairs(&p).unwrap() - eer_from_pairs(&q).unwrap()).abs() < 1e-9);
        }
    }
}
