//! Execution of individual units.

use std::fs;
use std::path::{Path, PathBuf};

use anbn_core::anbn::{self, AnModel, AnWidths, LabeledUtterance, NoObserver};
use anbn_core::corpus::{generate_corpus, Condition, CorpusLayout, NoiseSpec, Partition, Waveform, SAMPLE_RATE};
use anbn_core::dnnse::{self, DnnseModel, MaskExample, DNNSE_INPUT_DIM};
use anbn_core::dsp::{add_deltas, energy_vad, mfcc, normalize, FeatureMatrix, FeatureStats, MfccConfig, VadConfig};
use anbn_core::eval::{self, GridCell, ScoreRecord};
use anbn_core::gmm::{self, EnrollCondition, GmmModel, SpeakerModel};
use anbn_core::mixer::{mix_at_snr, MixMetadata};
use anbn_core::nnet::ModelContainer;
use anbn_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Family, Instance};
use crate::error::{CliError, CliResult};
use crate::plan::{self, DataSet, Job, Stage, Unit};
use crate::store::RunDir;

/// Attaches the failing stage and artifact to a core error.
trait At<T> {
    fn at(self, stage: Stage, artifact: &Path) -> CliResult<T>;
}

impl<T, E: Into<Error>> At<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage, artifact: &Path) -> CliResult<T> {
        self.map_err(|e| CliError::stage(stage.name(), artifact, e))
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub speaker: u32,
    /// Clean waveform, relative to `corpus/clean`.
    pub clean_rel: PathBuf,
}

pub fn speaker_label(speaker: u32) -> String {
    format!("m{speaker:03}")
}

pub fn utterances(layout: &CorpusLayout, part: Partition) -> Vec<Utterance> {
    let mut out = Vec::new();
    let mut push = |spk: u32, txt: u32, ses: u32| {
        out.push(Utterance {
            id: CorpusLayout::utterance_id(spk, txt, ses),
            speaker: spk,
            clean_rel: CorpusLayout::relative_path(spk, txt, ses),
        })
    };
    match part {
        Partition::Train => {
            for &s in &layout.extractor_speakers {
                for &t in &layout.extractor_texts {
                    for &e in &layout.extractor_sessions {
                        push(s, t, e);
                    }
                }
            }
        }
        Partition::Enroll | Partition::Test => {
            let sessions = if part == Partition::Enroll { &layout.enroll_sessions } else { &layout.test_sessions };
            for &s in &layout.sv_speakers {
                for &e in sessions {
                    push(s, layout.sv_text, e);
                }
            }
        }
    }
    out
}

pub struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub run: &'a RunDir,
    pub layout: CorpusLayout,
}

fn mfcc57(w: &Waveform) -> anbn_core::Result<FeatureMatrix> {
    add_deltas(&mfcc(w, &MfccConfig::default())?)
}

fn write_mask(path: &Path, mask: &[bool]) -> std::io::Result<()> {
    fs::write(path, mask.iter().map(|&b| if b { b'1' } else { b'0' }).collect::<Vec<u8>>())
}

fn read_mask(path: &Path) -> anbn_core::Result<Vec<bool>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path)?
        .into_iter()
        .map(|b| match b {
            b'1' => Ok(true),
            b'0' => Ok(false),
            _ => Err(Error::Format(format!("{}: bad VAD mask byte", path.display()))),
        })
        .collect()
}

impl Ctx<'_> {
    pub fn utterances(&self, set: &DataSet) -> Vec<Utterance> {
        utterances(&self.layout, set.part)
    }

    fn wav_path(&self, set: &DataSet, u: &Utterance) -> PathBuf {
        match set.cond {
            Condition::Clean => self.run.path("corpus/clean").join(&u.clean_rel),
            Condition::Noisy { .. } => self.run.path(set.wav_dir()).join(format!("{}.wav", u.id)),
        }
    }

    fn noise_path(&self, set: &DataSet, u: &Utterance) -> PathBuf {
        self.run.path(set.wav_dir()).join(format!("{}.noise.wav", u.id))
    }

    fn base_paths(&self, set: &DataSet, u: &Utterance) -> (PathBuf, PathBuf) {
        let dir = self.run.path(plan::base_dir(set));
        (dir.join(format!("{}.feat", u.id)), dir.join(format!("{}.vad", u.id)))
    }

    fn load_base(&self, stage: Stage, set: &DataSet, u: &Utterance) -> CliResult<(FeatureMatrix, Vec<bool>)> {
        let (f, v) = self.base_paths(set, u);
        Ok((FeatureMatrix::read(&f).at(stage, &f)?, read_mask(&v).at(stage, &v)?))
    }

    /// Speech-frame features of one instance for a whole set.
    fn load_features(&self, stage: Stage, inst: &Instance, set: &DataSet) -> CliResult<Vec<(Utterance, FeatureMatrix)>> {
        self.utterances(set)
            .into_iter()
            .map(|u| {
                let f = if inst.front_end.family == Family::Mfcc {
                    let (f, mask) = self.load_base(stage, set, &u)?;
                    let p = self.base_paths(set, &u).0;
                    f.select_frames(&mask).at(stage, &p)?
                } else {
                    let p = self.run.path(plan::feature_dir(inst, set)).join(format!("{}.feat", u.id));
                    FeatureMatrix::read(&p).at(stage, &p)?
                };
                Ok((u, f))
            })
            .collect()
    }

    fn read_wav(&self, stage: Stage, p: &Path) -> CliResult<Waveform> {
        Waveform::read_wav(p).at(stage, p)
    }

    pub fn execute(&self, unit: &Unit) -> CliResult<()> {
        let stage = unit.stage;
        match &unit.job {
            Job::Corpus => self.corpus(stage),
            Job::Mix(set) => self.mix(stage, set),
            Job::Base(set) => self.base(stage, set),
            Job::TrainAn(inst) => self.train_an(stage, inst),
            Job::TrainDnnse(inst) => self.train_dnnse(stage, inst),
            Job::Enhance(inst, set) => self.enhance(stage, inst, set),
            Job::Extract(inst, set) => self.extract(stage, inst, set),
            Job::Ubm(inst) => self.ubm(stage, inst),
            Job::Enroll(inst, cond) => self.enroll(stage, inst, *cond),
            Job::Score(inst, enroll, cond) => self.score(stage, inst, *enroll, cond),
            Job::Eval => self.eval(stage),
            Job::Report => self.report(stage),
        }
    }

    fn corpus(&self, stage: Stage) -> CliResult<()> {
        let root = self.run.path("corpus/clean");
        let manifest = generate_corpus(&root, &self.layout).at(stage, &root)?;
        let p = self.run.path("corpus/manifest.csv");
        manifest.write_csv(&p).at(stage, &p)
    }

    fn mix(&self, stage: Stage, set: &DataSet) -> CliResult<()> {
        let Condition::Noisy { noise, snr_db } = &set.cond else {
            unreachable!("clean sets are not mixed")
        };
        let dir = self.run.path(set.wav_dir());
        let samples = (self.cfg.noise.stream_seconds * f64::from(SAMPLE_RATE)).round() as usize;
        let stream = NoiseSpec::named(noise, self.cfg.seed, plan::noise_partition(set))
            .and_then(|s| s.generate(samples))
            .at(stage, &dir)?;
        let mut meta = Vec::new();
        for u in self.utterances(set) {
            let src = self.run.path("corpus/clean").join(&u.clean_rel);
            let speech = self.read_wav(stage, &src)?;
            let seed = plan::mix_seed(self.cfg, set, &u.id);
            let out = self.wav_path(set, &u);
            let m = mix_at_snr(&speech, &stream, *snr_db, seed).at(stage, &out)?;
            m.noisy.write_wav(&out).at(stage, &out)?;
            if set.part == Partition::Train {
                let np = self.noise_path(set, &u);
                m.noise.write_wav(&np).at(stage, &np)?;
            }
            meta.push(MixMetadata {
                speech_id: u.id.clone(),
                noise_name: noise.clone(),
                snr_db: *snr_db,
                seed,
                partition: plan::noise_partition(set),
                noise_offset: m.offset,
                applied_gain: m.gain,
            });
        }
        let p = dir.join("mixtures.csv");
        let write = || -> anbn_core::Result<()> {
            let mut w = csv::Writer::from_path(&p)?;
            for m in &meta {
                w.serialize(m)?;
            }
            w.flush()?;
            Ok(())
        };
        write().at(stage, &p)
    }

    fn base(&self, stage: Stage, set: &DataSet) -> CliResult<()> {
        let dir = self.run.path(plan::base_dir(set));
        fs::create_dir_all(&dir).at(stage, &dir)?;
        for u in self.utterances(set) {
            let w = self.read_wav(stage, &self.wav_path(set, &u))?;
            let (fp, vp) = self.base_paths(set, &u);
            let f = mfcc57(&w).at(stage, &fp)?;
            f.write(&fp).at(stage, &fp)?;
            write_mask(&vp, &energy_vad(&w, &VadConfig::default())).at(stage, &vp)?;
        }
        Ok(())
    }

    fn train_an(&self, stage: Stage, inst: &Instance) -> CliResult<()> {
        let out = self.run.path(plan::model_path(inst).expect("AN instance"));
        let noises = plan::model_noises(self.cfg, inst);
        let mut raw: Vec<(String, FeatureMatrix, Vec<bool>, usize)> = Vec::new();
        for set in plan::model_train_sets(self.cfg, inst) {
            let label = match set.noise() {
                Some(n) => noises.iter().position(|x| x == n).expect("set in scope"),
                None => noises.len(),
            };
            for u in self.utterances(&set) {
                let (f, mask) = self.load_base(stage, &set, &u)?;
                raw.push((format!("{}/{}", set.key(), u.id), f, mask, label));
            }
        }
        let stats = FeatureStats::compute(raw.iter().map(|r| &r.1)).at(stage, &out)?;
        let stride = self.cfg.an.frame_stride;
        let data = raw
            .into_iter()
            .map(|(id, f, mask, label)| {
                let keep: Vec<bool> = mask.iter().enumerate().map(|(t, &m)| m && t % stride == 0).collect();
                let input = anbn::an_input(&f, &stats)?.select_frames(&keep)?;
                Ok(LabeledUtterance { id, input, label })
            })
            .collect::<anbn_core::Result<Vec<_>>>()
            .at(stage, &out)?;
        let seed = plan::model_seed(self.cfg, inst);
        let widths = AnWidths {
            en_hidden: self.cfg.an.en_hidden,
            dn_hidden: self.cfg.an.dn_hidden,
        };
        let mut model = anbn::build_an(&noises, widths, stats, seed).at(stage, &out)?;
        log::info!(target: stage.name(), "{}: {} utterances, labels {:?}", inst.id(), data.len(), model.labels);
        let log = anbn::train_an(&mut model, &data, &self.cfg.an_schedule(), seed, &mut NoObserver).at(stage, &out)?;
        if let Some(last) = log.last() {
            log::info!(
                target: stage.name(),
                "{}: epoch {} loss_E {:.4} loss_D {:.4} dn_accuracy {:.3}",
                inst.id(),
                last.epoch,
                last.loss_e,
                last.loss_d,
                last.dn_accuracy
            );
        }
        model.to_container().save(&out).at(stage, &out)?;
        let lp = out.with_extension("log.csv");
        fs::write(&lp, anbn::log_csv(&log)).at(stage, &lp)
    }

    fn train_dnnse(&self, stage: Stage, inst: &Instance) -> CliResult<()> {
        let out = self.run.path(plan::model_path(inst).expect("DNN-SE instance"));
        let mut raw = Vec::new();
        for set in plan::model_train_sets(self.cfg, inst) {
            for u in self.utterances(&set) {
                let wp = self.wav_path(&set, &u);
                let noisy = self.read_wav(stage, &wp)?;
                let noise = self.read_wav(stage, &self.noise_path(&set, &u))?;
                // the stored mixture is speech + noise up to quantisation
                let speech: Vec<f64> = noisy.samples().iter().zip(noise.samples()).map(|(y, d)| y - d).collect();
                let speech = Waveform::new(speech, noisy.sample_rate()).at(stage, &wp)?;
                let target = dnnse::compute_irm(&speech, &noise).at(stage, &wp)?;
                let (input, _) = dnnse::dnnse_raw_input(&noisy).at(stage, &wp)?;
                raw.push((input, target));
            }
        }
        let stats = FeatureStats::compute(raw.iter().map(|r| &r.0)).at(stage, &out)?;
        let data = raw
            .into_iter()
            .map(|(x, target)| Ok(MaskExample { input: normalize(&x, &stats)?, target }))
            .collect::<anbn_core::Result<Vec<_>>>()
            .at(stage, &out)?;
        let seed = plan::model_seed(self.cfg, inst);
        let mut net = dnnse::build_dnnse(DNNSE_INPUT_DIM, self.cfg.dnnse.hidden, seed).at(stage, &out)?;
        log::info!(target: stage.name(), "{}: {} utterances", inst.id(), data.len());
        let losses = dnnse::train_dnnse(&mut net, &data, &self.cfg.dnnse_train(seed)).at(stage, &out)?;
        DnnseModel { net, stats }.to_container().save(&out).at(stage, &out)?;
        let lp = out.with_extension("log.csv");
        let mut text = String::from("epoch,mse\n");
        for (i, l) in losses.iter().enumerate() {
            text.push_str(&format!("{},{l:?}\n", i + 1));
        }
        fs::write(&lp, text).at(stage, &lp)
    }

    fn enhance(&self, stage: Stage, inst: &Instance, set: &DataSet) -> CliResult<()> {
        let dir = self.run.path(plan::feature_dir(inst, set));
        fs::create_dir_all(&dir).at(stage, &dir)?;
        let model = match plan::model_path(inst) {
            Some(rel) => {
                let p = self.run.path(rel);
                let c = ModelContainer::load(&p).at(stage, &p)?;
                Some(DnnseModel::from_container(&c).at(stage, &p)?)
            }
            None => None,
        };
        for u in self.utterances(set) {
            let w = self.read_wav(stage, &self.wav_path(set, &u))?;
            let out = dir.join(format!("{}.feat", u.id));
            let run = || -> anbn_core::Result<FeatureMatrix> {
                let e = match &model {
                    Some(m) => dnnse::enhance_dnnse(m, &w)?,
                    None => anbn_core::mmse::enhance_mmse(&w)?,
                };
                mfcc57(&e)?.select_frames(&energy_vad(&e, &VadConfig::default()))
            };
            run().and_then(|f| f.write(&out)).at(stage, &out)?;
        }
        Ok(())
    }

    fn extract(&self, stage: Stage, inst: &Instance, set: &DataSet) -> CliResult<()> {
        let dir = self.run.path(plan::feature_dir(inst, set));
        fs::create_dir_all(&dir).at(stage, &dir)?;
        let mp = self.run.path(plan::model_path(inst).expect("AN instance"));
        let model = ModelContainer::load(&mp)
            .and_then(|c| AnModel::from_container(&c))
            .at(stage, &mp)?;
        for u in self.utterances(set) {
            let (f, mask) = self.load_base(stage, set, &u)?;
            let out = dir.join(format!("{}.feat", u.id));
            model
                .prepare(&f)
                .and_then(|x| anbn::extract_anbn(&model, &x))
                .and_then(|z| z.select_frames(&mask))
                .and_then(|z| z.write(&out))
                .at(stage, &out)?;
        }
        Ok(())
    }

    fn ubm(&self, stage: Stage, inst: &Instance) -> CliResult<()> {
        let out = self.run.path(plan::ubm_path(inst));
        let feats = self.load_features(stage, inst, &DataSet::clean(Partition::Train))?;
        let refs: Vec<&FeatureMatrix> = feats.iter().map(|(_, f)| f).collect();
        let pooled = FeatureMatrix::concat_frames(&refs).at(stage, &out)?;
        let (ubm, trace) = gmm::em_train(&pooled, &self.cfg.em_config()).at(stage, &out)?;
        if let Some((k, ll)) = trace.steps.last() {
            log::info!(target: stage.name(), "{}: {} frames, K={k}, mean log-likelihood {ll:.4}", inst.id(), pooled.frames());
        }
        ubm.write(&out).at(stage, &out)
    }

    fn read_ubm(&self, stage: Stage, inst: &Instance) -> CliResult<GmmModel> {
        let p = self.run.path(plan::ubm_path(inst));
        GmmModel::read(&p).at(stage, &p)
    }

    fn enroll(&self, stage: Stage, inst: &Instance, cond: EnrollCondition) -> CliResult<()> {
        let dir = self.run.path(plan::speaker_dir(inst, cond));
        fs::create_dir_all(&dir).at(stage, &dir)?;
        let ubm = self.read_ubm(stage, inst)?;
        let mut feats = Vec::new();
        for set in plan::enroll_sets(self.cfg, inst, cond) {
            feats.extend(self.load_features(stage, inst, &set)?);
        }
        for &spk in &self.layout.sv_speakers {
            let label = speaker_label(spk);
            let out = dir.join(format!("{label}.gmm"));
            let mine: Vec<&FeatureMatrix> = feats.iter().filter(|(u, _)| u.speaker == spk).map(|(_, f)| f).collect();
            gmm::enroll(&ubm, &mine, &label, cond, self.cfg.ubm.relevance)
                .and_then(|m| m.write(&out))
                .at(stage, &out)?;
        }
        Ok(())
    }

    fn score(&self, stage: Stage, inst: &Instance, enroll: EnrollCondition, cond: &Condition) -> CliResult<()> {
        let out = self.run.path(plan::score_path(inst, enroll, cond));
        let ubm = self.read_ubm(stage, inst)?;
        let dir = self.run.path(plan::speaker_dir(inst, enroll));
        let models = self
            .layout
            .sv_speakers
            .iter()
            .map(|&s| {
                let p = dir.join(format!("{}.gmm", speaker_label(s)));
                SpeakerModel::read(&p).at(stage, &p)
            })
            .collect::<CliResult<Vec<_>>>()?;
        let tests = self.load_features(stage, inst, &DataSet::new(Partition::Test, cond.clone()))?;
        let speakers: Vec<String> = models.iter().map(|m| m.speaker_id.clone()).collect();
        let ids: Vec<(String, String)> = tests.iter().map(|(u, _)| (u.id.clone(), speaker_label(u.speaker))).collect();
        let trials = eval::make_trials(&speakers, &ids);
        let tag = cond.to_string();
        let mut records = Vec::with_capacity(trials.len());
        for t in &trials {
            let spk = models.iter().find(|m| m.speaker_id == t.claimed_speaker).expect("enrolled speaker");
            let f = &tests.iter().find(|(u, _)| u.id == t.test_utterance).expect("test utterance").1;
            let s = gmm::llr_score(spk, &ubm, f).at(stage, &out)?;
            records.push(ScoreRecord::new(t, s, tag.clone()).at(stage, &out)?);
        }
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent).at(stage, parent)?;
        }
        eval::write_scores(&out, &records).at(stage, &out)
    }

    fn eval(&self, stage: Stage) -> CliResult<()> {
        let mut rows = Vec::new();
        for inst in self.cfg.instances() {
            for enroll in self.cfg.enroll_conditions() {
                for set in plan::test_sets(self.cfg, &inst) {
                    let p = self.run.path(plan::score_path(&inst, enroll, &set.cond));
                    let scores = eval::read_scores(&p).at(stage, &p)?;
                    let eer = eval::eer(&scores).at(stage, &p)?;
                    let targets = scores.iter().filter(|s| s.is_target).count();
                    rows.push(EerRow {
                        instance: inst.id(),
                        front_end: inst.front_end.to_string(),
                        model_noise: inst.noise.clone().unwrap_or_default(),
                        enrollment: enroll.name().into(),
                        condition: set.cond.to_string(),
                        eer,
                        targets,
                        impostors: scores.len() - targets,
                    });
                    log::info!(target: stage.name(), "{} {enroll} {}: EER {eer:.2}%", inst.id(), set.cond);
                }
            }
        }
        let p = self.run.path(plan::EER_CSV);
        write_eer_rows(&p, &rows).at(stage, &p)
    }

    fn report(&self, stage: Stage) -> CliResult<()> {
        let src = self.run.path(plan::EER_CSV);
        let rows = read_eer_rows(&src).at(stage, &src)?;
        for enroll in self.cfg.enroll_conditions() {
            let cells = grid_cells(&rows, enroll, &self.cfg.noise.names).at(stage, &src)?;
            let grid = eval::report_grid(&cells);
            let [csv_path, txt_path] = plan::table_paths(enroll).map(|p| self.run.path(p));
            let csv = grid.to_csv().at(stage, &csv_path)?;
            fs::write(&csv_path, csv).at(stage, &csv_path)?;
            let text = format!("EER (%), {enroll} enrollment\n\n{}", grid.to_text());
            fs::write(&txt_path, &text).at(stage, &txt_path)?;
            log::info!(target: stage.name(), "{enroll} enrollment\n{}", grid.to_text());
        }
        Ok(())
    }
}

/// One line of `reports/eer.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerRow {
    pub instance: String,
    pub front_end: String,
    /// Noise of a noise-specific instance, empty otherwise.
    pub model_noise: String,
    pub enrollment: String,
    pub condition: String,
    pub eer: f64,
    pub targets: usize,
    pub impostors: usize,
}

pub fn write_eer_rows(path: &Path, rows: &[EerRow]) -> anbn_core::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eer_rows(path: &Path) -> anbn_core::Result<Vec<EerRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    csv::Reader::from_path(path)?
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Table cells of one enrollment condition. A clean test result of a
/// front end that is not noise specific fills the clean row of every noise.
pub fn grid_cells(rows: &[EerRow], enroll: EnrollCondition, noises: &[String]) -> anbn_core::Result<Vec<GridCell>> {
    let mut cells = Vec::new();
    for r in rows.iter().filter(|r| r.enrollment == enroll.name()) {
        match r.condition.parse::<Condition>()? {
            Condition::Noisy { noise, snr_db } => cells.push(GridCell {
                front_end: r.front_end.clone(),
                noise,
                condition: eval::Condition::Snr(snr_db),
                eer: r.eer,
            }),
            Condition::Clean => {
                let blocks: Vec<String> = if r.model_noise.is_empty() {
                    noises.to_vec()
                } else {
                    vec![r.model_noise.clone()]
                };
                cells.extend(blocks.into_iter().map(|noise| GridCell {
                    front_end: r.front_end.clone(),
                    noise,
                    condition: eval::Condition::Clean,
                    eer: r.eer,
                }));
            }
        }
    }
    Ok(cells)
}
