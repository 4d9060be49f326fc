//! Synthetic speech through MFCCs, a small UBM, MAP enrollment and scoring.

use anbn_core::corpus::{gen_speaker_utterance, NoiseSpec, Partition};
use anbn_core::dsp::{add_deltas, energy_vad, mfcc, FeatureMatrix, MfccConfig, VadConfig};
use anbn_core::eval::{self, ScoreRecord};
use anbn_core::gmm::{em_train, enroll, llr_score, EmConfig, EnrollCondition, GmmModel, SpeakerModel};
use anbn_core::mixer::mix_at_snr;
use anbn_core::corpus::Waveform;

const SPEAKERS: [u64; 5] = [2, 3, 4, 5, 6];

fn features(w: &Waveform) -> FeatureMatrix {
    let f = add_deltas(&mfcc(w, &MfccConfig::default()).unwrap()).unwrap();
    f.select_frames(&energy_vad(w, &VadConfig::default())).unwrap()
}

fn utterance(spk: u64, session: u64) -> Waveform {
    gen_speaker_utterance(spk, 1000 * spk + session, 1, 1.5).unwrap()
}

struct Backend {
    ubm: GmmModel,
    models: Vec<SpeakerModel>,
}

fn backend() -> Backend {
    let background: Vec<FeatureMatrix> = (60..66)
        .flat_map(|s| (0..2).map(move |k| features(&utterance(s, k))))
        .collect();
    let refs: Vec<&FeatureMatrix> = background.iter().collect();
    let pooled = FeatureMatrix::concat_frames(&refs).unwrap();
    let (ubm, _) = em_train(&pooled, &EmConfig { components: 16, iters: 5, iters_per_split: 3 }).unwrap();
    let models = SPEAKERS
        .iter()
        .map(|&s| {
            let enr: Vec<FeatureMatrix> = (0..3).map(|k| features(&utterance(s, k))).collect();
            let refs: Vec<&FeatureMatrix> = enr.iter().collect();
            enroll(&ubm, &refs, &format!("m{s:03}"), EnrollCondition::Clean, 16.0).unwrap()
        })
        .collect();
    Backend { ubm, models }
}

fn score_all(b: &Backend, test: impl Fn(u64, u64) -> Waveform) -> Vec<ScoreRecord> {
    let speakers: Vec<String> = SPEAKERS.iter().map(|s| format!("m{s:03}")).collect();
    let mut tests = Vec::new();
    let mut feats = Vec::new();
    for &s in &SPEAKERS {
        for k in 10..12 {
            tests.push((format!("m{s:03}_{k}"), format!("m{s:03}")));
            feats.push(features(&test(s, k)));
        }
    }
    eval::make_trials(&speakers, &tests)
        .iter()
        .map(|t| {
            let spk = &b.models[speakers.iter().position(|s| *s == t.claimed_speaker).unwrap()];
            let f = &feats[tests.iter().position(|x| x.0 == t.test_utterance).unwrap()];
            ScoreRecord::new(t, llr_score(spk, &b.ubm, f).unwrap(), "c").unwrap()
        })
        .collect()
}

#[test]
fn clean_trials_separate_and_noise_degrades() {
    let b = backend();
    let clean = eval::eer(&score_all(&b, utterance)).unwrap();
    let noisy = eval::eer(&score_all(&b, |s, k| {
        let n = NoiseSpec::named("white", s * 100 + k, Partition::Test).unwrap().generate(16_000 * 4).unwrap();
        mix_at_snr(&utterance(s, k), &n, 0.0, k).unwrap().noisy
    }))
    .unwrap();
    assert!(clean < 20.0, "clean EER {clean}");
    assert!(noisy > clean, "0 dB white EER {noisy} vs clean {clean}");
}

#[test]
fn stored_models_score_identically() {
    let b = backend();
    let dir = tempfile::tempdir().unwrap();
    b.ubm.write(dir.path().join("ubm.gmm")).unwrap();
    b.models[0].write(dir.path().join("spk.model")).unwrap();
    let ubm = GmmModel::read(dir.path().join("ubm.gmm")).unwrap();
    let spk = SpeakerModel::read(dir.path().join("spk.model")).unwrap();
    let f = features(&utterance(SPEAKERS[0], 20));
    let before = llr_score(&b.models[0], &b.ubm, &f).unwrap();
    let after = llr_score(&spk, &ubm, &f).unwrap();
    assert_eq!(before.to_bits(), after.to_bits());

    let scores = score_all(&b, utterance);
    eval::write_scores(dir.path().join("s.csv"), &scores).unwrap();
    let back = eval::read_scores(dir.path().join("s.csv")).unwrap();
    assert_eq!(eval::eer(&back).unwrap(), eval::eer(&scores).unwrap());
}
