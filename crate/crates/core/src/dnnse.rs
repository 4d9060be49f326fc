//! Mask-estimating DNN speech enhancement on the gammatone representation.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::corpus::Waveform;
use crate::dsp::{
    add_deltas, gammatone_analyze, gammatone_synthesize, gfe, mfcc, normalize, stack_context,
    FeatureKind, FeatureMatrix, FeatureStats, GammatoneTF, MfccConfig, GAMMATONE_CHANNELS,
};
use crate::error::{Error, Result};
use crate::nnet::{loss_mse, loss_mse_grad, Activation, Freeze, LayerSpec, Mlp, ModelContainer, OutputGrad, TrainConfig};
use crate::seed::rng_for;

pub const DNNSE_CONTEXT: usize = 2;
/// Per-frame base features: 31 MFCCs with c0 plus 64 log gammatone energies.
pub const DNNSE_BASE_DIM: usize = 31 + GAMMATONE_CHANNELS;
pub const DNNSE_INPUT_DIM: usize = DNNSE_BASE_DIM * 3 * (2 * DNNSE_CONTEXT + 1);
pub const DNNSE_HIDDEN_LAYERS: usize = 3;

/// `sqrt(x / (x + d))` per unit, with `0 / 0 = 0`.
pub fn irm_from_energies(clean: &Array2<f64>, noise: &Array2<f64>) -> Result<Array2<f64>> {
    if clean.dim() != noise.dim() {
        return Err(Error::shape(format!(
            "clean energies {:?} vs noise energies {:?}",
            clean.dim(),
            noise.dim()
        )));
    }
    let mut out = Array2::zeros(clean.dim());
    ndarray::Zip::from(&mut out).and(clean).and(noise).for_each(|m, &x, &d| {
        let total = x + d;
        *m = if total > 0.0 { (x / total).sqrt().min(1.0) } else { 0.0 };
    });
    Ok(out)
}

/// Ideal ratio mask of a mixture from its clean and noise components.
pub fn compute_irm(clean: &Waveform, noise: &Waveform) -> Result<FeatureMatrix> {
    if clean.len() != noise.len() {
        return Err(Error::shape(format!(
            "clean has {} samples, noise has {}",
            clean.len(),
            noise.len()
        )));
    }
    let x = gammatone_analyze(clean)?;
    let d = gammatone_analyze(noise)?;
    let mask = irm_from_energies(x.energies(), d.energies())?;
    FeatureMatrix::new(mask, FeatureKind::Irm, frame_shift_s(&x))
}

fn frame_shift_s(tf: &GammatoneTF) -> f64 {
    tf.config().frame_shift as f64 / f64::from(crate::corpus::SAMPLE_RATE)
}

/// Concatenates per-frame extractor outputs, appends deltas and stacks
/// `±context` frames. Normalisation is applied separately.
pub fn stack_dnnse_features(parts: &[&FeatureMatrix], context: usize) -> Result<FeatureMatrix> {
    let first = parts.first().ok_or_else(|| Error::param("no extractor outputs to stack"))?;
    if let Some(p) = parts.iter().find(|p| p.frames() != first.frames()) {
        return Err(Error::shape(format!(
            "extractor framing differs: {} vs {} frames",
            p.frames(),
            first.frames()
        )));
    }
    let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| p.data().view()).collect();
    let base = FeatureMatrix::new(
        concatenate(Axis(1), &views).map_err(|e| Error::shape(e.to_string()))?,
        FeatureKind::Combined,
        first.frame_shift_s(),
    )?;
    stack_context(&add_deltas(&base)?, context, context)
}

/// Unnormalised DNN-SE input of a waveform together with its gammatone
/// analysis, which enhancement reuses for synthesis.
pub fn dnnse_raw_input(w: &Waveform) -> Result<(FeatureMatrix, GammatoneTF)> {
    let tf = gammatone_analyze(w)?;
    let m = mfcc(w, &MfccConfig::enhancement())?;
    let g = gfe(&tf)?;
    Ok((stack_dnnse_features(&[&m, &g], DNNSE_CONTEXT)?, tf))
}

pub fn build_dnnse(input_dim: usize, hidden: usize, seed: u64) -> Result<Mlp> {
    let mut specs = vec![LayerSpec::new(hidden, Activation::Relu); DNNSE_HIDDEN_LAYERS];
    specs.push(LayerSpec::new(GAMMATONE_CHANNELS, Activation::Sigmoid));
    Mlp::init(input_dim, &specs, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnnseModel {
    pub net: Mlp,
    pub stats: FeatureStats,
}

impl DnnseModel {
    pub fn to_container(&self) -> ModelContainer {
        ModelContainer {
            networks: vec![("mask".into(), self.net.clone())],
            labels: Vec::new(),
            stats: Some(self.stats.clone()),
            meta: vec![("kind".into(), "dnnse".into())],
        }
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        if c.meta("kind") != Some("dnnse") {
            return Err(Error::Format("model container does not hold a DNN-SE model".into()));
        }
        let net = c.network("mask")?.clone();
        let stats = c
            .stats
            .clone()
            .ok_or_else(|| Error::Format("DNN-SE model has no input statistics".into()))?;
        if net.output_dim() != GAMMATONE_CHANNELS || net.input_dim() != stats.dim() {
            return Err(Error::Format("DNN-SE network shape does not match its statistics".into()));
        }
        Ok(Self { net, stats })
    }

    pub fn predict_mask(&self, raw_input: &FeatureMatrix) -> Result<Array2<f64>> {
        if self.net.output_dim() != GAMMATONE_CHANNELS {
            return Err(Error::shape(format!(
                "mask network has {} outputs, need {GAMMATONE_CHANNELS}",
                self.net.output_dim()
            )));
        }
        let x = normalize(raw_input, &self.stats)?;
        self.net.predict(x.data().view())
    }
}

/// One training utterance: normalised input rows and IRM target rows.
#[derive(Debug, Clone)]
pub struct MaskExample {
    pub input: FeatureMatrix,
    pub target: FeatureMatrix,
}

/// MSE training with utterance mini-batches; returns the mean per-batch
/// training loss of each epoch.
pub fn train_dnnse(net: &mut Mlp, data: &[MaskExample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::param("no DNN-SE training utterances"));
    }
    for (i, ex) in data.iter().enumerate() {
        if ex.input.frames() != ex.target.frames() {
            return Err(Error::shape(format!(
                "example {i}: {} input rows vs {} target rows",
                ex.input.frames(),
                ex.target.frames()
            )));
        }
    }
    let mut rng = rng_for(cfg.seed, &[0x5345]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_utterances).enumerate() {
            let xs: Vec<ArrayView2<f64>> = chunk.iter().map(|&i| data[i].input.data().view()).collect();
            let ts: Vec<ArrayView2<f64>> = chunk.iter().map(|&i| data[i].target.data().view()).collect();
            let x = concatenate(Axis(0), &xs).map_err(|e| Error::shape(e.to_string()))?;
            let t = concatenate(Axis(0), &ts).map_err(|e| Error::shape(e.to_string()))?;
            if x.nrows() == 0 {
                continue;
            }
            let acts = net.forward(x.view()).map_err(|e| match e {
                Error::Numerical(_) => Error::Divergence { epoch, batch: b },
                other => other,
            })?;
            let loss = loss_mse(acts.output(), &t)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            total += loss;
            batches += 1;
            let g = loss_mse_grad(acts.output(), &t)?;
            let grads = net.backward(&acts, OutputGrad::Output(g.view()), Freeze::None, false)?;
            net.sgd_step(&grads, cfg.learning_rate)?;
        }
        let mean = total / batches.max(1) as f64;
        log::info!("train-dnnse: epoch {epoch} mse {mean:.5}");
        log.push(mean);
    }
    if !net.all_finite() {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            batch: 0,
        });
    }
    Ok(log)
}

/// Predicted mask applied to the noisy gammatone representation.
pub fn enhance_dnnse(model: &DnnseModel, noisy: &Waveform) -> Result<Waveform> {
    let (raw, tf) = dnnse_raw_input(noisy)?;
    let mask = model.predict_mask(&raw)?.mapv(|v| v.clamp(0.0, 1.0));
    gammatone_synthesize(&tf, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_speaker_utterance, gen_white_noise, SAMPLE_RATE};
    use crate::dsp::segmental_snr;
    use crate::mixer::mix_at_snr;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn irm_closed_forms() {
        let e = Array2::from_elem((3, 4), 2.5);
        let m = irm_from_energies(&e, &e).unwrap();
        assert!(m.iter().all(|v| (v - 0.5f64.sqrt()).abs() < 1e-12));
        let z = Array2::zeros((3, 4));
        assert!(irm_from_energies(&e, &z).unwrap().iter().all(|&v| v == 1.0));
        assert!(irm_from_energies(&z, &e).unwrap().iter().all(|&v| v == 0.0));
        assert!(irm_from_energies(&z, &z).unwrap().iter().all(|&v| v == 0.0));
        assert!(irm_from_energies(&e, &Array2::zeros((2, 4))).is_err());
    }

    #[test]
    fn irm_of_waveforms() {
        let clean = gen_speaker_utterance(1, 2, 1, 1.0).unwrap();
        let noise = gen_white_noise(3, clean.len()).unwrap();
        let m = compute_irm(&clean, &noise).unwrap();
        assert_eq!(m.kind(), FeatureKind::Irm);
        assert_eq!(m.dim(), GAMMATONE_CHANNELS);
        assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let silent = Waveform::zeros(clean.len(), SAMPLE_RATE);
        let ones = compute_irm(&clean, &silent).unwrap();
        let x = gammatone_analyze(&clean).unwrap();
        for (v, e) in ones.data().iter().zip(x.energies()) {
            assert_eq!(*v, if *e > 0.0 { 1.0 } else { 0.0 });
        }
        assert!(compute_irm(&silent, &noise).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(compute_irm(&clean, &gen_white_noise(3, 100).unwrap()).is_err());
    }

    #[test]
    fn stack_dims() {
        let w = gen_speaker_utterance(1, 2, 1, 1.0).unwrap();
        let (raw, tf) = dnnse_raw_input(&w).unwrap();
        assert_eq!(raw.dim(), 1425);
        assert_eq!(raw.frames(), tf.frames());
        let g = gfe(&tf).unwrap();
        assert_eq!(stack_dnnse_features(&[&g], 0).unwrap().dim(), 3 * 64);
        let short = FeatureMatrix::new(Array2::zeros((g.frames() - 1, 2)), FeatureKind::Combined, 0.01).unwrap();
        assert!(stack_dnnse_features(&[&g, &short], 2).is_err());
        let net = build_dnnse(DNNSE_INPUT_DIM, 1024, 1).unwrap();
        assert_eq!(net.output_dim(), 64);
        assert_eq!(net.layers().len(), 4);
        assert!(net.layers()[..3].iter().all(|l| l.activation == Activation::Relu && l.output_dim() == 1024));
    }

    fn toy_examples(n: usize, seed: u64) -> Vec<MaskExample> {
        let mut rng = rng_for(seed, &[]);
        (0..n)
            .map(|_| {
                let frames = rng.random_range(4..10);
                let x: Array2<f64> = Array2::from_shape_fn((frames, 6), |_| rng.random_range(-1.0..1.0));
                let t = Array2::from_shape_fn((frames, GAMMATONE_CHANNELS), |(i, j)| {
                    1.0 / (1.0 + (-(x[[i, j % 6]] * 3.0)).exp())
                });
                MaskExample {
                    input: FeatureMatrix::new(x, FeatureKind::Stacked, 0.01).unwrap(),
                    target: FeatureMatrix::new(t, FeatureKind::Irm, 0.01).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn training_beats_constant_predictor() {
        let data = toy_examples(40, 1);
        let t = FeatureMatrix::concat_frames(&data.iter().map(|e| &e.target).collect::<Vec<_>>()).unwrap();
        let mean = t.data().mean_axis(Axis(0)).unwrap();
        let floor = loss_mse(&Array2::from_shape_fn(t.data().dim(), |(_, j)| mean[j]), t.data()).unwrap();
        let cfg = TrainConfig { learning_rate: 0.5, epochs: 30, batch_utterances: 8, seed: 3 };
        let mut net = build_dnnse(6, 32, 2).unwrap();
        let log = train_dnnse(&mut net, &data, &cfg).unwrap();
        assert_eq!(log.len(), 30);
        let x = FeatureMatrix::concat_frames(&data.iter().map(|e| &e.input).collect::<Vec<_>>()).unwrap();
        let pred = net.predict(x.data().view()).unwrap();
        assert!(pred.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(loss_mse(&pred, t.data()).unwrap() <= floor, "{floor}");

        let mut again = build_dnnse(6, 32, 2).unwrap();
        assert_eq!(train_dnnse(&mut again, &data, &cfg).unwrap(), log);
        assert_eq!(again, net);
    }

    #[test]
    fn enhancement_edge_cases() {
        let net = build_dnnse(DNNSE_INPUT_DIM, 8, 1).unwrap();
        let silent = Waveform::zeros(16000, SAMPLE_RATE);
        let (raw, _) = dnnse_raw_input(&silent).unwrap();
        let mut stats = FeatureStats::compute([&raw]).unwrap();
        stats.var.fill(1.0);
        let model = DnnseModel { net, stats };
        let out = enhance_dnnse(&model, &silent).unwrap();
        assert!(out.samples().iter().all(|&s| s == 0.0));
        let back = DnnseModel::from_container(&ModelContainer::from_bytes(&model.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn oracle_mask_improves_segmental_snr() {
        let mut gains = Vec::new();
        for i in 0..6u64 {
            let clean = gen_speaker_utterance(10 + i, 20 + i, 1, 1.5).unwrap();
            let noise = gen_white_noise(30 + i, clean.len()).unwrap();
            let mix = mix_at_snr(&clean, &noise, 5.0, i).unwrap();
            let mask = compute_irm(&mix.speech, &mix.noise).unwrap();
            let tf = gammatone_analyze(&mix.noisy).unwrap();
            let enhanced = gammatone_synthesize(&tf, mask.data()).unwrap();
            let before = segmental_snr(&mix.speech, &mix.noisy).unwrap();
            let after = segmental_snr(&mix.speech, &enhanced).unwrap();
            gains.push(after - before);
        }
        assert!(crate::eval::median(&gains).unwrap() > 0.0, "{gains:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn irm_range_scale_and_monotonicity(
            x in prop::collection::vec(0.0f64..10.0, 12),
            d in prop::collection::vec(0.0f64..10.0, 12),
            alpha in 1e-3f64..1e3,
        ) {
            let xa = Array2::from_shape_vec((3, 4), x).unwrap();
            let da = Array2::from_shape_vec((3, 4), d).unwrap();
            let m = irm_from_energies(&xa, &da).unwrap();
            prop_assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
            let ms = irm_from_energies(&(&xa * alpha), &(&da * alpha)).unwrap();
            for (a, b) in m.iter().zip(&ms) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let more = irm_from_energies(&(&xa * 2.0), &da).unwrap();
            for (a, b) in m.iter().zip(&more) {
                prop_assert!(*b >= *a);
            }
        }
    }
}
