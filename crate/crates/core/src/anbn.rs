//! Adversarial bottleneck features.
//!
//! An encoder (EN) maps stacked MFCC context windows to a 128-dim tanh
//! bottleneck; a discriminator (DN) classifies the bottleneck into noise
//! types plus clean. Training alternates: the EN is pushed towards making
//! every frame look clean to the DN, the DN towards recognising the true
//! condition.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::dsp::{normalize, stack_context, FeatureKind, FeatureMatrix, FeatureStats, MFCC_FULL_DIM};
use crate::error::{Error, Result};
use crate::nnet::{
    ce_softmax_grad, loss_ce, Activation, Freeze, LayerSpec, Mlp, ModelContainer, OutputGrad,
};
use crate::seed::{derive_seed, rng_for};

pub const CONTEXT: usize = 5;
pub const AN_INPUT_DIM: usize = MFCC_FULL_DIM * (2 * CONTEXT + 1);
pub const BOTTLENECK_DIM: usize = 128;
pub const CLEAN_LABEL: &str = "clean";
pub const MAX_NOISES: usize = 16;

const STREAM_EN: u64 = 1;
const STREAM_DN: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_COIN: u64 = 4;

/// Hidden widths of the two networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnWidths {
    pub en_hidden: usize,
    pub dn_hidden: usize,
}

impl Default for AnWidths {
    fn default() -> Self {
        Self {
            en_hidden: 1024,
            dn_hidden: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnModel {
    pub en: Mlp,
    pub dn: Mlp,
    /// Noise names in DN output order, then [`CLEAN_LABEL`].
    pub labels: Vec<String>,
    /// Statistics of the unstacked MFCC input.
    pub stats: FeatureStats,
}

pub fn build_an(noise_names: &[String], widths: AnWidths, stats: FeatureStats, seed: u64) -> Result<AnModel> {
    if noise_names.is_empty() || noise_names.len() > MAX_NOISES {
        return Err(Error::param(format!(
            "need between 1 and {MAX_NOISES} noise types, got {}",
            noise_names.len()
        )));
    }
    if let Some(n) = noise_names.iter().find(|n| *n == CLEAN_LABEL) {
        return Err(Error::param(format!("'{n}' is reserved for the clean class")));
    }
    for (i, n) in noise_names.iter().enumerate() {
        if noise_names[..i].contains(n) {
            return Err(Error::DuplicateId(format!("noise type {n}")));
        }
    }
    if stats.dim() != MFCC_FULL_DIM {
        return Err(Error::shape(format!(
            "AN input statistics must have {MFCC_FULL_DIM} dims, got {}",
            stats.dim()
        )));
    }
    stats.validate()?;
    if widths.en_hidden == 0 || widths.dn_hidden == 0 {
        return Err(Error::param("hidden widths must be positive"));
    }
    let en = Mlp::init(
        AN_INPUT_DIM,
        &[
            LayerSpec::new(widths.en_hidden, Activation::Softplus),
            LayerSpec::new(widths.en_hidden, Activation::Softplus),
            LayerSpec::new(BOTTLENECK_DIM, Activation::Tanh),
        ],
        derive_seed(seed, &[STREAM_EN]),
    )?;
    let dn = Mlp::init(
        BOTTLENECK_DIM,
        &[
            LayerSpec::new(widths.dn_hidden, Activation::Sigmoid),
            LayerSpec::new(widths.dn_hidden, Activation::Sigmoid),
            LayerSpec::new(noise_names.len() + 1, Activation::Softmax),
        ],
        derive_seed(seed, &[STREAM_DN]),
    )?;
    let mut labels = noise_names.to_vec();
    labels.push(CLEAN_LABEL.to_string());
    Ok(AnModel { en, dn, labels, stats })
}

impl AnModel {
    pub fn clean_index(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn label_index(&self, name: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::Validation(format!("label '{name}' is not one of {:?}", self.labels)))
    }

    /// Normalised, context-stacked EN input for a 57-dim MFCC matrix.
    pub fn prepare(&self, mfcc_full: &FeatureMatrix) -> Result<FeatureMatrix> {
        an_input(mfcc_full, &self.stats)
    }

    pub fn to_container(&self) -> ModelContainer {
        ModelContainer {
            networks: vec![("en".into(), self.en.clone()), ("dn".into(), self.dn.clone())],
            labels: self.labels.clone(),
            stats: Some(self.stats.clone()),
            meta: vec![("kind".into(), "anbn".into())],
        }
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        if c.meta("kind") != Some("anbn") {
            return Err(Error::Format("model container does not hold an AN model".into()));
        }
        let stats = c
            .stats
            .clone()
            .ok_or_else(|| Error::Format("AN model has no input statistics".into()))?;
        let m = Self {
            en: c.network("en")?.clone(),
            dn: c.network("dn")?.clone(),
            labels: c.labels.clone(),
            stats,
        };
        if m.en.input_dim() != AN_INPUT_DIM
            || m.en.output_dim() != BOTTLENECK_DIM
            || m.dn.input_dim() != BOTTLENECK_DIM
            || m.dn.output_dim() != m.labels.len()
            || m.labels.last().map(String::as_str) != Some(CLEAN_LABEL)
        {
            return Err(Error::Format("AN model networks have inconsistent shapes".into()));
        }
        Ok(m)
    }
}

pub fn an_input(mfcc_full: &FeatureMatrix, stats: &FeatureStats) -> Result<FeatureMatrix> {
    if mfcc_full.kind() != FeatureKind::MfccFull {
        return Err(Error::Validation(format!("AN input must be MFCC features, got {}", mfcc_full.kind())));
    }
    stack_context(&normalize(mfcc_full, stats)?, CONTEXT, CONTEXT)
}

/// Bottleneck features of one utterance.
pub fn extract_anbn(model: &AnModel, stacked: &FeatureMatrix) -> Result<FeatureMatrix> {
    if stacked.dim() != AN_INPUT_DIM {
        return Err(Error::shape(format!(
            "AN input must have {AN_INPUT_DIM} dims, got {}",
            stacked.dim()
        )));
    }
    let z = model.en.predict(stacked.data().view())?;
    FeatureMatrix::new(z, FeatureKind::Anbn, stacked.frame_shift_s())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnSchedule {
    pub en_updates_per_batch: usize,
    pub dn_update_probability: f64,
    pub epochs: usize,
    pub batch_utterances: usize,
    pub learning_rate: f64,
}

impl Default for AnSchedule {
    fn default() -> Self {
        Self {
            en_updates_per_batch: 3,
            dn_update_probability: 0.5,
            epochs: 30,
            batch_utterances: 32,
            learning_rate: 0.01,
        }
    }
}

impl AnSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dn_update_probability) {
            return Err(Error::param("DN update probability must be in [0, 1]"));
        }
        if self.en_updates_per_batch == 0 || self.epochs == 0 || self.batch_utterances == 0 {
            return Err(Error::param("schedule counts must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, utterances: usize) -> usize {
        utterances.div_ceil(self.batch_utterances)
    }
}

/// The DN-update decisions of a run, one per mini-batch in training order.
pub fn dn_coin_sequence(seed: u64, probability: f64, batches: usize) -> Vec<bool> {
    let mut rng = rng_for(seed, &[STREAM_COIN]);
    (0..batches).map(|_| rng.random_bool(probability)).collect()
}

/// One training utterance: EN input frames and its condition label index.
#[derive(Debug, Clone)]
pub struct LabeledUtterance {
    pub id: String,
    pub input: FeatureMatrix,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_e: f64,
    pub loss_d: f64,
    /// DN frame accuracy on the true labels, measured before each batch's
    /// updates.
    pub dn_accuracy: f64,
}

pub const LOG_HEADER: &str = "epoch,loss_E,loss_D,dn_accuracy";

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for l in log {
        s.push_str(&format!("{},{:?},{:?},{:?}\n", l.epoch, l.loss_e, l.loss_d, l.dn_accuracy));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Update {
    Encoder,
    Discriminator,
}

/// Hooks into [`train_an`]; every method defaults to a no-op.
pub trait TrainObserver {
    fn before_update(&mut self, _update: Update, _model: &AnModel) {}
    fn after_update(&mut self, _update: Update, _model: &AnModel) {}
    fn on_coin(&mut self, _epoch: usize, _batch: usize, _dn_update: bool) {}
    fn on_epoch(&mut self, _log: &EpochLog) {}
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// `loss_ce(DN(EN(x)), L)` with every row of `L` the one-hot `label`, or the
/// per-frame labels when `labels` is given.
pub fn an_losses(model: &AnModel, x: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, f64)> {
    let p = model.dn.predict(model.en.predict(x)?.view())?;
    let clean = one_hot(&vec![model.clean_index(); labels.len()], model.labels.len());
    Ok((loss_ce(&p, &clean)?, loss_ce(&p, &one_hot(labels, model.labels.len()))?))
}

fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        out[[i, l]] = 1.0;
    }
    out
}

fn accuracy(probs: &Array2<f64>, labels: &[usize]) -> usize {
    probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &l)| {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i);
            best == Some(l)
        })
        .count()
}

/// Alternating adversarial training. Per mini-batch: several EN updates
/// against all-clean labels through the frozen DN, then, if the seeded coin
/// says so, one DN update against the true labels with the EN frozen.
pub fn train_an(
    model: &mut AnModel,
    data: &[LabeledUtterance],
    schedule: &AnSchedule,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<EpochLog>> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::param("no AN training utterances"));
    }
    let classes = model.labels.len();
    for u in data {
        if u.label >= classes {
            return Err(Error::Validation(format!(
                "utterance {} has label {} outside {:?}",
                u.id, u.label, model.labels
            )));
        }
        if u.input.dim() != AN_INPUT_DIM {
            return Err(Error::shape(format!(
                "utterance {} has {} dims, AN input is {AN_INPUT_DIM}",
                u.id,
                u.input.dim()
            )));
        }
    }
    let mut shuffle_rng = rng_for(seed, &[STREAM_SHUFFLE]);
    let per_epoch = schedule.batches_per_epoch(data.len());
    let coins = dn_coin_sequence(seed, schedule.dn_update_probability, per_epoch * schedule.epochs);
    let clean = model.clean_index();
    let lr = schedule.learning_rate;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(schedule.epochs);

    for epoch in 1..=schedule.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum_e, mut n_e, mut sum_d, mut n_d) = (0.0, 0usize, 0.0, 0usize);
        let (mut correct, mut frames) = (0usize, 0usize);
        for (b, chunk) in order.chunks(schedule.batch_utterances).enumerate() {
            let views: Vec<ArrayView2<f64>> = chunk.iter().map(|&i| data[i].input.data().view()).collect();
            let x = concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
            let truth: Vec<usize> = chunk
                .iter()
                .flat_map(|&i| std::iter::repeat_n(data[i].label, data[i].input.frames()))
                .collect();
            if truth.is_empty() {
                continue;
            }
            let clean_labels = one_hot(&vec![clean; truth.len()], classes);
            let true_labels = one_hot(&truth, classes);
            // non-finite activations surface as numerical errors in forward()
            let diverged = |e| match e {
                Error::Numerical(_) => Error::Divergence { epoch, batch: b },
                other => other,
            };

            for k in 0..schedule.en_updates_per_batch {
                observer.before_update(Update::Encoder, model);
                let en_acts = model.en.forward(x.view()).map_err(diverged)?;
                let dn_acts = model.dn.forward(en_acts.output().view()).map_err(diverged)?;
                let p = dn_acts.output();
                let loss = loss_ce(p, &clean_labels)?;
                if !loss.is_finite() || p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence { epoch, batch: b });
                }
                if k == 0 {
                    correct += accuracy(p, &truth);
                    frames += truth.len();
                }
                sum_e += loss;
                n_e += 1;
                let g = ce_softmax_grad(p, &clean_labels)?;
                let dn_grads = model.dn.backward(&dn_acts, OutputGrad::PreActivation(g.view()), Freeze::All, true)?;
                let dz = dn_grads.input.expect("input gradient requested");
                let en_grads = model.en.backward(&en_acts, OutputGrad::Output(dz.view()), Freeze::None, false)?;
                model.en.sgd_step(&en_grads, lr)?;
                observer.after_update(Update::Encoder, model);
            }

            let flip = coins[(epoch - 1) * per_epoch + b];
            observer.on_coin(epoch, b, flip);
            if flip {
                observer.before_update(Update::Discriminator, model);
                let z = model.en.predict(x.view()).map_err(diverged)?;
                let dn_acts = model.dn.forward(z.view()).map_err(diverged)?;
                let loss = loss_ce(dn_acts.output(), &true_labels)?;
                if !loss.is_finite() || dn_acts.output().iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence { epoch, batch: b });
                }
                sum_d += loss;
                n_d += 1;
                let g = ce_softmax_grad(dn_acts.output(), &true_labels)?;
                let grads = model.dn.backward(&dn_acts, OutputGrad::PreActivation(g.view()), Freeze::None, false)?;
                model.dn.sgd_step(&grads, lr)?;
                observer.after_update(Update::Discriminator, model);
            }
        }
        let entry = EpochLog {
            epoch,
            loss_e: sum_e / n_e.max(1) as f64,
            loss_d: if n_d == 0 { f64::NAN } else { sum_d / n_d as f64 },
            dn_accuracy: correct as f64 / frames.max(1) as f64,
        };
        log::info!(
            "train-an: epoch {epoch} loss_E {:.4} loss_D {:.4} dn_acc {:.3}",
            entry.loss_e,
            entry.loss_d,
            entry.dn_accuracy
        );
        observer.on_epoch(&entry);
        log.push(entry);
    }
    if !model.en.all_finite() || !model.dn.all_finite() {
        return Err(Error::Divergence {
            epoch: schedule.epochs,
            batch: per_epoch,
        });
    }
    Ok(log)
}

/// A fresh DN-shaped classifier over fixed features, used to measure how
/// much condition information those features carry.
pub struct Probe {
    /// Per-dimension standardisation fitted on the probe's training frames;
    /// without it a sigmoid probe on small-variance bottleneck outputs stays
    /// at the class prior.
    pub stats: FeatureStats,
    pub net: Mlp,
}

pub fn train_probe(
    data: &[(FeatureMatrix, usize)],
    classes: usize,
    hidden: usize,
    schedule: &AnSchedule,
    seed: u64,
) -> Result<Probe> {
    schedule.validate()?;
    let dim = data.first().ok_or_else(|| Error::param("no probe training data"))?.0.dim();
    let stats = FeatureStats::compute(data.iter().map(|d| &d.0))?;
    let inputs = data
        .iter()
        .map(|(f, _)| normalize(f, &stats))
        .collect::<Result<Vec<_>>>()?;
    let mut net = Mlp::init(
        dim,
        &[
            LayerSpec::new(hidden, Activation::Sigmoid),
            LayerSpec::new(hidden, Activation::Sigmoid),
            LayerSpec::new(classes, Activation::Softmax),
        ],
        derive_seed(seed, &[STREAM_DN]),
    )?;
    let mut rng = rng_for(seed, &[STREAM_SHUFFLE]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..schedule.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(schedule.batch_utterances) {
            let views: Vec<ArrayView2<f64>> = chunk.iter().map(|&i| inputs[i].data().view()).collect();
            let x = concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
            let truth: Vec<usize> = chunk
                .iter()
                .flat_map(|&i| std::iter::repeat_n(data[i].1, data[i].0.frames()))
                .collect();
            let labels = one_hot(&truth, classes);
            let acts = net.forward(x.view())?;
            let g = ce_softmax_grad(acts.output(), &labels)?;
            let grads = net.backward(&acts, OutputGrad::PreActivation(g.view()), Freeze::None, false)?;
            net.sgd_step(&grads, schedule.learning_rate)?;
        }
    }
    Ok(Probe { stats, net })
}

/// Frame accuracy of a probe over labelled utterances.
pub fn probe_accuracy(probe: &Probe, data: &[(FeatureMatrix, usize)]) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for (f, label) in data {
        let p = probe.net.predict(normalize(f, &probe.stats)?.data().view())?;
        correct += accuracy(&p, &vec![*label; f.frames()]);
        total += f.frames();
    }
    if total == 0 {
        return Err(Error::param("no probe evaluation frames"));
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    const SMALL: AnWidths = AnWidths { en_hidden: 16, dn_hidden: 12 };

    fn toy_data(n: usize, seed: u64) -> Vec<LabeledUtterance> {
        let mut rng = rng_for(seed, &[]);
        (0..n)
            .map(|i| {
                let label = i % 3;
                let frames = rng.random_range(3..9);
                let data = Array2::from_shape_fn((frames, AN_INPUT_DIM), |(_, d)| {
                    rng.random_range(-1.0..1.0) + if d % 3 == label { 0.5 } else { 0.0 }
                });
                LabeledUtterance {
                    id: format!("u{i}"),
                    input: FeatureMatrix::new(data, FeatureKind::Stacked, 0.01).unwrap(),
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn architecture() {
        let stats = FeatureStats::identity(MFCC_FULL_DIM);
        let m = build_an(&names(&["white", "babble", "cantine", "market", "airplane"]), AnWidths::default(), stats.clone(), 1).unwrap();
        assert_eq!(m.dn.output_dim(), 6);
        assert_eq!(m.en.input_dim(), 627);
        assert_eq!(m.en.output_dim(), 128);
        let acts: Vec<Activation> = m.en.layers().iter().chain(m.dn.layers()).map(|l| l.activation).collect();
        use Activation::*;
        assert_eq!(acts, [Softplus, Softplus, Tanh, Sigmoid, Sigmoid, Softmax]);
        assert_eq!(m.en.layers()[0].output_dim(), 1024);
        assert_eq!(m.dn.layers()[1].output_dim(), 1024);
        assert_eq!(*m.labels.last().unwrap(), "clean");

        let ns = build_an(&names(&["white"]), SMALL, stats.clone(), 1).unwrap();
        assert_eq!(ns.dn.output_dim(), 2);
        assert_eq!(ns, build_an(&names(&["white"]), SMALL, stats.clone(), 1).unwrap());
        assert_ne!(ns, build_an(&names(&["white"]), SMALL, stats.clone(), 2).unwrap());
        assert!(build_an(&[], SMALL, stats.clone(), 1).is_err());
        assert!(build_an(&names(&["clean"]), SMALL, stats.clone(), 1).is_err());
        assert!(build_an(&names(&["a", "a"]), SMALL, stats, 1).is_err());
    }

    #[test]
    fn extraction_contract() {
        let m = build_an(&names(&["white"]), SMALL, FeatureStats::identity(MFCC_FULL_DIM), 3).unwrap();
        let data = toy_data(4, 5);
        let f = extract_anbn(&m, &data[0].input).unwrap();
        assert_eq!(f.dim(), BOTTLENECK_DIM);
        assert_eq!(f.frames(), data[0].input.frames());
        assert_eq!(f.kind(), FeatureKind::Anbn);
        assert!(f.data().iter().all(|v| v.abs() < 1.0));
        // no coupling between frames at extraction time
        let both = FeatureMatrix::concat_frames(&[&data[0].input, &data[1].input]).unwrap();
        let fb = extract_anbn(&m, &both).unwrap();
        assert_eq!(fb.data().slice(ndarray::s![..f.frames(), ..]), f.data());
        let bad = FeatureMatrix::new(Array2::zeros((2, 10)), FeatureKind::Stacked, 0.01).unwrap();
        assert!(extract_anbn(&m, &bad).is_err());
    }

    struct FreezeCheck {
        snapshot: Option<AnModel>,
        en_updates: usize,
        dn_updates: usize,
        coins: Vec<bool>,
    }

    impl TrainObserver for FreezeCheck {
        fn before_update(&mut self, _: Update, model: &AnModel) {
            self.snapshot = Some(model.clone());
        }
        fn after_update(&mut self, u: Update, model: &AnModel) {
            let before = self.snapshot.take().unwrap();
            match u {
                Update::Encoder => {
                    assert_eq!(before.dn, model.dn);
                    assert_ne!(before.en, model.en);
                    self.en_updates += 1;
                }
                Update::Discriminator => {
                    assert_eq!(before.en, model.en);
                    assert_ne!(before.dn, model.dn);
                    self.dn_updates += 1;
                }
            }
        }
        fn on_coin(&mut self, _: usize, _: usize, flip: bool) {
            self.coins.push(flip);
        }
    }

    #[test]
    fn schedule_and_freeze() {
        let mut m = build_an(&names(&["white", "babble"]), SMALL, FeatureStats::identity(MFCC_FULL_DIM), 4).unwrap();
        let data = toy_data(20, 6);
        let schedule = AnSchedule {
            epochs: 3,
            batch_utterances: 8,
            learning_rate: 0.1,
            ..AnSchedule::default()
        };
        let mut obs = FreezeCheck { snapshot: None, en_updates: 0, dn_updates: 0, coins: Vec::new() };
        let log = train_an(&mut m, &data, &schedule, 9, &mut obs).unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(obs.en_updates, 3 * 3 * 3);
        assert_eq!(obs.coins, dn_coin_sequence(9, 0.5, 9));
        assert_eq!(obs.dn_updates, obs.coins.iter().filter(|&&c| c).count());
        assert_ne!(dn_coin_sequence(9, 0.5, 64), dn_coin_sequence(10, 0.5, 64));
        assert!(log_csv(&log).starts_with("epoch,loss_E,loss_D,dn_accuracy\n1,"));
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_data(10, 7);
        let schedule = AnSchedule { epochs: 2, batch_utterances: 4, ..AnSchedule::default() };
        let run = || {
            let mut m = build_an(&names(&["white", "babble"]), SMALL, FeatureStats::identity(MFCC_FULL_DIM), 4).unwrap();
            let log = train_an(&mut m, &data, &schedule, 3, &mut NoObserver).unwrap();
            (m, log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(log_csv(&la), log_csv(&lb));
    }

    /// Recomputes the losses the trainer sees on a single-batch epoch.
    struct LossProbe {
        x: Array2<f64>,
        truth: Vec<usize>,
        seen: Vec<(f64, f64)>,
    }

    impl TrainObserver for LossProbe {
        fn before_update(&mut self, u: Update, model: &AnModel) {
            if u == Update::Encoder {
                self.seen.push(an_losses(model, self.x.view(), &self.truth).unwrap());
            }
        }
    }

    #[test]
    fn logged_loss_matches_direct_computation() {
        let data = toy_data(5, 8);
        let views: Vec<_> = data.iter().map(|u| u.input.data().view()).collect();
        let x = concatenate(Axis(0), &views).unwrap();
        let truth: Vec<usize> = data.iter().flat_map(|u| std::iter::repeat_n(u.label, u.input.frames())).collect();
        let mut m = build_an(&names(&["white", "babble"]), SMALL, FeatureStats::identity(MFCC_FULL_DIM), 4).unwrap();
        // identity order: one batch holding everything, any shuffle gives the same rows as a set
        let schedule = AnSchedule { epochs: 1, batch_utterances: 5, dn_update_probability: 0.0, ..AnSchedule::default() };
        let mut probe = LossProbe { x: x.clone(), truth: truth.clone(), seen: Vec::new() };
        let log = train_an(&mut m, &data, &schedule, 1, &mut probe).unwrap();
        let mean_e = probe.seen.iter().map(|s| s.0).sum::<f64>() / 3.0;
        assert!((log[0].loss_e - mean_e).abs() < 1e-12);
        assert!(log[0].loss_d.is_nan());
    }

    #[test]
    fn bad_labels_and_divergence() {
        let mut m = build_an(&names(&["white"]), SMALL, FeatureStats::identity(MFCC_FULL_DIM), 4).unwrap();
        let mut data = toy_data(3, 9);
        for u in &mut data {
            u.label = u.label.min(1);
        }
        data[0].label = 2;
        assert!(matches!(
            train_an(&mut m, &data, &AnSchedule::default(), 1, &mut NoObserver),
            Err(Error::Validation(_))
        ));
        data[0].label = 0;
        *m.en.param_mut(1, 0) = f64::NAN;
        assert!(matches!(
            train_an(&mut m, &data, &AnSchedule::default(), 1, &mut NoObserver),
            Err(Error::Divergence { epoch: 1, batch: 0 })
        ));
    }

    #[test]
    fn container_roundtrip() {
        let mut stats = FeatureStats::identity(MFCC_FULL_DIM);
        stats.mean = Array1::linspace(-1.0, 1.0, MFCC_FULL_DIM);
        let m = build_an(&names(&["white", "babble"]), SMALL, stats, 4).unwrap();
        let back = AnModel::from_container(&ModelContainer::from_bytes(&m.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn probe_learns_separable_labels() {
        let data: Vec<(FeatureMatrix, usize)> = toy_data(30, 10).into_iter().map(|u| (u.input, u.label)).collect();
        let schedule = AnSchedule { epochs: 20, batch_utterances: 10, learning_rate: 0.5, ..AnSchedule::default() };
        let probe = train_probe(&data, 3, 8, &schedule, 1).unwrap();
        assert!(probe_accuracy(&probe, &data).unwrap() > 0.9);
    }
}
