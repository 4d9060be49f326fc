//! Diagonal-covariance GMM-UBM backend: EM training by binary splitting,
//! mean-only MAP adaptation and log-likelihood-ratio scoring.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use crate::dsp::{put_f64s, put_string, ByteReader, FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

pub const GMM_MAGIC: &[u8; 4] = b"GUBM";
pub const GMM_VERSION: u32 = 1;
pub const DEFAULT_RELEVANCE: f64 = 16.0;
/// Variance floor as a fraction of the global per-dimension variance.
pub const VARIANCE_FLOOR_RATIO: f64 = 1e-3;
/// Relative slack allowed when asserting EM monotonicity.
pub const EM_MONOTONE_SLACK: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Array1<f64>,
    means: Array2<f64>,
    vars: Array2<f64>,
    var_floor: Array1<f64>,
    kind: FeatureKind,
}

/// Sufficient statistics of one E-step.
struct Stats {
    n: Array1<f64>,
    fx: Array2<f64>,
    fxx: Array2<f64>,
    total_ll: f64,
}

impl GmmModel {
    pub fn new(
        weights: Array1<f64>,
        means: Array2<f64>,
        vars: Array2<f64>,
        var_floor: Array1<f64>,
        kind: FeatureKind,
    ) -> Result<Self> {
        let (k, d) = means.dim();
        if k == 0 || d == 0 {
            return Err(Error::param("GMM needs at least one component and dimension"));
        }
        if weights.len() != k || vars.dim() != (k, d) || var_floor.len() != d {
            return Err(Error::shape("GMM parameter shapes are inconsistent"));
        }
        if (weights.sum() - 1.0).abs() > 1e-10 || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Validation("GMM weights must form a simplex".into()));
        }
        if means.iter().chain(&vars).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite GMM parameters".into()));
        }
        for row in vars.rows() {
            if row.iter().zip(&var_floor).any(|(&v, &f)| !(v > 0.0) || v < f) {
                return Err(Error::Validation("GMM variance below floor".into()));
            }
        }
        Ok(Self {
            weights,
            means,
            vars,
            var_floor,
            kind,
        })
    }

    pub fn components(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn vars(&self) -> &Array2<f64> {
        &self.vars
    }

    pub fn var_floor(&self) -> &Array1<f64> {
        &self.var_floor
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    fn check(&self, f: &FeatureMatrix) -> Result<()> {
        if f.dim() != self.dim() {
            return Err(Error::shape(format!(
                "GMM has {} dims, features have {}",
                self.dim(),
                f.dim()
            )));
        }
        Ok(())
    }

    /// Per-frame, per-component `log w_k + log N(x | m_k, v_k)`.
    fn joint_log_probs(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let inv = self.vars.mapv(|v| 1.0 / v);
        let m_over_v = &self.means * &inv;
        let consts: Array1<f64> = (0..self.components())
            .map(|k| {
                let r = self.vars.row(k);
                let m = self.means.row(k);
                self.weights[k].ln()
                    - 0.5
                        * (self.dim() as f64 * LN_2PI
                            + r.iter().map(|v| v.ln()).sum::<f64>()
                            + m.iter().zip(&r).map(|(m, v)| m * m / v).sum::<f64>())
            })
            .collect();
        let x2 = x.mapv(|v| v * v);
        let mut out = x.dot(&m_over_v.t());
        out.scaled_add(-0.5, &x2.dot(&inv.t()));
        out += &consts;
        out
    }

    /// Converts joint log-probabilities into posteriors in place; returns
    /// per-frame log-likelihoods.
    fn normalize_rows(jl: &mut Array2<f64>) -> Array1<f64> {
        let mut ll = Array1::zeros(jl.nrows());
        for (mut row, l) in jl.rows_mut().into_iter().zip(ll.iter_mut()) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            if max == f64::NEG_INFINITY {
                *l = f64::NEG_INFINITY;
                row.fill(0.0);
                continue;
            }
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row /= sum;
            *l = max + sum.ln();
        }
        ll
    }

    /// Per-frame log-likelihoods.
    pub fn frame_log_likelihoods(&self, f: &FeatureMatrix) -> Result<Array1<f64>> {
        self.check(f)?;
        let mut out = Array1::zeros(f.frames());
        for start in (0..f.frames()).step_by(CHUNK) {
            let end = (start + CHUNK).min(f.frames());
            let mut jl = self.joint_log_probs(f.data().slice(s![start..end, ..]));
            out.slice_mut(s![start..end]).assign(&Self::normalize_rows(&mut jl));
        }
        Ok(out)
    }

    /// Mean per-frame log-likelihood.
    pub fn log_likelihood(&self, f: &FeatureMatrix) -> Result<f64> {
        if f.frames() == 0 {
            return Err(Error::param("no frames to score"));
        }
        Ok(self.frame_log_likelihoods(f)?.mean().unwrap())
    }

    fn accumulate(&self, x: ArrayView2<f64>) -> Stats {
        let (k, d) = self.means.dim();
        let mut st = Stats {
            n: Array1::zeros(k),
            fx: Array2::zeros((k, d)),
            fxx: Array2::zeros((k, d)),
            total_ll: 0.0,
        };
        for start in (0..x.nrows()).step_by(CHUNK) {
            let end = (start + CHUNK).min(x.nrows());
            let xc = x.slice(s![start..end, ..]);
            let mut post = self.joint_log_probs(xc);
            st.total_ll += Self::normalize_rows(&mut post).sum();
            st.n += &post.sum_axis(Axis(0));
            st.fx += &post.t().dot(&xc);
            st.fxx += &post.t().dot(&xc.mapv(|v| v * v));
        }
        st
    }

    fn m_step(&mut self, st: &Stats) {
        let total = st.n.sum();
        for k in 0..self.components() {
            let n = st.n[k];
            self.weights[k] = n / total;
            if n <= 1e-10 {
                continue;
            }
            let mean = st.fx.row(k).mapv(|v| v / n);
            let mut var = &st.fxx.row(k).mapv(|v| v / n) - &mean.mapv(|m| m * m);
            Zip::from(&mut var).and(&self.var_floor).for_each(|v, &f| *v = v.max(f));
            self.means.row_mut(k).assign(&mean);
            self.vars.row_mut(k).assign(&var);
        }
        let s = self.weights.sum();
        self.weights /= s;
    }

    fn split(&self) -> Self {
        let (k, d) = self.means.dim();
        let mut means = Array2::zeros((2 * k, d));
        let mut vars = Array2::zeros((2 * k, d));
        let mut weights = Array1::zeros(2 * k);
        for c in 0..k {
            let v = self.vars.row(c);
            let widest = (0..d).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
            let delta = SPLIT_OFFSET * v[widest].sqrt();
            means.row_mut(2 * c).assign(&self.means.row(c));
            means.row_mut(2 * c + 1).assign(&self.means.row(c));
            means[[2 * c, widest]] += delta;
            means[[2 * c + 1, widest]] -= delta;
            vars.row_mut(2 * c).assign(&self.vars.row(c));
            vars.row_mut(2 * c + 1).assign(&self.vars.row(c));
            weights[2 * c] = self.weights[c] / 2.0;
            weights[2 * c + 1] = self.weights[c] / 2.0;
        }
        Self {
            weights,
            means,
            vars,
            var_floor: self.var_floor.clone(),
            kind: self.kind,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path, &self.to_bytes(None))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let (g, spk) = read_container(path)?;
        if spk.is_some() {
            return Err(Error::Format("file holds a speaker model, not a UBM".into()));
        }
        Ok(g)
    }

    fn to_bytes(&self, speaker: Option<(&str, EnrollCondition)>) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(GMM_MAGIC);
        buf.extend_from_slice(&GMM_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.components() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        buf.push(self.kind.tag());
        put_f64s(&mut buf, self.weights.iter());
        put_f64s(&mut buf, self.means.iter());
        put_f64s(&mut buf, self.vars.iter());
        put_f64s(&mut buf, self.var_floor.iter());
        match speaker {
            None => buf.push(0),
            Some((id, cond)) => {
                buf.push(1);
                put_string(&mut buf, id);
                put_string(&mut buf, cond.name());
            }
        }
        buf
    }
}

/// Children of a split sit this many standard deviations either side of the
/// parent along its widest dimension.
const SPLIT_OFFSET: f64 = 0.2;

fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::File::create(path)?.write_all(bytes)?;
    Ok(())
}

fn read_container(path: impl AsRef<Path>) -> Result<(GmmModel, Option<(String, EnrollCondition)>)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = ByteReader::new(&buf);
    if r.take(4)? != GMM_MAGIC {
        return Err(Error::Format(format!("{}: not a GMM file", path.display())));
    }
    let version = r.u32()?;
    if version != GMM_VERSION {
        return Err(Error::Version {
            found: version,
            expected: GMM_VERSION,
        });
    }
    let k = r.u64()? as usize;
    let d = r.u64()? as usize;
    let kind = FeatureKind::from_tag(r.u8()?)?;
    let kd = k.checked_mul(d).ok_or_else(|| Error::Format("size overflow".into()))?;
    let weights = Array1::from_vec(r.f64_vec(k)?);
    let shape = |v| Array2::from_shape_vec((k, d), v).map_err(|e| Error::Format(e.to_string()));
    let means = shape(r.f64_vec(kd)?)?;
    let vars = shape(r.f64_vec(kd)?)?;
    let var_floor = Array1::from_vec(r.f64_vec(d)?);
    let speaker = match r.u8()? {
        0 => None,
        1 => {
            let id = r.string()?;
            let cond = r.string()?.parse()?;
            Some((id, cond))
        }
        t => return Err(Error::Format(format!("bad speaker flag {t}"))),
    };
    if !r.at_end() {
        return Err(Error::Format("trailing bytes in GMM file".into()));
    }
    Ok((GmmModel::new(weights, means, vars, var_floor, kind)?, speaker))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub components: usize,
    /// EM iterations at the final size.
    pub iters: usize,
    /// EM iterations after each intermediate split.
    pub iters_per_split: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            components: 64,
            iters: 10,
            iters_per_split: 4,
        }
    }
}

/// Per-iteration record of an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    /// `(components, total log-likelihood before the M-step)` per iteration.
    pub steps: Vec<(usize, f64)>,
}

fn run_em(g: &mut GmmModel, x: ArrayView2<f64>, iters: usize, trace: &mut EmTrace) -> Result<()> {
    let mut prev: Option<f64> = None;
    for _ in 0..iters {
        let st = g.accumulate(x);
        if !st.total_ll.is_finite() {
            return Err(Error::Numerical("EM log-likelihood is not finite".into()));
        }
        if let Some(p) = prev {
            if st.total_ll < p - EM_MONOTONE_SLACK * p.abs() {
                return Err(Error::Numerical(format!(
                    "EM log-likelihood decreased from {p} to {} with {} components",
                    st.total_ll,
                    g.components()
                )));
            }
        }
        prev = Some(st.total_ll);
        trace.steps.push((g.components(), st.total_ll));
        g.m_step(&st);
    }
    Ok(())
}

/// Trains a UBM on pooled frames, growing 1 -> 2 -> ... -> K components.
pub fn em_train(features: &FeatureMatrix, cfg: &EmConfig) -> Result<(GmmModel, EmTrace)> {
    let k = cfg.components;
    if k == 0 || !k.is_power_of_two() {
        return Err(Error::param(format!("component count {k} must be a power of two")));
    }
    if features.frames() < 10 * k {
        return Err(Error::param(format!(
            "{} frames is too few for {k} components (need {})",
            features.frames(),
            10 * k
        )));
    }
    let x = features.data();
    let n = x.nrows() as f64;
    let mean = x.sum_axis(Axis(0)) / n;
    let var = x.map_axis(Axis(0), |col| {
        let m = col.mean().unwrap();
        col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
    });
    if var.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Validation("feature dimension with zero variance".into()));
    }
    let var_floor = &var * VARIANCE_FLOOR_RATIO;
    let mut g = GmmModel::new(
        Array1::ones(1),
        mean.insert_axis(Axis(0)),
        var.insert_axis(Axis(0)),
        var_floor,
        features.kind(),
    )?;
    let mut trace = EmTrace { steps: Vec::new() };
    while g.components() < k {
        g = g.split();
        let iters = if g.components() == k { cfg.iters } else { cfg.iters_per_split };
        run_em(&mut g, x.view(), iters, &mut trace)?;
    }
    if k == 1 {
        run_em(&mut g, x.view(), cfg.iters, &mut trace)?;
    }
    GmmModel::new(g.weights, g.means, g.vars, g.var_floor, g.kind)
        .map(|g| (g, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnrollCondition {
    Clean,
    Multi,
}

impl EnrollCondition {
    pub fn name(self) -> &'static str {
        match self {
            EnrollCondition::Clean => "clean",
            EnrollCondition::Multi => "multi",
        }
    }

    /// Utterances pooled per speaker: every session clean, plus (for multi)
    /// every session at every training noise and SNR.
    pub fn utterance_count(self, sessions: usize, noises: usize, snrs: usize) -> usize {
        match self {
            EnrollCondition::Clean => sessions,
            EnrollCondition::Multi => sessions * (1 + noises * snrs),
        }
    }
}

impl fmt::Display for EnrollCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnrollCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(EnrollCondition::Clean),
            "multi" => Ok(EnrollCondition::Multi),
            other => Err(Error::param(format!("unknown enrollment condition '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub gmm: GmmModel,
    pub speaker_id: String,
    pub condition: EnrollCondition,
}

impl SpeakerModel {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path, &self.gmm.to_bytes(Some((&self.speaker_id, self.condition))))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        match read_container(path)? {
            (gmm, Some((speaker_id, condition))) => Ok(Self {
                gmm,
                speaker_id,
                condition,
            }),
            (_, None) => Err(Error::Format("file holds a UBM, not a speaker model".into())),
        }
    }
}

/// Mean-only MAP adaptation: `m_k + a_k (E_k[x] - m_k)` with
/// `a_k = n_k / (n_k + r)`. Components with no soft count keep the UBM mean.
pub fn map_adapt(
    ubm: &GmmModel,
    features: &FeatureMatrix,
    relevance: f64,
    speaker_id: &str,
    condition: EnrollCondition,
) -> Result<SpeakerModel> {
    if !(relevance > 0.0 && relevance.is_finite()) {
        return Err(Error::param(format!("relevance factor {relevance} must be positive")));
    }
    if features.frames() == 0 {
        return Err(Error::param(format!("no enrollment frames for speaker {speaker_id}")));
    }
    ubm.check(features)?;
    if features.kind() != ubm.kind() {
        return Err(Error::Validation(format!(
            "UBM trained on {} features, enrollment has {}",
            ubm.kind(),
            features.kind()
        )));
    }
    let st = ubm.accumulate(features.data().view());
    let mut means = ubm.means.clone();
    for k in 0..ubm.components() {
        let n = st.n[k];
        if n <= 0.0 {
            continue;
        }
        let alpha = n / (n + relevance);
        for d in 0..ubm.dim() {
            let e = st.fx[[k, d]] / n;
            means[[k, d]] += alpha * (e - means[[k, d]]);
        }
    }
    Ok(SpeakerModel {
        gmm: GmmModel {
            means,
            ..ubm.clone()
        },
        speaker_id: speaker_id.to_string(),
        condition,
    })
}

/// Pools enrollment utterances and adapts the UBM.
pub fn enroll(
    ubm: &GmmModel,
    utterances: &[&FeatureMatrix],
    speaker_id: &str,
    condition: EnrollCondition,
    relevance: f64,
) -> Result<SpeakerModel> {
    if utterances.is_empty() {
        return Err(Error::param(format!("no enrollment utterances for speaker {speaker_id}")));
    }
    let pooled = FeatureMatrix::concat_frames(utterances)?;
    map_adapt(ubm, &pooled, relevance, speaker_id, condition)
}

/// Mean over frames of `log p(x | speaker) - log p(x | UBM)`.
pub fn llr_score(spk: &SpeakerModel, ubm: &GmmModel, test: &FeatureMatrix) -> Result<f64> {
    for (what, kind) in [("speaker model", spk.gmm.kind()), ("UBM", ubm.kind())] {
        if kind != test.kind() {
            return Err(Error::Validation(format!(
                "{what} expects {kind} features, test has {}",
                test.kind()
            )));
        }
    }
    if test.frames() == 0 {
        return Err(Error::param("test utterance has no frames"));
    }
    let a = spk.gmm.frame_log_likelihoods(test)?;
    let b = ubm.frame_log_likelihoods(test)?;
    Ok((&a - &b).mean().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fm(data: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(data, FeatureKind::Combined, 0.01).unwrap()
    }

    fn clusters(n: usize, centers: &[[f64; 2]], seed: u64) -> FeatureMatrix {
        let mut rng = crate::seed::rng_for(seed, &[]);
        fm(Array2::from_shape_fn((n, 2), |(i, d)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            centers[i % centers.len()][d] + 0.1 * z
        }))
    }

    fn single(d: usize) -> GmmModel {
        GmmModel::new(
            Array1::ones(1),
            Array2::zeros((1, d)),
            Array2::ones((1, d)),
            Array1::from_elem(d, 1e-3),
            FeatureKind::Combined,
        )
        .unwrap()
    }

    #[test]
    fn unit_gaussian_at_origin() {
        let g = single(2);
        let ll = g.log_likelihood(&fm(array![[0.0, 0.0]])).unwrap();
        assert!((ll + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn duplication_and_tiny_weights() {
        let g = em_train(&clusters(400, &[[0.0, 0.0], [3.0, 3.0]], 1), &EmConfig {
            components: 2,
            iters: 5,
            iters_per_split: 2,
        })
        .unwrap()
        .0;
        let f = clusters(50, &[[1.0, 2.0]], 2);
        let doubled = FeatureMatrix::concat_frames(&[&f, &f]).unwrap();
        assert!((g.log_likelihood(&f).unwrap() - g.log_likelihood(&doubled).unwrap()).abs() < 1e-12);

        let tiny = GmmModel::new(
            array![1.0 - 1e-300, 1e-300],
            array![[0.0], [1e6]],
            array![[1.0], [1.0]],
            array![1e-3],
            FeatureKind::Combined,
        )
        .unwrap();
        let ll = tiny.frame_log_likelihoods(&fm(array![[1e6], [0.0], [-1e9]])).unwrap();
        assert!(ll.iter().all(|v| v.is_finite()), "{ll:?}");
    }

    #[test]
    fn single_component_matches_moments() {
        let f = clusters(1000, &[[0.0, 1.0], [2.0, -1.0], [5.0, 0.5]], 3);
        let (g, _) = em_train(&f, &EmConfig { components: 1, iters: 3, iters_per_split: 1 }).unwrap();
        let x = f.data();
        for d in 0..2 {
            let col = x.column(d);
            let m = col.sum() / 1000.0;
            let v = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 1000.0;
            assert!((g.means()[[0, d]] - m).abs() < 1e-10);
            assert!((g.vars()[[0, d]] - v).abs() < 1e-10);
        }
    }

    #[test]
    fn two_clusters_recovered() {
        let f = clusters(2000, &[[-2.0, 1.0], [3.0, -0.5]], 4);
        let (g, _) = em_train(&f, &EmConfig { components: 2, iters: 20, iters_per_split: 2 }).unwrap();
        let mut found: Vec<[f64; 2]> = g.means().rows().into_iter().map(|r| [r[0], r[1]]).collect();
        found.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (f, t) in found.iter().zip([[-2.0, 1.0], [3.0, -0.5]]) {
            assert!((f[0] - t[0]).abs() < 0.01 && (f[1] - t[1]).abs() < 0.01, "{f:?}");
        }
        assert!((g.weights().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn em_is_monotone_and_floored() {
        let mut rng = crate::seed::rng_for(5, &[]);
        let data = Array2::from_shape_fn((3000, 4), |(i, d)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            ((i % 7) as f64) * (d as f64 + 1.0) + z * 0.3
        });
        let f = fm(data);
        let (g, trace) = em_train(&f, &EmConfig { components: 16, iters: 15, iters_per_split: 3 }).unwrap();
        let finals: Vec<f64> = trace.steps.iter().filter(|s| s.0 == 16).map(|s| s.1).collect();
        assert_eq!(finals.len(), 15);
        for w in finals.windows(2) {
            assert!(w[1] >= w[0] - EM_MONOTONE_SLACK * w[0].abs());
        }
        for row in g.vars().rows() {
            for (v, f) in row.iter().zip(g.var_floor()) {
                assert!(v >= f);
            }
        }
    }

    #[test]
    fn em_preconditions() {
        let f = clusters(100, &[[0.0, 0.0]], 1);
        assert!(em_train(&f, &EmConfig { components: 3, ..EmConfig::default() }).is_err());
        assert!(em_train(&f, &EmConfig { components: 16, ..EmConfig::default() }).is_err());
    }

    #[test]
    fn map_limits_and_interpolation() {
        let ubm = em_train(&clusters(2000, &[[-2.0, 0.0], [2.0, 0.0]], 6), &EmConfig {
            components: 2,
            iters: 30,
            iters_per_split: 2,
        })
        .unwrap()
        .0;
        // enrollment far on one side: the other component gets exactly zero mass
        let enroll = clusters(300, &[[60.0, 1.0]], 7);
        let spk = map_adapt(&ubm, &enroll, DEFAULT_RELEVANCE, "s", EnrollCondition::Clean).unwrap();
        let near = if ubm.means()[[0, 0]] > 0.0 { 0 } else { 1 };
        assert_eq!(spk.gmm.means().row(1 - near), ubm.means().row(1 - near));
        assert_eq!(spk.gmm.weights(), ubm.weights());
        assert_eq!(spk.gmm.vars(), ubm.vars());
        let data_mean = enroll.data().mean_axis(Axis(0)).unwrap();
        for d in 0..2 {
            let (u, e, a) = (ubm.means()[[near, d]], data_mean[d], spk.gmm.means()[[near, d]]);
            let (lo, hi) = (u.min(e), u.max(e));
            assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
            let expected = u + 300.0 / 316.0 * (e - u);
            assert!((a - expected).abs() < 1e-9);
        }
        // r -> 0 recovers the data mean
        let spk = map_adapt(&ubm, &enroll, 1e-12, "s", EnrollCondition::Clean).unwrap();
        for d in 0..2 {
            assert!((spk.gmm.means()[[near, d]] - data_mean[d]).abs() < 1e-9);
        }
        let empty = fm(Array2::zeros((0, 2)));
        assert!(map_adapt(&ubm, &empty, 16.0, "s", EnrollCondition::Clean).is_err());
    }

    #[test]
    fn llr_properties() {
        let ubm = em_train(&clusters(2000, &[[-2.0, 0.0], [2.0, 0.0], [0.0, 3.0], [0.0, -3.0]], 8), &EmConfig {
            components: 4,
            iters: 10,
            iters_per_split: 2,
        })
        .unwrap()
        .0;
        let as_spk = SpeakerModel { gmm: ubm.clone(), speaker_id: "u".into(), condition: EnrollCondition::Clean };
        let test = clusters(100, &[[1.5, 0.3]], 9);
        assert_eq!(llr_score(&as_spk, &ubm, &test).unwrap(), 0.0);

        let spk = map_adapt(&ubm, &clusters(200, &[[2.5, 0.5]], 10), 16.0, "a", EnrollCondition::Clean).unwrap();
        let own = clusters(100, &[[2.5, 0.5]], 11);
        assert!(llr_score(&spk, &ubm, &own).unwrap() > 0.0);

        let wrong_kind = FeatureMatrix::new(own.data().clone(), FeatureKind::Anbn, 0.01).unwrap();
        assert!(llr_score(&spk, &ubm, &wrong_kind).is_err());
    }

    #[test]
    fn container_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ubm = em_train(&clusters(400, &[[0.0, 0.0], [3.0, 3.0]], 1), &EmConfig {
            components: 2,
            iters: 3,
            iters_per_split: 1,
        })
        .unwrap()
        .0;
        ubm.write(dir.path().join("ubm.gmm")).unwrap();
        assert_eq!(GmmModel::read(dir.path().join("ubm.gmm")).unwrap(), ubm);
        let spk = map_adapt(&ubm, &clusters(50, &[[1.0, 1.0]], 2), 16.0, "m002", EnrollCondition::Multi).unwrap();
        spk.write(dir.path().join("m002.gmm")).unwrap();
        assert_eq!(SpeakerModel::read(dir.path().join("m002.gmm")).unwrap(), spk);
        assert!(SpeakerModel::read(dir.path().join("ubm.gmm")).is_err());
        assert!("noisy".parse::<EnrollCondition>().is_err());
        assert_eq!(EnrollCondition::Multi.utterance_count(3, 1, 2), 9);
        assert_eq!(EnrollCondition::Multi.utterance_count(3, 5, 2), 33);
        assert_eq!(EnrollCondition::Clean.utterance_count(3, 5, 2), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn llr_is_permutation_invariant(seed in 0u64..1000) {
            let ubm = em_train(&clusters(400, &[[0.0, 0.0], [3.0, 3.0]], 1), &EmConfig {
                components: 2, iters: 3, iters_per_split: 1,
            }).unwrap().0;
            let spk = map_adapt(&ubm, &clusters(60, &[[1.0, 1.0]], 2), 16.0, "s", EnrollCondition::Clean).unwrap();
            let test = clusters(40, &[[0.5, 2.0]], seed);
            let mut rng = crate::seed::rng_for(seed, &[3]);
            let mut order: Vec<usize> = (0..40).collect();
            for i in (1..40).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let shuffled = fm(test.data().select(Axis(0), &order));
            let a = llr_score(&spk, &ubm, &test).unwrap();
            let b = llr_score(&spk, &ubm, &shuffled).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
