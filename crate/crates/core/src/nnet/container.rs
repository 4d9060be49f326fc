use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Layer, Mlp};
use crate::dsp::{put_f64s, put_string, ByteReader, FeatureStats};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"ANBN";
pub const MODEL_VERSION: u32 = 1;

/// Named networks plus what is needed to feed them: class labels and input
/// normalisation statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelContainer {
    pub networks: Vec<(String, Mlp)>,
    pub labels: Vec<String>,
    pub stats: Option<FeatureStats>,
    pub meta: Vec<(String, String)>,
}

impl ModelContainer {
    pub fn network(&self, name: &str) -> Result<&Mlp> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Format(format!("model container has no network '{name}'")))
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.networks.len() as u32).to_le_bytes());
        for (name, m) in &self.networks {
            put_string(&mut buf, name);
            buf.extend_from_slice(&m.seed().to_le_bytes());
            buf.extend_from_slice(&(m.layers().len() as u32).to_le_bytes());
            for l in m.layers() {
                buf.push(l.activation.tag());
                buf.extend_from_slice(&(l.output_dim() as u64).to_le_bytes());
                buf.extend_from_slice(&(l.input_dim() as u64).to_le_bytes());
                put_f64s(&mut buf, l.w.iter());
                put_f64s(&mut buf, l.b.iter());
            }
        }
        buf.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        for l in &self.labels {
            put_string(&mut buf, l);
        }
        match &self.stats {
            None => buf.push(0),
            Some(s) => {
                buf.push(1);
                buf.extend_from_slice(&(s.dim() as u64).to_le_bytes());
                put_f64s(&mut buf, s.mean.iter());
                put_f64s(&mut buf, s.var.iter());
            }
        }
        buf.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_string(&mut buf, k);
            put_string(&mut buf, v);
        }
        buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("not a model container (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let n_networks = r.u32()?;
        let mut networks = Vec::new();
        for _ in 0..n_networks {
            let name = r.string()?;
            let seed = r.u64()?;
            let n_layers = r.u32()?;
            let mut layers = Vec::new();
            for _ in 0..n_layers {
                let activation = Activation::from_tag(r.u8()?)?;
                let out = r.u64()? as usize;
                let inp = r.u64()? as usize;
                let size = out
                    .checked_mul(inp)
                    .ok_or_else(|| Error::Format("layer size overflow".into()))?;
                let w = Array2::from_shape_vec((out, inp), r.f64_vec(size)?)
                    .map_err(|e| Error::Format(e.to_string()))?;
                let b = Array1::from_vec(r.f64_vec(out)?);
                layers.push(Layer { w, b, activation });
            }
            networks.push((name, Mlp::from_layers(layers, seed)?));
        }
        let n_labels = r.u32()?;
        let labels = (0..n_labels).map(|_| r.string()).collect::<Result<_>>()?;
        let stats = match r.u8()? {
            0 => None,
            1 => {
                let dim = r.u64()? as usize;
                let mean = Array1::from_vec(r.f64_vec(dim)?);
                let var = Array1::from_vec(r.f64_vec(dim)?);
                Some(FeatureStats { mean, var })
            }
            t => return Err(Error::Format(format!("bad statistics flag {t}"))),
        };
        let n_meta = r.u32()?;
        let meta = (0..n_meta)
            .map(|_| Ok((r.string()?, r.string()?)))
            .collect::<Result<_>>()?;
        if !r.at_end() {
            return Err(Error::Format("trailing bytes after model container".into()));
        }
        Ok(Self {
            networks,
            labels,
            stats,
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
