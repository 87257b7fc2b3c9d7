//! Named parameter tensors and their binary container.
//!
//! Container layout, all little-endian: `b"UAVW"`, u32 version, u32 metadata
//! count, then per entry a u32-length-prefixed UTF-8 key and value; u32 tensor
//! count, then per tensor a u32-length-prefixed name, u32 rank, u64 dims and
//! f32 data. The `network` metadata entry holds the [`NetworkConfig`] as TOML.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::NetworkConfig;
use super::scalar::Scalar;
use super::DetectorError;
use crate::pillars::POINT_FEATURES;

const MAGIC: &[u8; 4] = b"UAVW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// False for batch-norm running statistics.
    pub trainable: bool,
}

/// Every parameter of a network, in a fixed order derived from its config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T = f32> {
    pub config: NetworkConfig,
    pub params: Vec<Param<T>>,
    /// Free-form provenance such as the training seed.
    pub metadata: BTreeMap<String, String>,
}

/// `(name, shape, trainable)` for every tensor the config implies. Layers
/// followed by batch norm carry no bias; the norm's shift takes its place.
pub fn parameter_layout(net: &NetworkConfig) -> Vec<(String, Vec<usize>, bool)> {
    let mut out = Vec::new();
    let push_bn = |out: &mut Vec<_>, prefix: &str, c: usize| {
        if net.batch_norm {
            for (n, t) in [
                ("gamma", true),
                ("beta", true),
                ("running_mean", false),
                ("running_var", false),
            ] {
                out.push((format!("{prefix}.bn.{n}"), vec![c], t));
            }
        }
    };
    let c = net.pfn_channels;
    out.push(("pfn.linear.weight".into(), vec![c, POINT_FEATURES], true));
    if !net.batch_norm {
        out.push(("pfn.linear.bias".into(), vec![c], true));
    }
    push_bn(&mut out, "pfn", c);
    let mut cin = c;
    for (i, b) in net.backbone_blocks.iter().enumerate() {
        for j in 0..b.layers {
            let p = format!("backbone.block{i}.conv{j}");
            out.push((format!("{p}.weight"), vec![b.channels, cin, 3, 3], true));
            if !net.batch_norm {
                out.push((format!("{p}.bias"), vec![b.channels], true));
            }
            push_bn(&mut out, &p, b.channels);
            cin = b.channels;
        }
    }
    for (i, (b, &up)) in net.backbone_blocks.iter().zip(&net.upsample_channels).enumerate() {
        let k = net.upsample_factor(i);
        let p = format!("backbone.up{i}");
        out.push((format!("{p}.weight"), vec![b.channels, up, k, k], true));
        if !net.batch_norm {
            out.push((format!("{p}.bias"), vec![up], true));
        }
        push_bn(&mut out, &p, up);
    }
    let (head, a) = (net.head_channels(), net.num_yaws());
    out.push(("head.cls.weight".into(), vec![a, head, 1, 1], true));
    out.push(("head.cls.bias".into(), vec![a], true));
    out.push(("head.reg.weight".into(), vec![a * 7, head, 1, 1], true));
    out.push(("head.reg.bias".into(), vec![a * 7], true));
    out
}

/// Prior probability of the positive class that the classifier bias starts at.
const CLS_PRIOR: f64 = 0.01;

impl<T: Scalar> ModelWeights<T> {
    /// All-zero parameters: every logit is 0 and every score 0.5.
    pub fn zeros(config: &NetworkConfig) -> Result<Self, DetectorError> {
        config.validate()?;
        let params = parameter_layout(config)
            .into_iter()
            .map(|(name, shape, trainable)| Param {
                data: vec![T::zero(); shape.iter().product()],
                name,
                shape,
                trainable,
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            params,
            metadata: BTreeMap::new(),
        })
    }

    /// He-normal kernels, unit batch-norm scale, zero shifts and biases, and
    /// a classifier bias starting every score at a 1% prior.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self, DetectorError> {
        let mut w = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut w.params {
            let name = p.name.as_str();
            if name.ends_with(".weight") {
                // fan-in of a transposed conv is its input channel count
                let fan_in = if name.starts_with("backbone.up") {
                    p.shape[0]
                } else {
                    p.shape[1..].iter().product()
                };
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                p.data.iter_mut().for_each(|v| *v = T::of(normal.sample(&mut rng)));
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                p.data.iter_mut().for_each(|v| *v = T::one());
            } else if name == "head.cls.bias" {
                let b = -((1.0 - CLS_PRIOR) / CLS_PRIOR).ln();
                p.data.iter_mut().for_each(|v| *v = T::of(b));
            }
        }
        // small initial box residuals
        let reg = w.index_of("head.reg.weight").expect("head exists");
        w.params[reg].data.iter_mut().for_each(|v| *v = *v * T::of(0.1));
        w.metadata.insert("init_seed".into(), seed.to_string());
        Ok(w)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.f64())).collect(),
                    trainable: p.trainable,
                })
                .collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Checks names, order and shapes against the config's layout.
    pub fn validate(&self) -> Result<(), DetectorError> {
        self.config.validate()?;
        let layout = parameter_layout(&self.config);
        if layout.len() != self.params.len() {
            return Err(DetectorError::Weights(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.params.len()
            )));
        }
        for ((name, shape, _), p) in layout.iter().zip(&self.params) {
            if name != &p.name || shape != &p.shape || p.data.len() != shape.iter().product::<usize>() {
                return Err(DetectorError::Weights(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    p.name, p.shape
                )));
            }
        }
        if !self.is_finite() {
            return Err(DetectorError::Weights("non-finite parameter values".into()));
        }
        Ok(())
    }
}

fn put_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

impl ModelWeights<f32> {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DetectorError> {
        let net = toml::to_string(&self.config).map_err(|e| DetectorError::Weights(e.to_string()))?;
        let mut meta = self.metadata.clone();
        meta.insert("network".into(), net);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        for (k, v) in &meta {
            put_str(&mut w, k)?;
            put_str(&mut w, v)?;
        }
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            put_str(&mut w, &p.name)?;
            w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
            for &d in &p.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &p.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, DetectorError> {
        let mut r = Reader(r);
        if &r.bytes(4)?[..] != MAGIC {
            return Err(DetectorError::Weights("bad magic; not a weights file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DetectorError::Weights(format!("unsupported weights version {version}")));
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        let net_text = metadata
            .remove("network")
            .ok_or_else(|| DetectorError::Weights("missing network config".into()))?;
        let config: NetworkConfig =
            toml::from_str(&net_text).map_err(|e| DetectorError::Weights(format!("network config: {e}")))?;
        let layout = parameter_layout(&config);
        let count = r.u32()? as usize;
        if count != layout.len() {
            return Err(DetectorError::Weights(format!(
                "expected {} tensors, found {count}",
                layout.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for (name, shape, trainable) in layout {
            let got = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            if got != name || dims != shape {
                return Err(DetectorError::Weights(format!(
                    "tensor {got} {dims:?} does not match expected {name} {shape:?}"
                )));
            }
            let n: usize = shape.iter().product();
            let raw = r.bytes(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push(Param {
                name,
                shape,
                data,
                trainable,
            });
        }
        let w = Self {
            config,
            params,
            metadata,
        };
        w.validate()?;
        Ok(w)
    }
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, DetectorError> {
        let mut buf = Vec::new();
        let got = (&mut self.0).take(n as u64).read_to_end(&mut buf)?;
        if got != n {
            return Err(DetectorError::Weights(format!(
                "truncated: wanted {n} bytes, got {got}"
            )));
        }
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, DetectorError> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, DetectorError> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, DetectorError> {
        let n = self.u32()? as usize;
        if n > 1 << 24 {
            return Err(DetectorError::Weights(format!("implausible string length {n}")));
        }
        String::from_utf8(self.bytes(n)?).map_err(|e| DetectorError::Weights(e.to_string()))
    }
}
