//! Self-describing checkpoint container shared by representations and agents.
//!
//! A checkpoint is one JSON document: a format tag, the owning object's config,
//! named network architectures, and named `f32` tensors stored as base64-encoded
//! little-endian bytes, which keeps the round trip bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Layer, Network};

pub const FORMAT: &str = "auxrep-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub width: usize,
    pub activation: Activation,
    pub dense_block: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub networks: BTreeMap<String, Vec<LayerSpec>>,
    pub tensors: BTreeMap<String, TensorRecord>,
    pub scalars: BTreeMap<String, serde_json::Value>,
}

fn encode(data: &[f32]) -> String {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(s: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Checkpoint(format!("bad tensor encoding: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint("tensor byte length not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl Checkpoint {
    pub fn new(kind: &str, config: serde_json::Value) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.into(),
            config,
            networks: BTreeMap::new(),
            tensors: BTreeMap::new(),
            scalars: BTreeMap::new(),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container {} v{}",
                self.format, self.version
            )));
        }
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn put_tensor(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[f32]) {
        self.tensors.insert(
            name.into(),
            TensorRecord {
                shape,
                dtype: "f32".into(),
                data: encode(data),
            },
        );
    }

    pub fn tensor(&self, name: &str) -> Result<Vec<f32>> {
        let rec = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if rec.dtype != "f32" {
            return Err(Error::Checkpoint(format!("tensor `{name}` has dtype {}", rec.dtype)));
        }
        let data = decode(&rec.data)?;
        if data.len() != rec.shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("tensor `{name}` does not match its shape")));
        }
        Ok(data)
    }

    pub fn put_network(&mut self, name: &str, net: &Network<f32>) {
        let specs = net
            .layers()
            .iter()
            .map(|l| LayerSpec {
                in_dim: l.in_dim(),
                width: l.width(),
                activation: l.activation(),
                dense_block: l.is_dense_block(),
            })
            .collect();
        self.networks.insert(name.into(), specs);
        for (i, l) in net.layers().iter().enumerate() {
            self.put_tensor(format!("{name}.{i}.weight"), vec![l.width(), l.in_dim()], l.weights());
            self.put_tensor(format!("{name}.{i}.bias"), vec![l.width()], l.bias());
        }
    }

    pub fn network(&self, name: &str) -> Result<Network<f32>> {
        let specs = self
            .networks
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing network `{name}`")))?;
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Layer::from_parts(
                    s.in_dim,
                    s.width,
                    s.activation,
                    s.dense_block,
                    self.tensor(&format!("{name}.{i}.weight"))?,
                    self.tensor(&format!("{name}.{i}.bias"))?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Network::from_layers(layers)
    }

    pub fn put_optimizer(&mut self, name: &str, opt: &Adam<f32>) {
        let (m, v) = opt.moments();
        for (i, (a, b)) in m.iter().zip(v).enumerate() {
            self.put_tensor(format!("{name}.m.{i}"), vec![a.len()], a);
            self.put_tensor(format!("{name}.v.{i}"), vec![b.len()], b);
        }
        self.scalars
            .insert(format!("{name}.steps"), serde_json::json!(opt.step_count()));
    }

    /// Restores moments into an optimizer built for the same parameters.
    pub fn restore_optimizer(&self, name: &str, opt: &mut Adam<f32>) -> Result<()> {
        let n = opt.moments().0.len();
        let m = (0..n)
            .map(|i| self.tensor(&format!("{name}.m.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let v = (0..n)
            .map(|i| self.tensor(&format!("{name}.v.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let steps = self
            .scalars
            .get(&format!("{name}.steps"))
            .and_then(|s| s.as_u64())
            .ok_or_else(|| Error::Checkpoint(format!("missing `{name}.steps`")))?;
        opt.restore(m, v, steps)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensors_survive_bit_exact() {
        let data = vec![0.1f32, -0.0, f32::MIN_POSITIVE, 1e-45, 3.4e38, -7.25];
        let mut ck = Checkpoint::new("test", serde_json::json!({}));
        ck.put_tensor("x", vec![2, 3], &data);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let got = back.tensor("x").unwrap();
        assert_eq!(
            got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn network_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Network::<f32>::densenet(4, 3, 5, Activation::Swish, &mut rng).unwrap();
        let mut ck = Checkpoint::new("test", serde_json::json!({}));
        ck.put_network("body", &net);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.network("body").unwrap(), net);
        assert!(back.network("nope").is_err());
        assert!(back.expect_kind("other").is_err());
    }
}
