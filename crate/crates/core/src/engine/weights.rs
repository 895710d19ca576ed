//! Named parameter storage and the `SALW1` binary weight format.
//!
//! `SALW1` layout: the ASCII magic `SALW1\n`, then one record per tensor:
//! name length (u32 LE), name bytes (UTF-8), rank (u32 LE), each dim (u32 LE),
//! and the raw `f32` LE payload. Layer parameters are stored as two records,
//! `<layer>.weight` and `<layer>.bias`, in sorted name order.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SALW_MAGIC: &[u8] = b"SALW1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    params: BTreeMap<String, LayerParams>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: impl Into<String>, params: LayerParams) {
        self.params.insert(layer.into(), params);
    }

    pub fn get(&self, layer: &str) -> Option<&LayerParams> {
        self.params.get(layer)
    }

    pub fn get_mut(&mut self, layer: &str) -> Option<&mut LayerParams> {
        self.params.get_mut(layer)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LayerParams)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut LayerParams)> {
        self.params.iter_mut()
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.zeros_like()))
                .collect(),
        }
    }

    /// `self += alpha * other` over every tensor; both stores must share layout.
    pub fn add_scaled(&mut self, other: &WeightStore, alpha: f32) {
        for (name, p) in self.params.iter_mut() {
            let o = other
                .params
                .get(name)
                .unwrap_or_else(|| panic!("missing layer {name} in add_scaled"));
            p.weight.add_scaled(&o.weight, alpha);
            p.bias.add_scaled(&o.bias, alpha);
        }
    }

    pub fn scale(&mut self, alpha: f32) {
        for p in self.params.values_mut() {
            p.weight.scale(alpha);
            p.bias.scale(alpha);
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.params
            .values()
            .map(|p| p.weight.max_abs().max(p.bias.max_abs()))
            .fold(0.0, f32::max)
    }

    /// 64-bit digest over names, shapes and value bits (FNV-1a style, one
    /// 32-bit word per step).
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |word: u32| {
            h ^= word as u64;
            h = h.wrapping_mul(PRIME);
        };
        for (name, p) in &self.params {
            name.bytes().for_each(|b| eat(b as u32));
            for t in [&p.weight, &p.bias] {
                t.shape().iter().for_each(|&d| eat(d as u32));
                t.data().iter().for_each(|v| eat(v.to_bits()));
            }
        }
        h
    }

    pub fn to_salw_bytes(&self) -> Vec<u8> {
        let mut out = SALW_MAGIC.to_vec();
        let mut records: Vec<(String, &Tensor)> = Vec::with_capacity(self.params.len() * 2);
        for (name, p) in &self.params {
            records.push((format!("{name}.bias"), &p.bias));
            records.push((format!("{name}.weight"), &p.weight));
        }
        records.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, t) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_salw_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            format: "SALW1",
            reason,
        };
        if !bytes.starts_with(SALW_MAGIC) {
            return Err(bad("missing SALW1 magic".into()));
        }
        let mut reader = Reader {
            buf: &bytes[SALW_MAGIC.len()..],
        };
        let mut weights: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut biases: BTreeMap<String, Tensor> = BTreeMap::new();
        while !reader.buf.is_empty() {
            let len_bytes = reader.take(4, "name length")?;
            let name_len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(reader.take(name_len, "name")?)
                .map_err(|_| bad("record name is not UTF-8".into()))?
                .to_string();
            let rank = u32::from_le_bytes(reader.take(4, "rank")?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(reader.take(4, "dim")?.try_into().unwrap()) as usize);
            }
            let count: usize = shape.iter().product();
            let payload = reader.take(count * 4, "payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| bad(format!("record `{name}`: {e}")))?;
            let (layer, slot) = name
                .rsplit_once('.')
                .ok_or_else(|| bad(format!("record `{name}` lacks a .weight/.bias suffix")))?;
            let map = match slot {
                "weight" => &mut weights,
                "bias" => &mut biases,
                other => return Err(bad(format!("unknown record slot `{other}`"))),
            };
            if map.insert(layer.to_string(), tensor).is_some() {
                return Err(bad(format!("duplicate record `{name}`")));
            }
        }
        let mut store = WeightStore::new();
        for (layer, weight) in weights {
            let bias = biases
                .remove(&layer)
                .ok_or_else(|| bad(format!("layer `{layer}` has no bias record")))?;
            store.insert(layer, LayerParams { weight, bias });
        }
        if let Some(layer) = biases.keys().next() {
            return Err(bad(format!("layer `{layer}` has no weight record")));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format {
                format: "SALW1",
                reason: format!("truncated while reading {what}"),
            });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
}

/// Samples `N(0, stddev²)` truncated to `[-2·stddev, 2·stddev]` by rejection.
pub fn init_truncated_normal(shape: &[usize], seed: u64, stddev: f32) -> Result<Tensor> {
    if !(stddev > 0.0 && stddev.is_finite()) {
        return Err(Error::invalid(format!("stddev must be positive, got {stddev}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, stddev).expect("valid normal");
    let bound = 2.0 * stddev;
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let v = normal.sample(&mut rng);
        if v.abs() <= bound {
            data.push(v);
        }
    }
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> WeightStore {
        let mut s = WeightStore::new();
        s.insert(
            "conv1",
            LayerParams {
                weight: init_truncated_normal(&[2, 1, 3, 3], 1, 0.1).unwrap(),
                bias: Tensor::new(vec![2], vec![0.5, -0.25]).unwrap(),
            },
        );
        s.insert(
            "fc",
            LayerParams {
                weight: init_truncated_normal(&[1, 8], 2, 0.1).unwrap(),
                bias: Tensor::scalar(0.0),
            },
        );
        s
    }

    #[test]
    fn salw_round_trip_is_byte_exact() {
        let s = sample_store();
        let bytes = s.to_salw_bytes();
        assert!(bytes.starts_with(b"SALW1\n"));
        let back = WeightStore::from_salw_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_salw_bytes(), bytes);
    }

    #[test]
    fn salw_rejects_truncation_and_bad_magic() {
        let bytes = sample_store().to_salw_bytes();
        assert!(WeightStore::from_salw_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(WeightStore::from_salw_bytes(b"SALW2\n").is_err());
    }

    #[test]
    fn salw_record_layout() {
        let mut s = WeightStore::new();
        s.insert(
            "d",
            LayerParams {
                weight: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
                bias: Tensor::scalar(2.0),
            },
        );
        let b = s.to_salw_bytes();
        let mut expect = b"SALW1\n".to_vec();
        expect.extend_from_slice(&6u32.to_le_bytes());
        expect.extend_from_slice(b"d.bias");
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2.0f32.to_le_bytes());
        expect.extend_from_slice(&8u32.to_le_bytes());
        expect.extend_from_slice(b"d.weight");
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(b, expect);
    }

    #[test]
    fn truncated_normal_bounds_mean_and_determinism() {
        let sigma = 0.05f32;
        let t = init_truncated_normal(&[100_000], 7, sigma).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 2.0 * sigma));
        let mean = t.sum() / t.len() as f64;
        assert!(mean.abs() < 0.02 * sigma as f64, "mean {mean}");
        assert_eq!(t, init_truncated_normal(&[100_000], 7, sigma).unwrap());
        assert_ne!(t, init_truncated_normal(&[100_000], 8, sigma).unwrap());
        assert!(init_truncated_normal(&[3], 0, 0.0).is_err());
    }

    #[test]
    fn fingerprint_tracks_values() {
        let s = sample_store();
        let mut t = s.clone();
        assert_eq!(s.fingerprint(), t.fingerprint());
        t.get_mut("fc").unwrap().bias.data_mut()[0] = 1e-6;
        assert_ne!(s.fingerprint(), t.fingerprint());
    }
}
