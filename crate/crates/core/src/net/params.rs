use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NetConfig;
use crate::autodiff::checkpoint::{read_checkpoint, write_checkpoint};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One dense layer `y = x W + b` with `W: [fan_in, fan_out]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    /// Initialized to zero instead of Xavier-uniform.
    pub zero_init: bool,
}

impl LayerSpec {
    fn new(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            fan_in,
            fan_out,
            zero_init: false,
        }
    }
}

/// Every dense layer of the network, in initialization order.
pub fn layer_specs(cfg: &NetConfig) -> Vec<LayerSpec> {
    let u = cfg.feature_width;
    let h = cfg.hidden_width;
    let mut specs = Vec::new();
    let mut width = 3;
    for (l, &out) in cfg.edge_widths.iter().enumerate() {
        specs.push(LayerSpec::new(format!("edgeconv.{l}"), 2 * width, out));
        width = out;
    }
    specs.push(LayerSpec::new("embed", cfg.edge_widths.iter().sum(), u));
    specs.push(LayerSpec::new("distenc.0", 10, u));
    specs.push(LayerSpec::new("distenc.1", u, u));
    specs.push(LayerSpec::new("weights.0", 2 * u, h));
    specs.push(LayerSpec::new("weights.1", h, h));
    specs.push(LayerSpec::new("weights.2", h, cfg.r_max));
    specs.push(LayerSpec::new("refine.query.0", 2 * u, h));
    specs.push(LayerSpec::new("refine.query.1", h, cfg.query_width));
    specs.push(LayerSpec::new("refine.value.0", 2 * u, h));
    specs.push(LayerSpec::new("refine.value.1", h, cfg.value_width));
    specs.push(LayerSpec::new("refine.offset.0", cfg.value_width, h));
    let mut last = LayerSpec::new("refine.offset.1", h, 3);
    last.zero_init = true;
    specs.push(last);
    specs
}

/// Named network parameters plus the configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    config: NetConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    /// Xavier-uniform weights, zero biases, zero final offset layer.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for spec in layer_specs(&config) {
            let n = spec.fan_in * spec.fan_out;
            let weight = if spec.zero_init {
                vec![0.0; n]
            } else {
                let a = (6.0 / (spec.fan_in + spec.fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            };
            tensors.insert(
                format!("{}.weight", spec.name),
                Tensor::new(vec![spec.fan_in, spec.fan_out], weight)?,
            );
            tensors.insert(format!("{}.bias", spec.name), Tensor::zeros(&[spec.fan_out]));
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Parameter names in stable (sorted) order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Zeroes every tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.tensors.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().fill(0.0);
            }
        }
    }

    /// Registers every parameter on `tape` as a gradient-requiring leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v.clone())))
                .collect(),
        }
    }

    /// Binds parameters from an ordered list of already-registered vars,
    /// matching [`ParamStore::names`] order.
    pub fn bind_vars(&self, vars: &[Var]) -> Bound {
        Bound {
            vars: self.tensors.keys().cloned().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let c = &self.config;
        let mut records: Vec<(String, Tensor)> = vec![
            ("config.feature_width".into(), Tensor::scalar(c.feature_width as f64)),
            (
                "config.edge_widths".into(),
                Tensor::vector(c.edge_widths.iter().map(|&w| w as f64).collect()),
            ),
            ("config.graph_k".into(), Tensor::scalar(c.graph_k as f64)),
            ("config.query_width".into(), Tensor::scalar(c.query_width as f64)),
            ("config.value_width".into(), Tensor::scalar(c.value_width as f64)),
            ("config.hidden_width".into(), Tensor::scalar(c.hidden_width as f64)),
            ("config.r_max".into(), Tensor::scalar(c.r_max as f64)),
            ("config.neighbors".into(), Tensor::scalar(c.neighbors as f64)),
        ];
        records.extend(self.tensors.iter().map(|(k, v)| (k.clone(), v.clone())));
        write_checkpoint(w, &records)
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let mut records: BTreeMap<String, Tensor> = read_checkpoint(r)?.into_iter().collect();
        let mut scalar = |key: &str| -> Result<usize> {
            let t = records
                .remove(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
            as_count(key, t.data())
                .and_then(|v| v.first().copied().ok_or_else(|| Error::Checkpoint(format!("empty {key}"))))
        };
        let feature_width = scalar("config.feature_width")?;
        let graph_k = scalar("config.graph_k")?;
        let query_width = scalar("config.query_width")?;
        let value_width = scalar("config.value_width")?;
        let hidden_width = scalar("config.hidden_width")?;
        let r_max = scalar("config.r_max")?;
        let neighbors = scalar("config.neighbors")?;
        let edge = records
            .remove("config.edge_widths")
            .ok_or_else(|| Error::Checkpoint("missing config.edge_widths".into()))?;
        let config = NetConfig {
            feature_width,
            edge_widths: as_count("config.edge_widths", edge.data())?,
            graph_k,
            query_width,
            value_width,
            hidden_width,
            r_max,
            neighbors,
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid stored config: {e}")))?;
        let mut tensors = BTreeMap::new();
        for spec in layer_specs(&config) {
            for (suffix, shape) in [
                ("weight", vec![spec.fan_in, spec.fan_out]),
                ("bias", vec![spec.fan_out]),
            ] {
                let name = format!("{}.{suffix}", spec.name);
                let t = records
                    .remove(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "{name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
                tensors.insert(name, t);
            }
        }
        if let Some(extra) = records.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Self { config, tensors })
    }
}

fn as_count(key: &str, data: &[f64]) -> Result<Vec<usize>> {
    data.iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::Checkpoint(format!("{key} holds non-integer {v}")))
            }
        })
        .collect()
}

/// Parameters registered on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_stable() {
        let p = ParamStore::init(NetConfig::default(), 0).unwrap();
        let names: Vec<&str> = p.names().collect();
        assert!(names.contains(&"edgeconv.0.weight"));
        assert!(names.contains(&"weights.2.bias"));
        assert!(names.contains(&"refine.offset.1.weight"));
        assert_eq!(p.get("edgeconv.0.weight").unwrap().shape(), &[6, 24]);
        assert_eq!(p.get("weights.2.weight").unwrap().shape(), &[64, 16]);
        assert!(p.get("refine.offset.1.weight").unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = NetConfig {
            feature_width: 8,
            edge_widths: vec![4, 5],
            graph_k: 3,
            query_width: 6,
            value_width: 7,
            hidden_width: 9,
            r_max: 5,
            neighbors: 4,
        };
        let p = ParamStore::init(cfg, 3).unwrap();
        let mut buf = Vec::new();
        p.save(&mut buf).unwrap();
        let q = ParamStore::load(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        let mut again = Vec::new();
        q.save(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn same_seed_same_params() {
        let a = ParamStore::init(NetConfig::default(), 42).unwrap();
        let b = ParamStore::init(NetConfig::default(), 42).unwrap();
        let c = ParamStore::init(NetConfig::default(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
