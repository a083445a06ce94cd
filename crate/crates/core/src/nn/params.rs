use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named trainable matrices. Names are dotted paths whose first segment is
/// the network stage (`encoder`, `projection`, `attention`, ...).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    /// Uniform in ±1/sqrt(fan_in).
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::ones((rows, cols)))
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Array2<f64>) -> Result<()> {
        let cur = &self.values[id.0];
        if cur.dim() != value.dim() {
            return Err(Error::Config(format!(
                "parameter {} has shape {:?}, replacement has {:?}",
                self.names[id.0],
                cur.dim(),
                value.dim()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Stage name of a parameter (text before the first dot).
    pub fn group(&self, id: ParamId) -> &str {
        let name = &self.names[id.0];
        name.split('.').next().unwrap_or(name)
    }

    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<&str, StoredTensor> = self
            .names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| {
                (
                    n.as_str(),
                    StoredTensor {
                        shape: [v.nrows(), v.ncols()],
                        data: v.iter().copied().collect(),
                    },
                )
            })
            .collect();
        Ok(serde_json::to_string(&map)?)
    }

    /// Overwrites every parameter of `self` with the stored tensor of the
    /// same name. Missing names or shape mismatches are errors; extra stored
    /// tensors are ignored.
    pub fn load_json(&mut self, json: &str) -> Result<()> {
        let map: BTreeMap<String, StoredTensor> = serde_json::from_str(json)?;
        for i in 0..self.values.len() {
            let name = &self.names[i];
            let stored = map
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name}")))?;
            let value = Array2::from_shape_vec((stored.shape[0], stored.shape[1]), stored.data.clone())
                .map_err(|e| Error::Config(format!("parameter {name}: {e}")))?;
            self.set(ParamId(i), value)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.load_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut p = Params::new();
        p.add_uniform("head.w", 3, 4, 3, &mut rng);
        p.add_zeros("head.b", 1, 4);
        let json = p.to_json().unwrap();
        let mut q = p.clone();
        q.get_mut(ParamId(0)).fill(0.0);
        q.load_json(&json).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.group(ParamId(1)), "head");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Params::new();
        p.add_zeros("a", 2, 2);
        let mut q = Params::new();
        q.add_zeros("a", 3, 2);
        assert!(q.load_json(&p.to_json().unwrap()).is_err());
        let mut r = Params::new();
        r.add_zeros("b", 2, 2);
        assert!(r.load_json(&p.to_json().unwrap()).is_err());
    }
}
