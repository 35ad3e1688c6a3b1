use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, Tensor};
use crate::error::{Error, Result};

/// How a parameter tensor is filled at construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)) over a `[fan_in × fan_out]` matrix.
    GlorotUniform,
    Zeros,
    Ones,
    Normal { std: f64 },
}

/// Named, ordered collection of every trainable tensor of a model.
///
/// Each tensor draws its initial values from a generator seeded by the store
/// seed and the parameter name alone, so adding or removing a sub-module never
/// perturbs the initialization of the others.
#[derive(Clone, Debug)]
pub struct ParamStore {
    seed: u64,
    names: Vec<String>,
    inits: Vec<Init>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            names: Vec::new(),
            inits: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let tensor = self.initial_value(name, shape, init)?;
        let id = self.values.len();
        self.names.push(name.to_owned());
        self.inits.push(init);
        self.values.push(tensor);
        self.index.insert(name.to_owned(), id);
        Ok(id)
    }

    fn initial_value(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::GlorotUniform => {
                let (fan_in, fan_out) = match shape {
                    [a, b] => (*a, *b),
                    _ => (n, n),
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std)
                    .map_err(|e| Error::Config(format!("normal init for {name}: {e}")))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        Tensor::new(shape.to_vec(), data)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn init(&self, id: ParamId) -> Init {
        self.inits[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| &self.values[id])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(move |id| &mut self.values[id])
    }

    /// Fresh graph over the current parameter values.
    pub fn graph(&self) -> Graph<'_> {
        Graph::new(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: Checkpoint::FORMAT.to_owned(),
            version: Checkpoint::VERSION,
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, t)| CheckpointEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Overwrites every parameter from `ckpt`. Names and shapes must match
    /// this store exactly.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.params.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                ckpt.params.len(),
                self.values.len()
            )));
        }
        for entry in &ckpt.params {
            let id = self.id(&entry.name).ok_or_else(|| {
                Error::Checkpoint(format!("unexpected parameter {:?}", entry.name))
            })?;
            if self.values[id].shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?} has shape {:?}, model expects {:?}",
                    entry.name,
                    entry.shape,
                    self.values[id].shape()
                )));
            }
            self.values[id] = Tensor::new(entry.shape.clone(), entry.values.clone())
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", entry.name)))?;
        }
        Ok(())
    }
}

/// Versioned JSON parameter container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: Vec<CheckpointEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "lexadapt-checkpoint";
    pub const VERSION: u32 = 1;

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if ckpt.format != Self::FORMAT || ckpt.version != Self::VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
