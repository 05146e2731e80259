//! SchNet-style interatomic potential: atom embeddings refined by
//! continuous-filter convolutions over a distance cutoff graph, read out as
//! per-atom energies.

pub mod layers;
mod schnet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use layers::{rbf_expand, shifted_softplus};
pub use schnet::{
    energy_and_forces, energy_forward, force_loss_param_gradient, forces, param_gradients, BatchForward, ClusterTape,
    ForcePass,
};
pub(crate) use schnet::{backward_cluster, forward_cluster, species_of, sum_in_order};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_atom_features: usize,
    pub n_interactions: usize,
    pub n_rbf: usize,
    /// Å
    pub cutoff: f64,
    /// Å
    pub rbf_width: f64,
    pub readout_hidden: usize,
    /// Atomic numbers the embedding table covers, sorted.
    pub element_vocabulary: Vec<u8>,
    /// Initial per-atom energy offset (kcal/mol).
    #[serde(default)]
    pub energy_offset: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let cutoff = 6.0;
        let n_rbf = 32;
        ModelConfig {
            n_atom_features: 64,
            n_interactions: 3,
            n_rbf,
            cutoff,
            rbf_width: cutoff / n_rbf as f64,
            readout_hidden: 32,
            element_vocabulary: vec![1, 8],
            energy_offset: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_atom_features", self.n_atom_features),
            ("n_interactions", self.n_interactions),
            ("n_rbf", self.n_rbf),
            ("readout_hidden", self.readout_hidden),
            ("element_vocabulary", self.element_vocabulary.len()),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.cutoff > 0.0) || !(self.rbf_width > 0.0) {
            return Err(Error::Config("cutoff and rbf_width must be positive".into()));
        }
        if self.element_vocabulary.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("element_vocabulary must be sorted and distinct".into()));
        }
        Ok(())
    }

    pub fn species_index(&self, z: u8) -> Result<usize> {
        self.element_vocabulary.binary_search(&z).map_err(|_| Error::UnknownElement(z))
    }

    pub fn covers(&self, elements: &[u8]) -> bool {
        elements.iter().all(|z| self.element_vocabulary.contains(z))
    }
}

/// Name, shape and flat offset of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct BlockOffsets {
    pub in2f_w: usize,
    pub filter1_w: usize,
    pub filter1_b: usize,
    pub filter2_w: usize,
    pub filter2_b: usize,
    pub out1_w: usize,
    pub out1_b: usize,
    pub out2_w: usize,
    pub out2_b: usize,
}

/// Flat layout of all learnable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub tensors: Vec<TensorInfo>,
    pub(crate) embedding: usize,
    pub(crate) element_bias: usize,
    pub(crate) blocks: Vec<BlockOffsets>,
    pub(crate) readout1_w: usize,
    pub(crate) readout1_b: usize,
    pub(crate) readout2_w: usize,
    pub(crate) readout2_b: usize,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(c: &ModelConfig) -> Self {
        let (f, k, h, v) = (c.n_atom_features, c.n_rbf, c.readout_hidden, c.element_vocabulary.len());
        let mut tensors = Vec::new();
        let mut add = |name: String, shape: Vec<usize>| {
            let offset = tensors.last().map_or(0, |t: &TensorInfo| t.offset + t.len());
            tensors.push(TensorInfo { name, shape, offset });
            offset
        };
        let embedding = add("embedding".into(), vec![v, f]);
        let element_bias = add("element_bias".into(), vec![v]);
        let mut blocks = Vec::with_capacity(c.n_interactions);
        for t in 0..c.n_interactions {
            let p = |s: &str| format!("interaction.{t}.{s}");
            blocks.push(BlockOffsets {
                in2f_w: add(p("in2f.weight"), vec![f, f]),
                filter1_w: add(p("filter1.weight"), vec![f, k]),
                filter1_b: add(p("filter1.bias"), vec![f]),
                filter2_w: add(p("filter2.weight"), vec![f, f]),
                filter2_b: add(p("filter2.bias"), vec![f]),
                out1_w: add(p("out1.weight"), vec![f, f]),
                out1_b: add(p("out1.bias"), vec![f]),
                out2_w: add(p("out2.weight"), vec![f, f]),
                out2_b: add(p("out2.bias"), vec![f]),
            });
        }
        let readout1_w = add("readout1.weight".into(), vec![h, f]);
        let readout1_b = add("readout1.bias".into(), vec![h]);
        let readout2_w = add("readout2.weight".into(), vec![1, h]);
        let readout2_b = add("readout2.bias".into(), vec![1]);
        let total = tensors.last().map_or(0, |t| t.offset + t.len());
        ParamLayout { tensors, embedding, element_bias, blocks, readout1_w, readout1_b, readout2_w, readout2_b, total }
    }

    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// All learnable values of the network plus its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub values: Vec<f64>,
    layout: ParamLayout,
}

impl ModelParams {
    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if values.len() != layout.total {
            return Err(Error::Shape(format!("expected {} parameters, got {}", layout.total, values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(ModelParams { config, values, layout })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|t| &self.values[t.range()])
    }

    /// Sets every per-element offset to `e` (kcal/mol per atom).
    pub fn set_element_offsets(&mut self, e: f64) {
        let v = self.config.element_vocabulary.len();
        let o = self.layout.element_bias;
        self.values[o..o + v].fill(e);
        self.config.energy_offset = e;
    }

    pub(crate) fn w(&self, offset: usize, len: usize) -> &[f64] {
        &self.values[offset..offset + len]
    }
}

/// Seeded initialization.
///
/// Dense weights are Glorot-uniform, embeddings standard normal scaled by
/// `1/√F`, biases zero, and the per-element offsets start at
/// `config.energy_offset`. The final readout row is shrunk by 0.1 so that
/// initial energies sit close to the offset.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let layout = ParamLayout::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.total];
    let f = config.n_atom_features as f64;
    for t in &layout.tensors {
        let dst = &mut values[t.range()];
        if t.name == "embedding" {
            for v in dst.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = z / f.sqrt();
            }
        } else if t.name == "element_bias" {
            dst.fill(config.energy_offset);
        } else if t.name.ends_with(".weight") {
            let (fan_out, fan_in) = (t.shape[0] as f64, t.shape[1] as f64);
            let mut limit = (6.0 / (fan_in + fan_out)).sqrt();
            if t.name == "readout2.weight" {
                limit *= 0.1;
            }
            for v in dst.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
    }
    ModelParams::from_values(config.clone(), values)
}
