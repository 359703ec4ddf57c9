//! Named parameter sets and their deterministic initialisation.

use std::collections::BTreeMap;
use std::sync::Arc;

use pcp_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamKind {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Weight { fan_in: usize, fan_out: usize },
    Bias,
    /// Gate-stacked LSTM bias; the forget block starts at 1.0.
    LstmBias { hidden: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn weight(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            shape,
            kind: ParamKind::Weight { fan_in, fan_out },
        }
    }

    pub fn bias(name: impl Into<String>, len: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![len],
            kind: ParamKind::Bias,
        }
    }

    pub fn bound(&self) -> Option<f64> {
        match self.kind {
            ParamKind::Weight { fan_in, fan_out } => Some((6.0 / (fan_in + fan_out) as f64).sqrt()),
            _ => None,
        }
    }

    pub fn is_weight(&self) -> bool {
        matches!(self.kind, ParamKind::Weight { .. })
    }
}

/// Specs for a conv kernel `[out, in, k, k]` plus its bias.
pub(crate) fn conv_specs(name: &str, in_ch: usize, out_ch: usize, k: usize) -> [ParamSpec; 2] {
    [
        ParamSpec::weight(format!("{name}.weight"), vec![out_ch, in_ch, k, k], in_ch * k * k, out_ch * k * k),
        ParamSpec::bias(format!("{name}.bias"), out_ch),
    ]
}

/// Specs for a dense layer `[out, in]` plus its bias.
pub(crate) fn dense_specs(name: &str, inputs: usize, outputs: usize) -> [ParamSpec; 2] {
    [
        ParamSpec::weight(format!("{name}.weight"), vec![outputs, inputs], inputs, outputs),
        ParamSpec::bias(format!("{name}.bias"), outputs),
    ]
}

pub(crate) fn lstm_specs(name: &str, input: usize, hidden: usize) -> [ParamSpec; 3] {
    [
        ParamSpec::weight(format!("{name}.w_ih"), vec![4 * hidden, input], input, 4 * hidden),
        ParamSpec::weight(format!("{name}.w_hh"), vec![4 * hidden, hidden], hidden, 4 * hidden),
        ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![4 * hidden],
            kind: ParamKind::LstmBias { hidden },
        },
    ]
}

/// Independent draw per tensor, keyed by name, so the result is
/// unaffected by the order specs are listed in.
fn init_tensor(spec: &ParamSpec, seed: u64) -> Tensor {
    let mut key = seed ^ 0xcbf2_9ce4_8422_2325;
    for b in spec.name.bytes() {
        key = (key ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
    }
    match spec.kind {
        ParamKind::Weight { .. } => {
            let bound = spec.bound().expect("weight bound");
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            Tensor::from_fn(spec.shape.clone(), |_| rng.gen_range(-bound..=bound))
        }
        ParamKind::Bias => Tensor::zeros(spec.shape.clone()),
        ParamKind::LstmBias { hidden } => {
            Tensor::from_fn(spec.shape.clone(), |i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 })
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Arc<Tensor>>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut params = Self::new();
        for spec in specs {
            if params.tensors.contains_key(&spec.name) {
                return Err(Error::Config(format!("duplicate parameter name `{}`", spec.name)));
            }
            params.insert(spec.name.clone(), init_tensor(spec, seed));
        }
        Ok(params)
    }

    /// All-zero parameters of the given shapes.
    pub fn zeros(specs: &[ParamSpec]) -> Self {
        let mut params = Self::new();
        for spec in specs {
            params.insert(spec.name.clone(), Tensor::zeros(spec.shape.clone()));
        }
        params
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), Arc::new(tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name).map(|t| t.as_ref())
    }

    /// Mutable access; copies the tensor first if a graph still shares it.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name).map(Arc::make_mut)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn census(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    /// Checks names and shapes against `specs` exactly.
    pub fn conforms_to(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                specs.len(),
                self.len()
            )));
        }
        for spec in specs {
            let t = self
                .get(&spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Places every parameter on `g`; `trainable` decides which are differentiated.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), g.shared(Arc::clone(t), trainable(name))))
            .collect();
        Bound { vars }
    }
}

/// Parameters placed on a graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl FromIterator<(String, Var)> for Bound {
    /// Binds names to caller-created nodes, e.g. for finite-difference checks.
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self {
            vars: iter.into_iter().collect(),
        }
    }
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}
