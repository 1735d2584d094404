//! Named parameter arrays and their binding onto a tape.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use crate::diffnum::{Array, Gradients, Tape, Var};
use crate::{seed, Error, Result};

/// How a parameter is initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    /// Normal with a fixed std.
    Normal(f64),
    Constant(f64),
    /// Identity in the leading square block of a `[K, C, 1, 1]` kernel, zeros elsewhere.
    IdentityBlock,
}

/// Declared parameter: name, shape and initialiser.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn materialize(&self, seed: u64) -> Array {
        let mut rng = seed::rng(seed, &self.name);
        match self.init {
            Init::HeNormal { fan_in } => {
                let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                Array::from_fn(&self.shape, |_| n.sample(&mut rng))
            }
            Init::Normal(std) => {
                if std == 0.0 {
                    return Array::zeros(&self.shape);
                }
                let n = Normal::new(0.0, std).expect("positive std");
                Array::from_fn(&self.shape, |_| n.sample(&mut rng))
            }
            Init::Constant(c) => Array::full(&self.shape, c),
            Init::IdentityBlock => {
                let (k, c) = (self.shape[0], self.shape[1]);
                let mut a = Array::zeros(&self.shape);
                for i in 0..k.min(c) {
                    a.data_mut()[i * c + i] = 1.0;
                }
                a
            }
        }
    }
}

/// Ordered map from parameter name to value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Array>,
}

impl ParamStore {
    /// Initialises every spec from `seed`; each parameter draws from a
    /// stream derived from its name, so adding a layer leaves others intact.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for s in specs {
            if entries.insert(s.name.clone(), s.materialize(seed)).is_some() {
                return Err(Error::Config(format!("duplicate parameter name `{}`", s.name)));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: BTreeMap<String, Array>) -> Self {
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn set(&mut self, name: &str, value: Array) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set",
                format!("`{name}`: {:?} vs {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.entries.values().map(Array::len).sum()
    }

    /// Places every parameter on `tape`, differentiable when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        for (name, value) in &self.entries {
            vars.insert(name.clone(), tape.leaf(value.clone(), trainable)?);
        }
        Ok(Bound { vars })
    }

    /// Zero-valued arrays shaped like each parameter.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Array::zeros(v.shape())))
                .collect(),
        }
    }
}

/// Tape handles of a bound [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl FromIterator<(String, Var)> for Bound {
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
            .ok_or_else(|| Error::Config(format!("parameter `{name}` not bound")))
    }

    /// Gradients of every bound parameter, keyed like the store.
    pub fn collect_grads(&self, grads: &Gradients) -> ParamStore {
        ParamStore {
            entries: self
                .vars
                .iter()
                .filter_map(|(k, v)| grads.get(*v).map(|g| (k.clone(), g.clone())))
                .collect(),
        }
    }
}
