//! Named trainable parameters, partitioned into generative and recognition
//! groups, with per-step binding onto a fresh [`Graph`].

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::VhmError;
use crate::math;
use crate::rng::SeededRng;
use crate::tensor::{Graph, TensorId};
use crate::Result;

/// Which half of the objective a parameter belongs to: generative
/// parameters (encoder, decoder, prior networks, output heads) or
/// recognition parameters (posterior networks).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Generative,
    Recognition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub group: ParamGroup,
}

/// Registry of all trainable weights. Registration order is the canonical
/// order for optimizer state and checkpoints.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    /// Register a parameter; names must be unique.
    pub fn add(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>, group: ParamGroup) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(VhmError::Contract(alloc::format!("parameter {name} registered twice")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(VhmError::Contract(alloc::format!(
                "parameter {name}: data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param { name, shape, data, group });
        Ok(id)
    }

    /// Xavier-uniform weight matrix `[rows, cols]`.
    pub fn xavier(&mut self, rng: &mut SeededRng, name: String, rows: usize, cols: usize, group: ParamGroup) -> Result<ParamId> {
        let limit = math::sqrt(6.0 / (rows + cols) as f64);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform_in(-limit, limit)).collect();
        self.add(name, vec![rows, cols], data, group)
    }

    pub fn zeros(&mut self, name: String, n: usize, group: ParamGroup) -> Result<ParamId> {
        self.add(name, vec![n], vec![0.0; n], group)
    }

    pub fn ones(&mut self, name: String, n: usize, group: ParamGroup) -> Result<ParamId> {
        self.add(name, vec![n], vec![1.0; n], group)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<(ParamId, &Param)> {
        self.params.iter().enumerate().find(|(_, p)| p.name == name).map(|(i, p)| (ParamId(i), p))
    }

    /// Overwrite one parameter's values; shape must match.
    pub fn set_by_name(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| VhmError::Contract(alloc::format!("unknown parameter {name}")))?;
        if p.data.len() != values.len() {
            return Err(VhmError::Contract(alloc::format!(
                "parameter {name}: expected {} values, got {}",
                p.data.len(),
                values.len()
            )));
        }
        p.data.copy_from_slice(values);
        Ok(())
    }

    /// Total scalar count across all parameters.
    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Insert every parameter into `g` as a leaf. `trainable` controls
    /// whether gradients flow (training) or not (inference).
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let ids = self
            .params
            .iter()
            .map(|p| {
                g.leaf(p.data.clone(), p.shape.clone(), trainable)
                    .expect("parameter shapes are validated at registration")
            })
            .collect();
        Binding { ids }
    }

    /// Copy of all parameter values, aligned with registration order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.data.clone()).collect()
    }

    /// Restore values captured by [`ParamStore::snapshot`].
    pub fn restore(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(VhmError::Contract("snapshot length mismatch".into()));
        }
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            if p.data.len() != s.len() {
                return Err(VhmError::Contract(alloc::format!("snapshot size mismatch for {}", p.name)));
            }
            p.data.copy_from_slice(s);
        }
        Ok(())
    }
}

/// Graph tensor ids for every parameter of one bound forward pass.
#[derive(Debug)]
pub struct Binding {
    ids: Vec<TensorId>,
}

impl Binding {
    pub fn id(&self, p: ParamId) -> TensorId {
        self.ids[p.0]
    }

    pub fn all(&self) -> &[TensorId] {
        &self.ids
    }
}
