//! Named parameter tensors of the network.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::image::Tensor;
use crate::prng::Prng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Convolution or transposed-convolution kernel; the only penalized kind.
    Kernel,
    Bias,
    BnScale,
    BnShift,
    BnMean,
    BnVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::BnMean | ParamKind::BnVar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    /// Number of inputs feeding each output of the layer (kernels only).
    pub fan_in: usize,
    pub value: Tensor,
}

/// All network tensors in a fixed creation order. The version counter
/// increases on every mutation so forward caches can detect staleness.
#[derive(Debug, Clone)]
pub struct ParameterStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    version: u64,
}

/// Equal when names, kinds and values match; the version is ignored.
impl PartialEq for ParameterStore {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl Default for ParameterStore {
    fn default() -> Self {
        ParameterStore::new()
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            index: HashMap::new(),
            version: 0,
        }
    }

    /// Appends a tensor. Panics if the name is already taken.
    pub fn add(&mut self, name: String, kind: ParamKind, fan_in: usize, value: Tensor) {
        let prev = self.index.insert(name.clone(), self.params.len());
        assert!(prev.is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            kind,
            fan_in,
            value,
        });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.params[self.index[name]].value
    }

    /// Mutable access to every value; bumps the version.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.version += 1;
        self.params.iter_mut()
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self.position(name).ok_or_else(|| invalid!("unknown parameter {name}"))?;
        if self.params[i].value.shape() != value.shape() {
            return Err(shape_err!(
                "parameter {name}: shape {:?} != {:?}",
                value.shape(),
                self.params[i].value.shape()
            ));
        }
        self.params[i].value = value;
        self.version += 1;
        Ok(())
    }

    /// Total scalar count of trainable tensors.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind.trainable()).map(|p| p.value.len()).sum()
    }

    /// `sum_j ||w_j||^2` over kernels.
    pub fn kernel_sq_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Kernel)
            .map(|p| p.value.sum_sq())
            .sum()
    }

    /// He-normal kernels (`std = sqrt(2 / fan_in)`, Box-Muller draws in store
    /// order), zero biases and shifts, unit scales and running variances.
    /// Values are rounded to f32 so checkpoints store them exactly.
    pub fn he_init(&mut self, g: &mut Prng) {
        for p in self.values_mut() {
            let fill = match p.kind {
                ParamKind::Kernel => None,
                ParamKind::Bias | ParamKind::BnShift | ParamKind::BnMean => Some(0.0),
                ParamKind::BnScale | ParamKind::BnVar => Some(1.0),
            };
            match fill {
                Some(v) => p.value.data_mut().fill(v),
                None => {
                    let std = (2.0 / p.fan_in as f64).sqrt();
                    for v in p.value.data_mut() {
                        *v = (std * g.normal()) as f32 as f64;
                    }
                }
            }
        }
    }
}

/// Gradient slots aligned with a [`ParameterStore`]; non-trainable slots stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub slots: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Gradients {
            slots: store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn get(&self, store: &ParameterStore, name: &str) -> &Tensor {
        &self.slots[store.position(name).expect("known parameter")]
    }

    pub(crate) fn add(&mut self, store: &ParameterStore, name: &str, g: &Tensor) {
        let slot = &mut self.slots[store.position(name).expect("known parameter")];
        for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.slots
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.slots {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
}
