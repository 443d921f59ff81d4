use std::collections::HashMap;

use rand::Rng;

use super::Tensor;
use crate::{Error, Result};

/// Handle to one tensor of a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors plus a gradient accumulator per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, usize>,
}

/// Uniform Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter path `{name}`")));
        }
        let id = self.values.len();
        self.index.insert(name.to_owned(), id);
        self.names.push(name.to_owned());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// `rows x cols` matrix drawn uniformly from the Glorot interval.
    pub fn add_glorot<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> Result<ParamId> {
        let bound = glorot_bound(cols, rows);
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        self.values[id.0].data()
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.values[id.0].data_mut()
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        self.grads[id.0].data()
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.grads[id.0].data_mut()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Adds a gradient buffer into the accumulators.
    pub fn accumulate(&mut self, grads: &Grads) {
        for (acc, g) in self.grads.iter_mut().zip(&grads.bufs) {
            for (a, b) in acc.data_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Parameter values and gradients at once, for optimisers.
    pub(crate) fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &mut Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter_mut())
            .zip(self.grads.iter_mut())
            .map(|((n, v), g)| (n, v, g))
    }
}

/// A detached gradient buffer shaped like a [`ParameterSet`].
///
/// Workers fill their own buffer; buffers are then summed in a fixed order so
/// results do not depend on scheduling.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    bufs: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Self {
            bufs: params.values.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    /// Two distinct buffers at once (e.g. a weight and its bias).
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
        assert_ne!(a.0, b.0, "pair_mut needs distinct parameters");
        if a.0 < b.0 {
            let (lo, hi) = self.bufs.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.bufs.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn duplicate_paths_are_rejected() {
        let mut p = ParameterSet::new();
        p.add_zeros("a.weight", &[2, 2]).unwrap();
        assert!(p.add_zeros("a.weight", &[1]).is_err());
    }

    #[test]
    fn glorot_values_stay_in_bound() {
        let mut p = ParameterSet::new();
        let id = p.add_glorot("w", 8, 24, &mut seeded(0)).unwrap();
        let b = glorot_bound(24, 8);
        assert!(p.value(id).iter().all(|v| v.abs() <= b));
        assert_eq!(p.grad(id).len(), 8 * 24);
        assert_eq!(p.tensor(id).shape(), p.grads[id.0].shape());
    }

    #[test]
    fn grads_accumulate() {
        let mut p = ParameterSet::new();
        let id = p.add_zeros("b", &[3]).unwrap();
        let mut g = Grads::zeros_like(&p);
        g.get_mut(id)[1] = 2.0;
        p.accumulate(&g);
        p.accumulate(&g);
        assert_eq!(p.grad(id), &[0.0, 4.0, 0.0]);
        p.zero_grads();
        assert_eq!(p.grad(id), &[0.0; 3]);
    }
}
