//! Named trainable parameters and their gradients.

use rand::Rng;

use super::tensor::Tensor;

/// Handle to a parameter registered in a [`Params`] set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Registry of all trainable tensors, in a fixed registration order.
///
/// Registration order defines the checkpoint layout and the order in which
/// the optimizer walks tensors, so it must be deterministic.
#[derive(Clone, Debug, Default)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name: {name}"
        );
        self.entries.push((name, value));
        ParamId(self.entries.len() - 1)
    }

    /// Register a tensor initialized uniformly in `[-1/sqrt(fan), 1/sqrt(fan)]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|(n, _)| n == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }
}

/// Per-parameter gradients produced by a backward pass.
///
/// Parameters a loss never touched stay `None`, which reads as a zero
/// gradient everywhere gradients are consumed.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn zeros(n_params: usize) -> Self {
        Gradients {
            grads: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of `id`, materializing zeros for untouched parameters.
    pub fn dense(&self, id: ParamId, params: &Params) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let shape = params.get(id).shape();
                Tensor::zeros(shape[0], shape[1])
            }
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, delta: &Tensor) {
        match &mut self.grads[id.0] {
            Some(g) => {
                *g = g.add(delta);
            }
            slot => *slot = Some(delta.clone()),
        }
    }

    pub(crate) fn accumulate_row(&mut self, id: ParamId, row: usize, shape: [usize; 2], delta: &[f64]) {
        let g = self.grads[id.0].get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
        let cols = g.cols();
        let target = &mut g.data_mut()[row * cols..(row + 1) * cols];
        for (t, d) in target.iter_mut().zip(delta) {
            *t += d;
        }
    }

    /// Sum another gradient set into this one.
    pub fn merge(&mut self, other: &Gradients) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => *m = m.add(t),
                    slot => *slot = Some(t.clone()),
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.is_finite())
    }
}
