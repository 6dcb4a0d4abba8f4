//! Parameter traversal shared by every trainable component.

use rand::Rng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A component owning trainable tensors.
///
/// `params` and `params_mut` must list the same tensors in the same order;
/// binding, optimizer state and checkpoints all rely on it.
pub trait Module {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Places every parameter on the tape as a leaf.
    fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params().into_iter().map(|(_, t)| tape.leaf(t.clone(), requires_grad)).collect()
    }
}

/// `Uniform(-bound, bound)` entries.
pub fn uniform_init(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    t
}

/// Adds `Uniform(-scale, scale)` noise to every parameter. Handy for tests
/// that need a non-identity flow.
pub fn jitter<M: Module + ?Sized>(module: &mut M, rng: &mut impl Rng, scale: f64) {
    for t in module.params_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-scale..=scale);
        }
    }
}
