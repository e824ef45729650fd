use super::{Gradients, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// A collection of named parameter tensors visited in a fixed order.
///
/// The visitation order is the binding order: [`bind_params`] returns one
/// `Var` per tensor in that order, and model code reconstructs its
/// structure from the same sequence.
pub trait Parameters<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |name, _| out.push(name.to_string()));
        out
    }
}

/// Puts every tensor of `params` on `tape`; `trainable(name)` decides
/// whether each leaf receives gradients.
pub fn bind_params<'t, T: Scalar, P: Parameters<T> + ?Sized>(
    params: &P,
    tape: &'t Tape<T>,
    trainable: &dyn Fn(&str) -> bool,
) -> Vec<Var<'t, T>> {
    let mut out = Vec::new();
    params.visit(&mut |name, t| out.push(tape.leaf(t.clone(), trainable(name))));
    out
}

pub fn collect_grads<T: Scalar>(grads: &Gradients<T>, vars: &[Var<'_, T>]) -> Vec<Tensor<T>> {
    vars.iter().map(|v| grads.wrt(v)).collect()
}
