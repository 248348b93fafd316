//! Minimal neural-network toolkit: a differentiation tape, dense
//! convolution kernels, parameter storage and the Adam optimizer.

mod adam;
pub(crate) mod conv;
mod graph;
mod params;

pub use adam::{Adam, AdamConfig};
pub use graph::{Grads, Graph, Tensor, Var};
pub use params::{ParamStore, StoredTensor};

/// Central finite-difference derivative of `f` at `x` along every
/// coordinate of `x`.
pub fn finite_difference<F>(x: &Tensor, step: f64, mut f: F) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.raw_dim());
    for (i, o) in out.iter_mut().enumerate() {
        let orig = probe.as_slice().unwrap()[i];
        probe.as_slice_mut().unwrap()[i] = orig + step;
        let hi = f(&probe);
        probe.as_slice_mut().unwrap()[i] = orig - step;
        let lo = f(&probe);
        probe.as_slice_mut().unwrap()[i] = orig;
        *o = (hi - lo) / (2.0 * step);
    }
    out
}
