//! Dense f64 tensor arithmetic with reverse-mode automatic differentiation
//! and an Adam optimizer. Everything is sized for the small networks used
//! by the landscape models: 2-D tensors, define-by-run tapes, no threads.

mod adam;
mod mlp;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use mlp::{Linear, Mlp};
pub use tape::{matmul_raw, sigmoid, softplus, Tape, Var};
pub use tensor::{ParamId, ParamStore, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Independent deterministic RNG stream derived from a base seed and a
/// purpose tag. Two streams with different tags never correlate.
pub fn rng_stream(seed: u64, tag: &str, index: u64) -> ChaCha12Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^= index.wrapping_mul(0x9e3779b97f4a7c15);
    ChaCha12Rng::seed_from_u64(seed ^ h)
}

/// Central finite-difference gradient of `f` w.r.t. every element of the
/// listed parameters. Used as the independent oracle for gradient checks;
/// only calls the forward path.
pub fn finite_difference_grad<F>(
    store: &mut ParamStore,
    targets: &[ParamId],
    h: f64,
    mut f: F,
) -> Vec<Vec<f64>>
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut grads = Vec::with_capacity(targets.len());
    for &id in targets {
        let n = store.get(id).numel();
        let mut g = vec![0.0; n];
        for i in 0..n {
            let orig = store.get(id).data[i];
            store.get_mut(id).data[i] = orig + h;
            let hi = f(store);
            store.get_mut(id).data[i] = orig - h;
            let lo = f(store);
            store.get_mut(id).data[i] = orig;
            g[i] = (hi - lo) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}
