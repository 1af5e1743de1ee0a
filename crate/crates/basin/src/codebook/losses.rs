use crate::error::Result;
use crate::numerics::{Tape, Var};

/// Commitment coefficient of the quantization loss.
pub const COMMITMENT_BETA: f64 = 0.25;

const LN_2PI: f64 = 1.8378770664093453;

/// Negative log-likelihood of a batch under the per-dimension Gaussian
/// decoder: mean over rows of `sum_d [ ln σ + ((x-μ)/σ)²/2 + ln(2π)/2 ]`.
pub fn gaussian_nll(tape: &mut Tape, x: Var, mu: Var, std: Var) -> Result<Var> {
    let (rows, _) = tape.shape(x);
    let diff = tape.sub(x, mu)?;
    let z = tape.div(diff, std)?;
    let z2 = tape.mul(z, z)?;
    let half_z2 = tape.mul_scalar(z2, 0.5)?;
    let ln_std = tape.log(std)?;
    let per_elem = tape.add(half_z2, ln_std)?;
    let shifted = tape.add_scalar(per_elem, 0.5 * LN_2PI)?;
    let total = tape.sum(shifted)?;
    tape.mul_scalar(total, 1.0 / rows as f64)
}

/// Cross-entropy of a batch of logits against integer targets: mean over
/// rows of `-log softmax(logits)[target]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let (rows, _) = tape.shape(logits);
    let probs = tape.softmax(logits)?;
    let picked = tape.select_per_row(probs, targets)?;
    let logp = tape.log(picked)?;
    let total = tape.sum(logp)?;
    tape.mul_scalar(total, -1.0 / rows as f64)
}

/// Reconstruction loss for whichever head the system uses.
pub fn reconstruction_loss(
    tape: &mut Tape,
    decoded: DecodedBatch,
    target_states: Var,
    target_indices: &[usize],
) -> Result<Var> {
    match decoded {
        DecodedBatch::Gaussian { mu, std } => gaussian_nll(tape, target_states, mu, std),
        DecodedBatch::Categorical { logits } => cross_entropy(tape, logits, target_indices),
    }
}

/// Decoder outputs for one batch.
#[derive(Debug, Clone, Copy)]
pub enum DecodedBatch {
    Gaussian { mu: Var, std: Var },
    Categorical { logits: Var },
}

/// Quantization loss `‖sg[s] - c‖² + β ‖s - sg[c]‖²` (sum over latent
/// dimensions, mean over the batch). The first term moves codewords, the
/// second commits the encoder.
pub fn vq_loss(tape: &mut Tape, latent: Var, codeword: Var) -> Result<Var> {
    let (rows, _) = tape.shape(latent);
    let s_const = tape.detach(latent)?;
    let c_const = tape.detach(codeword)?;

    let d1 = tape.sub(s_const, codeword)?;
    let d1sq = tape.mul(d1, d1)?;
    let codebook_term = tape.sum(d1sq)?;

    let d2 = tape.sub(latent, c_const)?;
    let d2sq = tape.mul(d2, d2)?;
    let commit_term = tape.sum(d2sq)?;

    let scaled_commit = tape.mul_scalar(commit_term, COMMITMENT_BETA)?;
    let total = tape.add(codebook_term, scaled_commit)?;
    tape.mul_scalar(total, 1.0 / rows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamStore, Tensor};

    #[test]
    fn gaussian_nll_at_mean_with_unit_std_is_half_ln_2pi_per_dim() {
        let mut tape = Tape::new();
        let d = 3;
        let x = tape.constant_row(vec![0.4, -1.0, 2.0]);
        let mu = tape.constant_row(vec![0.4, -1.0, 2.0]);
        let std = tape.constant_row(vec![1.0; d]);
        let nll = gaussian_nll(&mut tape, x, mu, std).unwrap();
        let expected = d as f64 * 0.5 * LN_2PI;
        assert!((tape.value(nll)[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn gaussian_nll_decreases_as_mean_approaches_target() {
        let mut vals = Vec::new();
        for m in [2.0, 1.0, 0.5, 0.1] {
            let mut tape = Tape::new();
            let x = tape.constant_row(vec![0.0]);
            let mu = tape.constant_row(vec![m]);
            let std = tape.constant_row(vec![0.7]);
            let nll = gaussian_nll(&mut tape, x, mu, std).unwrap();
            vals.push(tape.value(nll)[0]);
        }
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn uniform_logits_give_ln_s() {
        let mut tape = Tape::new();
        let s = 16;
        let logits = tape.constant_matrix(vec![0.3; 2 * s], 2, s);
        let ce = cross_entropy(&mut tape, logits, &[5, 11]).unwrap();
        assert!((tape.value(ce)[0] - (s as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn vq_loss_zero_iff_equal() {
        let mut tape = Tape::new();
        let s = tape.constant_row(vec![0.5, -0.25]);
        let c = tape.constant_row(vec![0.5, -0.25]);
        let l = vq_loss(&mut tape, s, c).unwrap();
        assert_eq!(tape.value(l)[0], 0.0);
    }

    #[test]
    fn vq_loss_unit_distance_is_one_plus_beta() {
        let mut tape = Tape::new();
        let s = tape.constant_row(vec![1.0, 0.0]);
        let c = tape.constant_row(vec![0.0, 0.0]);
        let l = vq_loss(&mut tape, s, c).unwrap();
        assert!((tape.value(l)[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn vq_codebook_gradient_is_two_c_minus_s() {
        let mut store = ParamStore::new();
        let c = store.register("c", Tensor::new(vec![1, 2], vec![0.3, -0.4]).unwrap());
        let s = store.register("s", Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let mut tape = Tape::new();
        let cv = tape.param(&store, c);
        let sv = tape.param(&store, s);
        let l = vq_loss(&mut tape, sv, cv).unwrap();
        tape.backward(l).unwrap();
        tape.accumulate_param_grads(&mut store);
        let grad_c = store.get(c).grad.clone().unwrap();
        assert!((grad_c[0] - 2.0 * (0.3 - 1.0)).abs() < 1e-12);
        assert!((grad_c[1] - 2.0 * (-0.4 - 1.0)).abs() < 1e-12);
        // Commitment term only reaches the encoder side.
        let grad_s = store.get(s).grad.clone().unwrap();
        assert!((grad_s[0] - 2.0 * COMMITMENT_BETA * (1.0 - 0.3)).abs() < 1e-12);
    }
}
