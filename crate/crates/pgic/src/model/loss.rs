//! Progressive training objective: stage weights, commitment loss, and the
//! weighted per-stage sum collapsed into one scalar for a single backward
//! pass.

use crate::tensor::{Tape, Tensor, Tracked};

use super::{ModelError, ModelResult};

/// Stage weights: p/(n-1) for every stage but the last, 1-p for the last.
/// They sum to 1 for any p in [0, 1]; n == 1 returns [1].
pub fn lambda_weights(p: f32, n: usize) -> ModelResult<Vec<f32>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ModelError::BadWeightRatio { p });
    }
    assert!(n >= 1, "stage count must be at least 1");
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let mut weights = vec![p / (n - 1) as f32; n];
    weights[n - 1] = 1.0 - p;
    Ok(weights)
}

/// beta * mean squared distance between the encoder output and its (stopped)
/// quantization. The gradient pulls `y` toward the codewords; the codebooks
/// themselves learn by EMA, not through this loss.
pub fn commitment_loss(
    tape: &mut Tape,
    y: Tracked,
    quantized: &Tensor,
    beta: f32,
) -> ModelResult<Tracked> {
    let q = tape.constant(quantized.clone());
    let d = tape.mean_sq_diff(y, q)?;
    Ok(tape.scale(d, beta))
}

/// Sum over stages of lambda_i * (L1(x, xhat_i) + lambda_cb * cb_loss_i).
pub fn progressive_loss(
    tape: &mut Tape,
    x: Tracked,
    reconstructions: &[Tracked],
    codebook_losses: &[Tracked],
    lambda: &[f32],
    lambda_cb: f32,
) -> ModelResult<Tracked> {
    if reconstructions.len() != lambda.len() {
        return Err(ModelError::LossLengthMismatch {
            expected: lambda.len(),
            got: reconstructions.len(),
        });
    }
    if codebook_losses.len() != lambda.len() {
        return Err(ModelError::LossLengthMismatch {
            expected: lambda.len(),
            got: codebook_losses.len(),
        });
    }
    let mut total: Option<Tracked> = None;
    for i in 0..lambda.len() {
        let l1 = tape.mean_abs_diff(x, reconstructions[i])?;
        let cb = tape.scale(codebook_losses[i], lambda_cb);
        let term = tape.add(l1, cb)?;
        let weighted = tape.scale(term, lambda[i]);
        total = Some(match total {
            None => weighted,
            Some(t) => tape.add(t, weighted)?,
        });
    }
    Ok(total.expect("n >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn paper_stated_weights_at_half() {
        let w = lambda_weights(0.5, 5).unwrap();
        assert_eq!(w, vec![0.125, 0.125, 0.125, 0.125, 0.5]);
    }

    #[test]
    fn zero_p_puts_all_weight_on_final_stage() {
        let w = lambda_weights(0.0, 4).unwrap();
        assert_eq!(w, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn weights_always_sum_to_one() {
        for &(p, n) in &[(0.3f32, 2usize), (0.9, 7), (1.0, 3), (0.25, 16)] {
            let w = lambda_weights(p, n).unwrap();
            let sum: f32 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-7, "p={p} n={n} sum={sum}");
        }
        assert_eq!(lambda_weights(0.7, 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn out_of_range_p_is_rejected() {
        assert!(matches!(
            lambda_weights(-0.1, 3),
            Err(ModelError::BadWeightRatio { .. })
        ));
        assert!(matches!(
            lambda_weights(1.1, 3),
            Err(ModelError::BadWeightRatio { .. })
        ));
    }

    #[test]
    fn perfect_reconstruction_zero_codebook_loss_is_zero() {
        let x = Tensor::new(vec![3, 2, 2], vec![0.5; 12]).unwrap();
        let mut tape = Tape::new();
        let xt = tape.constant(x.clone());
        let recons: Vec<Tracked> = (0..3).map(|_| tape.constant(x.clone())).collect();
        let zeros: Vec<Tracked> = (0..3).map(|_| tape.constant(Tensor::scalar(0.0))).collect();
        let lambda = lambda_weights(0.5, 3).unwrap();
        let loss = progressive_loss(&mut tape, xt, &recons, &zeros, &lambda, 1.0).unwrap();
        assert_eq!(tape.value(loss).scalar_value(), 0.0);
    }

    #[test]
    fn single_stage_reduces_to_l1_plus_codebook() {
        let x = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        let r = Tensor::new(vec![2], vec![0.5, 0.5]).unwrap();
        let mut tape = Tape::new();
        let xt = tape.constant(x);
        let rt = tape.constant(r);
        let cb = tape.constant(Tensor::scalar(0.25));
        let lambda = lambda_weights(0.5, 1).unwrap();
        let loss = progressive_loss(&mut tape, xt, &[rt], &[cb], &lambda, 2.0).unwrap();
        // L1 = 0.5, cb term = 2.0 * 0.25 = 0.5, lambda = 1.
        assert!((tape.value(loss).scalar_value() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn matches_hand_accumulation_on_random_inputs() {
        let mut rng = ChaCha20Rng::seed_from_u64(61);
        let n = 4;
        let x = Tensor::new(vec![3, 4, 4], (0..48).map(|_| rng.random()).collect()).unwrap();
        let recs: Vec<Tensor> = (0..n)
            .map(|_| Tensor::new(vec![3, 4, 4], (0..48).map(|_| rng.random()).collect()).unwrap())
            .collect();
        let cbs: Vec<f32> = (0..n).map(|_| rng.random::<f32>() * 0.1).collect();
        let lambda = lambda_weights(0.4, n).unwrap();
        let lambda_cb = 0.8f32;

        let mut tape = Tape::new();
        let xt = tape.constant(x.clone());
        let rts: Vec<Tracked> = recs.iter().map(|r| tape.constant(r.clone())).collect();
        let cts: Vec<Tracked> = cbs.iter().map(|&c| tape.constant(Tensor::scalar(c))).collect();
        let loss = progressive_loss(&mut tape, xt, &rts, &cts, &lambda, lambda_cb).unwrap();

        // Hand accumulation with the same f32 steps.
        let mut want = 0.0f32;
        for i in 0..n {
            let mut l1 = 0.0f32;
            for (a, b) in x.data().iter().zip(recs[i].data()) {
                l1 += (a - b).abs();
            }
            l1 /= 48.0;
            want += lambda[i] * (l1 + lambda_cb * cbs[i]);
        }
        assert!((tape.value(loss).scalar_value() - want).abs() < 1e-6);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![2]));
        let r = tape.constant(Tensor::zeros(vec![2]));
        let c = tape.constant(Tensor::scalar(0.0));
        let lambda = lambda_weights(0.5, 2).unwrap();
        assert!(matches!(
            progressive_loss(&mut tape, x, &[r], &[c], &lambda, 1.0),
            Err(ModelError::LossLengthMismatch { .. })
        ));
    }

    #[test]
    fn commitment_matches_analytic_gradient() {
        // d/dy of beta * mean (y - q)^2 is 2 beta (y - q) / numel.
        let y = Tensor::new(vec![2, 1, 1], vec![0.9, 0.1]).unwrap();
        let q = Tensor::new(vec![2, 1, 1], vec![1.0, 0.0]).unwrap();
        let beta = 0.25f32;
        let mut tape = Tape::new();
        let yt = tape.leaf(&y);
        let loss = commitment_loss(&mut tape, yt, &q, beta).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(yt).unwrap();
        for i in 0..2 {
            let want = 2.0 * beta * (y.data()[i] - q.data()[i]) / 2.0;
            assert!((g[i] - want).abs() < 1e-7);
        }
    }
}
