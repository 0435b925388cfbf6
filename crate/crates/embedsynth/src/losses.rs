//! Reference implementations of the training objectives: per-example SFT
//! negative log-likelihood, the DPO pairwise loss, and the InfoNCE
//! contrastive loss, plus a finite-difference gradient checker.
//!
//! Log-probabilities arrive from outside (whatever trainer consumes the
//! exported corpora); these functions are the executable definition of the
//! objectives, not a trainer.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("token log-probabilities must be <= 0, got {0}")]
    PositiveLogProb(f64),
    #[error("empty token log-probability list")]
    EmptyTokens,
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("beta must be positive, got {0}")]
    BadBeta(f64),
    #[error("tau must be positive, got {0}")]
    BadTau(f64),
    #[error("vector dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero vector: cosine similarity undefined")]
    ZeroVector,
    #[error("negatives set must be non-empty")]
    NoNegatives,
    #[error("eps out of range [1e-7, 1e-3]: {0}")]
    BadEps(f64),
}

/// Inputs to the DPO loss: summed target-token log-probabilities under the
/// policy and the frozen reference, for the winning and losing datum.
#[derive(Debug, Clone, Copy)]
pub struct DpoInputs {
    pub logp_theta_w: f64,
    pub logp_ref_w: f64,
    pub logp_theta_l: f64,
    pub logp_ref_l: f64,
    pub beta: f64,
}

impl DpoInputs {
    fn validate(&self) -> Result<(), LossError> {
        for (v, name) in [
            (self.logp_theta_w, "logp_theta_w"),
            (self.logp_ref_w, "logp_ref_w"),
            (self.logp_theta_l, "logp_theta_l"),
            (self.logp_ref_l, "logp_ref_l"),
        ] {
            if !v.is_finite() {
                return Err(LossError::NonFinite(name));
            }
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(LossError::BadBeta(self.beta));
        }
        Ok(())
    }
}

/// One contrastive example: query embedding, positive document embedding,
/// and a non-empty set of negative document embeddings.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
    pub tau: f64,
}

impl ContrastiveBatch {
    fn validate(&self) -> Result<(), LossError> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(LossError::BadTau(self.tau));
        }
        if self.negatives.is_empty() {
            return Err(LossError::NoNegatives);
        }
        let dim = self.query.len();
        for v in std::iter::once(&self.positive).chain(self.negatives.iter()) {
            if v.len() != dim {
                return Err(LossError::DimMismatch(dim, v.len()));
            }
        }
        Ok(())
    }
}

/// Per-example SFT loss: the negated sum of target-token log-probabilities.
/// No length normalization; the dataset loss is the sum over examples.
pub fn sft_nll(token_logprobs: &[f64]) -> Result<f64, LossError> {
    if token_logprobs.is_empty() {
        return Err(LossError::EmptyTokens);
    }
    let mut total = 0.0;
    for &lp in token_logprobs {
        if !lp.is_finite() {
            return Err(LossError::NonFinite("token_logprob"));
        }
        if lp > 0.0 {
            return Err(LossError::PositiveLogProb(lp));
        }
        total += lp;
    }
    Ok(-total)
}

/// Numerically stable softplus: ln(1 + e^x).
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dpo_margin(inputs: &DpoInputs) -> f64 {
    inputs.beta
        * ((inputs.logp_theta_w - inputs.logp_ref_w) - (inputs.logp_theta_l - inputs.logp_ref_l))
}

/// DPO loss: -log sigma(beta * [(logp_th_w - logp_ref_w) - (logp_th_l - logp_ref_l)]),
/// computed as softplus of the negated margin.
pub fn dpo_loss(inputs: &DpoInputs) -> Result<f64, LossError> {
    inputs.validate()?;
    Ok(softplus(-dpo_margin(inputs)))
}

/// Analytic gradient of `dpo_loss` with respect to
/// (logp_theta_w, logp_ref_w, logp_theta_l, logp_ref_l).
pub fn dpo_loss_grad(inputs: &DpoInputs) -> Result<[f64; 4], LossError> {
    inputs.validate()?;
    // d/dm softplus(-m) = -sigma(-m)
    let dm = -sigmoid(-dpo_margin(inputs));
    let b = inputs.beta;
    Ok([dm * b, dm * -b, dm * -b, dm * b])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64, LossError> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(LossError::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// InfoNCE loss over temperature-scaled cosine similarities, with
/// max-subtraction before exponentiation for stability.
pub fn info_nce(batch: &ContrastiveBatch) -> Result<f64, LossError> {
    batch.validate()?;
    let scores = nce_scores(batch)?;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    Ok(-(scores[0] - max - denom.ln()))
}

/// Scores s_j = cos(q, d_j) / tau with the positive at index 0.
fn nce_scores(batch: &ContrastiveBatch) -> Result<Vec<f64>, LossError> {
    let mut scores = Vec::with_capacity(1 + batch.negatives.len());
    scores.push(cosine(&batch.query, &batch.positive)? / batch.tau);
    for neg in &batch.negatives {
        scores.push(cosine(&batch.query, neg)? / batch.tau);
    }
    Ok(scores)
}

/// Analytic gradient of `info_nce` with respect to the query vector.
pub fn info_nce_grad_query(batch: &ContrastiveBatch) -> Result<Vec<f64>, LossError> {
    batch.validate()?;
    let scores = nce_scores(batch)?;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let denom: f64 = exps.iter().sum();

    let q = &batch.query;
    let nq = norm(q);
    if nq == 0.0 {
        return Err(LossError::ZeroVector);
    }
    let mut grad = vec![0.0; q.len()];
    let docs = std::iter::once(&batch.positive).chain(batch.negatives.iter());
    for (j, d) in docs.enumerate() {
        // dL/ds_j = softmax_j - [j == 0]
        let dls = exps[j] / denom - if j == 0 { 1.0 } else { 0.0 };
        let nd = norm(d);
        let cos = dot(q, d) / (nq * nd);
        // d cos / d q = d/(|q||d|) - cos * q/|q|^2
        for i in 0..q.len() {
            let dcos = d[i] / (nq * nd) - cos * q[i] / (nq * nq);
            grad[i] += dls * dcos / batch.tau;
        }
    }
    Ok(grad)
}

/// Central finite-difference check: compares `analytic` against the numeric
/// gradient of `f` at `x` and returns the maximum relative error over
/// coordinates. Relative error is |a - n| / max(1, |a|, |n|).
pub fn grad_check<F>(f: F, x: &[f64], analytic: &[f64], eps: f64) -> Result<f64, LossError>
where
    F: Fn(&[f64]) -> Result<f64, LossError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(LossError::BadEps(eps));
    }
    if analytic.len() != x.len() {
        return Err(LossError::DimMismatch(analytic.len(), x.len()));
    }
    let mut max_err = 0.0f64;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + eps;
        let fp = f(&xp)?;
        xp[i] = x[i] - eps;
        let fm = f(&xp)?;
        xp[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(LossError::NonFinite("finite-difference evaluation"));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let denom = 1.0f64.max(analytic[i].abs()).max(numeric.abs());
        max_err = max_err.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN_2: f64 = std::f64::consts::LN_2;

    fn dpo(w_t: f64, w_r: f64, l_t: f64, l_r: f64, beta: f64) -> DpoInputs {
        DpoInputs {
            logp_theta_w: w_t,
            logp_ref_w: w_r,
            logp_theta_l: l_t,
            logp_ref_l: l_r,
            beta,
        }
    }

    #[test]
    fn sft_nll_perfect_prediction_is_zero() {
        assert_eq!(sft_nll(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn sft_nll_two_half_prob_tokens() {
        let v = sft_nll(&[-LN_2, -LN_2]).unwrap();
        assert!((v - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn sft_nll_rejects_positive_logprob() {
        assert!(matches!(
            sft_nll(&[0.1]),
            Err(LossError::PositiveLogProb(_))
        ));
        assert!(matches!(sft_nll(&[]), Err(LossError::EmptyTokens)));
    }

    #[test]
    fn dpo_zero_margin_is_ln_two() {
        let v = dpo_loss(&dpo(-3.0, -3.0, -5.0, -5.0, 0.1)).unwrap();
        assert!((v - LN_2).abs() < 1e-12);
    }

    #[test]
    fn dpo_unit_ratios_beta_point_one() {
        // chosen ratio +1, rejected ratio -1, margin = 0.1 * 2 = 0.2
        let v = dpo_loss(&dpo(1.0, 0.0, -1.0, 0.0, 0.1)).unwrap();
        let oracle = -(1.0 / (1.0 + (-0.2f64).exp())).ln();
        assert!((v - oracle).abs() < 1e-9);
    }

    #[test]
    fn dpo_loss_vanishes_for_large_margin() {
        let mut last = f64::INFINITY;
        for m in [1.0, 10.0, 100.0, 700.0] {
            let v = dpo_loss(&dpo(m, 0.0, -m, 0.0, 1.0)).unwrap();
            assert!(v <= last);
            last = v;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn dpo_rejects_bad_beta_and_non_finite() {
        assert!(dpo_loss(&dpo(0.0, 0.0, 0.0, 0.0, 0.0)).is_err());
        assert!(dpo_loss(&dpo(f64::NAN, 0.0, 0.0, 0.0, 0.1)).is_err());
    }

    #[test]
    fn info_nce_symmetric_case_is_ln_two() {
        // cos(q, pos) = cos(q, neg): orthogonal pair mirrored.
        let batch = ContrastiveBatch {
            query: vec![1.0, 0.0],
            positive: vec![1.0, 1.0],
            negatives: vec![vec![1.0, -1.0]],
            tau: 0.5,
        };
        let v = info_nce(&batch).unwrap();
        assert!((v - LN_2).abs() < 1e-12);
    }

    #[test]
    fn info_nce_unit_scores() {
        // cos+ = 1, cos- = 0, tau = 1 -> ln(1 + e^-1)
        let batch = ContrastiveBatch {
            query: vec![1.0, 0.0],
            positive: vec![2.0, 0.0],
            negatives: vec![vec![0.0, 3.0]],
            tau: 1.0,
        };
        let v = info_nce(&batch).unwrap();
        assert!((v - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn info_nce_grows_with_extra_negative() {
        let mut batch = ContrastiveBatch {
            query: vec![1.0, 0.5],
            positive: vec![0.9, 0.6],
            negatives: vec![vec![0.1, 1.0]],
            tau: 0.7,
        };
        let before = info_nce(&batch).unwrap();
        batch.negatives.push(vec![1.0, 0.0]);
        assert!(info_nce(&batch).unwrap() > before);
    }

    #[test]
    fn info_nce_rejects_zero_vector_and_dim_mismatch() {
        let batch = ContrastiveBatch {
            query: vec![0.0, 0.0],
            positive: vec![1.0, 0.0],
            negatives: vec![vec![0.0, 1.0]],
            tau: 1.0,
        };
        assert!(matches!(info_nce(&batch), Err(LossError::ZeroVector)));
        let batch = ContrastiveBatch {
            query: vec![1.0, 0.0],
            positive: vec![1.0],
            negatives: vec![vec![0.0, 1.0]],
            tau: 1.0,
        };
        assert!(matches!(info_nce(&batch), Err(LossError::DimMismatch(..))));
    }

    #[test]
    fn grad_check_exact_for_linear_function() {
        let f = |x: &[f64]| Ok(3.0 * x[0] - 2.0 * x[1]);
        let err = grad_check(f, &[0.3, -0.7], &[3.0, -2.0], 1e-5).unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn dpo_gradient_matches_finite_differences() {
        let inputs = dpo(-1.3, -2.1, -0.4, -3.2, 0.1);
        let analytic = dpo_loss_grad(&inputs).unwrap();
        let f = |x: &[f64]| dpo_loss(&dpo(x[0], x[1], x[2], x[3], 0.1));
        let err = grad_check(
            f,
            &[
                inputs.logp_theta_w,
                inputs.logp_ref_w,
                inputs.logp_theta_l,
                inputs.logp_ref_l,
            ],
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn info_nce_query_gradient_matches_finite_differences() {
        let batch = ContrastiveBatch {
            query: vec![0.8, -0.3, 0.5],
            positive: vec![0.7, 0.1, 0.4],
            negatives: vec![vec![-0.2, 0.9, 0.3], vec![0.1, 0.2, -0.8]],
            tau: 0.3,
        };
        let analytic = info_nce_grad_query(&batch).unwrap();
        let b = batch.clone();
        let f = move |x: &[f64]| {
            let mut bb = b.clone();
            bb.query = x.to_vec();
            info_nce(&bb)
        };
        let err = grad_check(f, &batch.query, &analytic, 1e-5).unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    proptest! {
        #[test]
        fn dpo_invariant_to_shared_shift(
            w_t in -5.0..5.0f64, w_r in -5.0..5.0f64,
            l_t in -5.0..5.0f64, l_r in -5.0..5.0f64,
            c in -10.0..10.0f64, beta in 0.01..1.0f64,
        ) {
            let base = dpo_loss(&dpo(w_t, w_r, l_t, l_r, beta)).unwrap();
            let shifted_w = dpo_loss(&dpo(w_t + c, w_r + c, l_t, l_r, beta)).unwrap();
            let shifted_l = dpo_loss(&dpo(w_t, w_r, l_t + c, l_r + c, beta)).unwrap();
            prop_assert!((base - shifted_w).abs() < 1e-9);
            prop_assert!((base - shifted_l).abs() < 1e-9);
        }

        #[test]
        fn dpo_monotone_in_ratios(
            w in -3.0..3.0f64, l in -3.0..3.0f64, beta in 0.01..1.0f64,
        ) {
            let base = dpo_loss(&dpo(w, 0.0, l, 0.0, beta)).unwrap();
            let better = dpo_loss(&dpo(w + 0.5, 0.0, l, 0.0, beta)).unwrap();
            let worse = dpo_loss(&dpo(w, 0.0, l + 0.5, 0.0, beta)).unwrap();
            prop_assert!(better < base);
            prop_assert!(worse > base);
        }

        #[test]
        fn info_nce_scale_invariant(
            scale in 0.01..100.0f64,
            qx in -1.0..1.0f64, qy in 0.1..1.0f64,
        ) {
            let batch = ContrastiveBatch {
                query: vec![qx, qy],
                positive: vec![0.5, 0.7],
                negatives: vec![vec![0.9, -0.1]],
                tau: 0.2,
            };
            let mut scaled = batch.clone();
            scaled.query = batch.query.iter().map(|v| v * scale).collect();
            let a = info_nce(&batch).unwrap();
            let b = info_nce(&scaled).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(a.is_finite());
        }
    }
}
