use super::{ConfidenceScore, ScoreError, UqMethod};
use crate::trace::{AnswerKind, InferenceTrace};

/// Log-probabilities below this are clamped before exponentiation.
pub const LOGPROB_FLOOR: f64 = -700.0;

fn floor(lp: f64) -> f64 {
    lp.max(LOGPROB_FLOOR)
}

/// Mean token probability for free-form answers; probability of the chosen
/// option token otherwise.
pub fn score_avg_token_prob(trace: &InferenceTrace) -> Result<ConfidenceScore, ScoreError> {
    let value = match trace.answer_kind {
        AnswerKind::FreeForm => {
            if trace.token_logprobs.is_empty() {
                return Err(ScoreError::MissingField("token_logprobs"));
            }
            let n = trace.token_logprobs.len() as f64;
            trace
                .token_logprobs
                .iter()
                .map(|&lp| floor(lp).exp())
                .sum::<f64>()
                / n
        }
        AnswerKind::MultipleChoice | AnswerKind::TrueFalse => {
            let lp = trace
                .chosen_option_logprob
                .ok_or(ScoreError::MissingField("chosen_option_logprob"))?;
            floor(lp).exp()
        }
    };
    Ok(ConfidenceScore::new(
        UqMethod::AvgTokenProb,
        value.clamp(0.0, 1.0),
        trace.id.clone(),
    ))
}

/// Geometric-mean token probability, i.e. the reciprocal of the standard
/// perplexity `exp(-mean ln p)`.
pub fn score_perplexity(trace: &InferenceTrace) -> Result<ConfidenceScore, ScoreError> {
    if trace.token_logprobs.is_empty() {
        return Err(ScoreError::MissingField("token_logprobs"));
    }
    let n = trace.token_logprobs.len() as f64;
    let mean = trace.token_logprobs.iter().map(|&lp| floor(lp)).sum::<f64>() / n;
    Ok(ConfidenceScore::new(
        UqMethod::Perplexity,
        mean.exp().clamp(0.0, 1.0),
        trace.id.clone(),
    ))
}

/// `p(True)` renormalized over the two answer tokens.
pub fn true_probability(ln_true: f64, ln_false: f64) -> f64 {
    let (t, f) = (floor(ln_true), floor(ln_false));
    let m = t.max(f);
    let et = (t - m).exp();
    let ef = (f - m).exp();
    (et / (et + ef)).clamp(0.0, 1.0)
}

pub fn score_p_true(trace: &InferenceTrace) -> Result<ConfidenceScore, ScoreError> {
    let (t, f) = trace
        .true_false_logprobs
        .ok_or(ScoreError::MissingField("true_false_logprobs"))?;
    Ok(ConfidenceScore::new(
        UqMethod::PTrue,
        true_probability(t, f),
        trace.id.clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn free_form(probs: &[f64]) -> InferenceTrace {
        let mut t = InferenceTrace::new("t", AnswerKind::FreeForm);
        t.token_logprobs = probs.iter().map(|p| p.ln()).collect();
        t
    }

    #[test]
    fn avg_token_prob_free_form() {
        let v = score_avg_token_prob(&free_form(&[0.5, 0.25])).unwrap().value;
        assert!((v - 0.375).abs() < 1e-15);
        let v = score_avg_token_prob(&free_form(&[0.9, 0.9, 0.1])).unwrap().value;
        // (0.9 + 0.9 + 0.1) / 3
        assert!((v - 1.9 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn avg_token_prob_multiple_choice() {
        let mut t = InferenceTrace::new("mc", AnswerKind::MultipleChoice);
        assert_eq!(
            score_avg_token_prob(&t),
            Err(ScoreError::MissingField("chosen_option_logprob"))
        );
        t.chosen_option_logprob = Some(0.0);
        assert_eq!(score_avg_token_prob(&t).unwrap().value, 1.0);
        // option token logprob wins over generated tokens
        t.token_logprobs = vec![-5.0];
        assert_eq!(score_avg_token_prob(&t).unwrap().value, 1.0);
    }

    #[test]
    fn perplexity_cases() {
        let v = |p: &[f64]| score_perplexity(&free_form(p)).unwrap().value;
        assert!((v(&[0.5, 0.5]) - 0.5).abs() < 1e-15);
        assert_eq!(v(&[1.0, 1.0, 1.0]), 1.0);
        assert!((v(&[0.8, 0.2]) - 0.4).abs() < 1e-12);
        assert_eq!(
            score_perplexity(&InferenceTrace::new("e", AnswerKind::FreeForm)),
            Err(ScoreError::MissingField("token_logprobs"))
        );
    }

    #[test]
    fn p_true_cases() {
        assert!((true_probability(-0.7, -0.7) - 0.5).abs() < 1e-15);
        let expected = (-0.1f64).exp() / ((-0.1f64).exp() + (-2.3f64).exp());
        assert!((true_probability(-0.1, -2.3) - expected).abs() < 1e-15);
        assert!((true_probability(-0.1, -2.3) - 0.9002).abs() < 1e-4);
        let tiny = true_probability(-1000.0, 0.0);
        assert!(tiny.is_finite() && (0.0..=1e-300).contains(&tiny));
        let big = true_probability(0.0, -1000.0);
        assert_eq!(big, 1.0);
        assert_eq!(
            score_p_true(&InferenceTrace::new("x", AnswerKind::TrueFalse)),
            Err(ScoreError::MissingField("true_false_logprobs"))
        );
    }

    #[test]
    fn floor_keeps_extreme_logprobs_finite() {
        let mut t = InferenceTrace::new("u", AnswerKind::FreeForm);
        t.token_logprobs = vec![-1e6, -1e6];
        let v = score_perplexity(&t).unwrap().value;
        assert!(v.is_finite() && v >= 0.0);
    }

    proptest! {
        #[test]
        fn scores_in_unit_interval(lps in prop::collection::vec(-800.0f64..=0.0, 1..40)) {
            let mut t = InferenceTrace::new("p", AnswerKind::FreeForm);
            t.token_logprobs = lps.clone();
            for s in [score_perplexity(&t).unwrap(), score_avg_token_prob(&t).unwrap()] {
                prop_assert!(s.value.is_finite() && (0.0..=1.0).contains(&s.value));
            }
            let tp = true_probability(lps[0], *lps.last().unwrap());
            prop_assert!((0.0..=1.0).contains(&tp));
        }

        #[test]
        fn perplexity_permutation_invariant(
            lps in prop::collection::vec(-30.0f64..=0.0, 1..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = lps.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut a = InferenceTrace::new("a", AnswerKind::FreeForm);
            a.token_logprobs = lps;
            let mut b = a.clone();
            b.token_logprobs = shuffled;
            let (va, vb) = (score_perplexity(&a).unwrap().value, score_perplexity(&b).unwrap().value);
            prop_assert!((va - vb).abs() <= 1e-12 * va.max(1e-300));
        }

        #[test]
        fn p_true_complement(t in -50.0f64..=0.0, f in -50.0f64..=0.0) {
            prop_assert!((true_probability(t, f) + true_probability(f, t) - 1.0).abs() < 1e-12);
        }
    }
}
