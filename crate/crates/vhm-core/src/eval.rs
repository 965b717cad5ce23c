//! Decoding (greedy, beam search with length penalty) and metrics
//! (ROUGE-1/2/L F1, exact match, token accuracy, bootstrap intervals).

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::VhmError;
use crate::math;
use crate::rng::{SeededRng, Stream};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Length penalty exponent; hypothesis scores are divided by
    /// `((5 + |Y|) / 6)^alpha`.
    pub length_penalty: f64,
    /// Maximum generated length including the end-of-sequence token.
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam_size: 4, length_penalty: 0.6, max_len: 16 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size < 1 {
            return Err(VhmError::Config("beam_size must be >= 1".into()));
        }
        if self.max_len < 1 {
            return Err(VhmError::Config("max_len must be >= 1".into()));
        }
        if self.length_penalty < 0.0 {
            return Err(VhmError::Config("length_penalty must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_pr(precision: f64, recall: f64) -> RougeScore {
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        RougeScore { precision, recall, f1 }
    }
}

fn ngram_counts(seq: &[u32], n: usize) -> BTreeMap<&[u32], usize> {
    let mut counts = BTreeMap::new();
    if n >= 1 && seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped n-gram overlap counts. Empty denominators give
/// zero scores rather than errors.
pub fn rouge_n(candidate: &[u32], reference: &[u32], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refr = ngram_counts(reference, n);
    let cand_total: usize = cand.values().sum();
    let ref_total: usize = refr.values().sum();
    let overlap: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(refr.get(gram).copied().unwrap_or(0)))
        .sum();
    let precision = if cand_total > 0 { overlap as f64 / cand_total as f64 } else { 0.0 };
    let recall = if ref_total > 0 { overlap as f64 / ref_total as f64 } else { 0.0 };
    RougeScore::from_pr(precision, recall)
}

/// Longest-common-subsequence length (dynamic program).
pub fn lcs_len(a: &[u32], b: &[u32]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            row[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(row[j]) };
        }
        core::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// ROUGE-L from the LCS length.
pub fn rouge_l(candidate: &[u32], reference: &[u32]) -> RougeScore {
    let l = lcs_len(candidate, reference) as f64;
    let precision = if candidate.is_empty() { 0.0 } else { l / candidate.len() as f64 };
    let recall = if reference.is_empty() { 0.0 } else { l / reference.len() as f64 };
    RougeScore::from_pr(precision, recall)
}

/// Next-token distribution source for decoding. `prefix` is the generated
/// content so far (no BOS/EOS framing); implementations return
/// log-probabilities over the full vocabulary.
pub trait NextTokenScorer {
    fn vocab_size(&self) -> usize;
    fn log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>>;
}

/// GNMT-style length penalty `((5 + len) / 6)^alpha`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    math::powf((5.0 + len as f64) / 6.0, alpha)
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<u32>,
    log_prob: f64,
}

fn penalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    log_prob / length_penalty(len.max(1), alpha)
}

/// Deterministic beam search. Hypotheses finish on `eos`; finished ones are
/// ranked by sum log-probability divided by the length penalty (length
/// counts the eos step). Returns the best finished hypothesis, falling back
/// to the best unfinished one at `max_len`. Ties break toward the
/// lexicographically smaller token sequence.
pub fn beam_search(scorer: &mut dyn NextTokenScorer, cfg: &DecodeConfig, eos: u32) -> Result<Vec<u32>> {
    cfg.validate()?;
    let alpha = cfg.length_penalty;
    let mut alive = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0 }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _round in 0..cfg.max_len {
        if alive.is_empty() {
            break;
        }
        let mut candidates: Vec<Hypothesis> = Vec::with_capacity(alive.len() * scorer.vocab_size());
        for hyp in &alive {
            let lp = scorer.log_probs(&hyp.tokens)?;
            for (tok, &l) in lp.iter().enumerate() {
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok as u32);
                candidates.push(Hypothesis { tokens, log_prob: hyp.log_prob + l });
            }
        }
        candidates.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        alive = Vec::new();
        for cand in candidates.into_iter().take(cfg.beam_size) {
            if *cand.tokens.last().expect("non-empty") == eos {
                let mut tokens = cand.tokens;
                tokens.pop();
                finished.push(Hypothesis { tokens, log_prob: cand.log_prob });
            } else {
                alive.push(cand);
            }
        }
    }

    let best = |hyps: &[Hypothesis], includes_eos: bool| -> Option<Vec<u32>> {
        hyps.iter()
            .min_by(|a, b| {
                let extra = usize::from(includes_eos);
                let sa = penalized(a.log_prob, a.tokens.len() + extra, alpha);
                let sb = penalized(b.log_prob, b.tokens.len() + extra, alpha);
                sb.partial_cmp(&sa)
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then_with(|| a.tokens.cmp(&b.tokens))
            })
            .map(|h| h.tokens.clone())
    };

    best(&finished, true)
        .or_else(|| best(&alive, false))
        .ok_or_else(|| VhmError::Contract("beam search produced no hypotheses".into()))
}

/// Greedy decoding: argmax token each step (ties to the lower id), stopping
/// at `eos` or `max_len` generated tokens.
pub fn greedy_decode(scorer: &mut dyn NextTokenScorer, max_len: usize, eos: u32) -> Result<Vec<u32>> {
    let mut tokens: Vec<u32> = Vec::new();
    for _ in 0..max_len {
        let lp = scorer.log_probs(&tokens)?;
        let mut best = 0usize;
        for (i, &v) in lp.iter().enumerate() {
            if v > lp[best] {
                best = i;
            }
        }
        if best as u32 == eos {
            break;
        }
        tokens.push(best as u32);
    }
    Ok(tokens)
}

/// Fraction of output sequences exactly equal to their references.
pub fn exact_match_rate(outputs: &[Vec<u32>], references: &[Vec<u32>]) -> Result<f64> {
    if outputs.is_empty() || outputs.len() != references.len() {
        return Err(VhmError::Contract(alloc::format!(
            "exact_match_rate needs matched non-empty sets, got {} outputs / {} references",
            outputs.len(),
            references.len()
        )));
    }
    let hits = outputs.iter().zip(references).filter(|(o, r)| o == r).count();
    Ok(hits as f64 / outputs.len() as f64)
}

/// Mean over pairs of the fraction of matching tokens at aligned positions
/// up to the shorter length. A pair where exactly one side is empty scores
/// zero; two empty sides score one.
pub fn token_accuracy(outputs: &[Vec<u32>], references: &[Vec<u32>]) -> Result<f64> {
    if outputs.is_empty() || outputs.len() != references.len() {
        return Err(VhmError::Contract("token_accuracy needs matched non-empty sets".into()));
    }
    let mut total = 0.0;
    for (o, r) in outputs.iter().zip(references) {
        let min_len = o.len().min(r.len());
        total += if min_len == 0 {
            if o.is_empty() && r.is_empty() {
                1.0
            } else {
                0.0
            }
        } else {
            let matches = o.iter().zip(r).filter(|(a, b)| a == b).count();
            matches as f64 / min_len as f64
        };
    }
    Ok(total / outputs.len() as f64)
}

/// Percentile bootstrap confidence interval for the mean of `values`.
pub fn bootstrap_interval(values: &[f64], resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(VhmError::Contract("bootstrap over an empty set".into()));
    }
    let mut rng = SeededRng::new(seed, Stream::Eval);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..values.len() {
            sum += values[rng.below(values.len())];
        }
        means.push(sum / values.len() as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let pick = |q: f64| -> f64 {
        let idx = math::round(q * (means.len() - 1) as f64) as usize;
        means[idx]
    };
    Ok((pick(0.025), pick(0.975)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rouge_n_hand_cases() {
        // Identical non-empty sequences: perfect scores.
        let s = [1, 2, 3];
        let r = rouge_n(&s, &s, 1);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));

        // Disjoint vocabularies: all zeros.
        let r = rouge_n(&[1, 2], &[3, 4], 1);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));

        // "the cat" vs "the cat sat": P=1, R=2/3, F1=0.8.
        let r = rouge_n(&[10, 11], &[10, 11, 12], 1);
        assert_eq!(r.precision, 1.0);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.f1 - 0.8).abs() < 1e-15);

        // n longer than both sequences: zeros, no error.
        let r = rouge_n(&[1, 2], &[1, 2], 5);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rouge_n_clips_repeated_ngrams() {
        // candidate repeats a unigram more often than the reference has it.
        let r = rouge_n(&[7, 7, 7], &[7, 8], 1);
        assert!((r.precision - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rouge_f1_symmetric_under_swap() {
        let a = [1, 2, 3, 2];
        let b = [2, 3, 3];
        for n in 1..=2 {
            let ab = rouge_n(&a, &b, n);
            let ba = rouge_n(&b, &a, n);
            assert_eq!(ab.precision, ba.recall);
            assert_eq!(ab.recall, ba.precision);
            assert!((ab.f1 - ba.f1).abs() < 1e-15);
        }
        let ab = rouge_l(&a, &b);
        let ba = rouge_l(&b, &a);
        assert!((ab.f1 - ba.f1).abs() < 1e-15);
    }

    #[test]
    fn rouge_l_hand_cases() {
        let r = rouge_l(&[1, 2], &[1, 2]);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));

        // "a x b" vs "a b": LCS=2 -> P=2/3, R=1, F1=0.8.
        let r = rouge_l(&[1, 9, 2], &[1, 2]);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 0.8).abs() < 1e-15);
    }

    /// Exponential-time reference used to validate the DP.
    fn lcs_recursive(a: &[u32], b: &[u32]) -> usize {
        match (a.split_last(), b.split_last()) {
            (Some((xa, ra)), Some((xb, rb))) => {
                if xa == xb {
                    1 + lcs_recursive(ra, rb)
                } else {
                    lcs_recursive(ra, b).max(lcs_recursive(a, rb))
                }
            }
            _ => 0,
        }
    }

    #[test]
    fn lcs_matches_recursive_oracle() {
        let mut rng = SeededRng::new(31, Stream::Eval);
        for _ in 0..200 {
            let la = rng.below(9);
            let lb = rng.below(9);
            let a: Vec<u32> = (0..la).map(|_| rng.below(4) as u32).collect();
            let b: Vec<u32> = (0..lb).map(|_| rng.below(4) as u32).collect();
            assert_eq!(lcs_len(&a, &b), lcs_recursive(&a, &b));
        }
    }

    /// Fixed table of per-prefix log-probs over a tiny vocabulary.
    struct ToyScorer {
        vocab: usize,
        table: BTreeMap<Vec<u32>, Vec<f64>>,
    }

    impl NextTokenScorer for ToyScorer {
        fn vocab_size(&self) -> usize {
            self.vocab
        }
        fn log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>> {
            Ok(self.table.get(prefix).expect("prefix in table").clone())
        }
    }

    fn log_dist(probs: &[f64]) -> Vec<f64> {
        probs.iter().map(|p| p.ln()).collect()
    }

    #[test]
    fn beam_finds_delayed_reward_path() {
        // Token 1 looks worse at step one but pays off at step two; eos=0.
        // Hand-computed: best finished sequence is [2, 1].
        let mut table = BTreeMap::new();
        table.insert(vec![], log_dist(&[0.05, 0.45, 0.5]));
        table.insert(vec![1], log_dist(&[0.5, 0.25, 0.25]));
        table.insert(vec![2], log_dist(&[0.1, 0.8, 0.1]));
        table.insert(vec![1, 1], log_dist(&[0.9, 0.05, 0.05]));
        table.insert(vec![1, 2], log_dist(&[0.9, 0.05, 0.05]));
        table.insert(vec![2, 1], log_dist(&[0.9, 0.05, 0.05]));
        table.insert(vec![2, 2], log_dist(&[0.9, 0.05, 0.05]));
        let mut scorer = ToyScorer { vocab: 3, table };
        let cfg = DecodeConfig { beam_size: 2, length_penalty: 0.0, max_len: 3 };
        let out = beam_search(&mut scorer, &cfg, 0).unwrap();
        assert_eq!(out, vec![2, 1]);
    }

    #[test]
    fn beam_one_equals_greedy_and_alpha_zero_is_raw_ranking() {
        let mut rng = SeededRng::new(77, Stream::Eval);
        for _ in 0..100 {
            let vocab = 2 + rng.below(3);
            let max_len = 1 + rng.below(4);
            // Build a full random prefix table.
            let mut table = BTreeMap::new();
            let mut stack = vec![Vec::<u32>::new()];
            while let Some(prefix) = stack.pop() {
                let mut probs: Vec<f64> = (0..vocab).map(|_| rng.uniform_in(0.05, 1.0)).collect();
                let total: f64 = probs.iter().sum();
                for p in probs.iter_mut() {
                    *p /= total;
                }
                table.insert(prefix.clone(), log_dist(&probs));
                if prefix.len() < max_len {
                    for t in 1..vocab as u32 {
                        let mut next = prefix.clone();
                        next.push(t);
                        stack.push(next);
                    }
                }
            }
            let cfg = DecodeConfig { beam_size: 1, length_penalty: 0.6, max_len };
            let mut s1 = ToyScorer { vocab, table: table.clone() };
            let beam = beam_search(&mut s1, &cfg, 0).unwrap();
            let mut s2 = ToyScorer { vocab, table };
            let greedy = greedy_decode(&mut s2, max_len, 0).unwrap();
            assert_eq!(beam, greedy);
        }
        // alpha = 0 means the penalty divisor is exactly 1 at any length.
        assert_eq!(length_penalty(1, 0.0), 1.0);
        assert_eq!(length_penalty(9, 0.0), 1.0);
    }

    #[test]
    fn beam_dominates_greedy_under_the_same_penalty() {
        // Score both outputs as finished hypotheses (eos appended) with the
        // same penalty the search uses.
        let score = |table: &BTreeMap<Vec<u32>, Vec<f64>>, tokens: &[u32], alpha: f64| -> f64 {
            let mut logp = 0.0;
            let mut prefix = Vec::new();
            for &t in tokens {
                logp += table[&prefix][t as usize];
                prefix.push(t);
            }
            logp += table[&prefix][0];
            logp / length_penalty(tokens.len() + 1, alpha)
        };
        // Generous max_len relative to the eos mass, the regime the
        // fallback rule is designed for; with truncation-dominated decodes
        // the finished-priority return makes dominance unprovable.
        let mut rng = SeededRng::new(91, Stream::Eval);
        for _ in 0..60 {
            let vocab = 3 + rng.below(2);
            let max_len = 6 + rng.below(3);
            let mut table = BTreeMap::new();
            let mut stack = vec![Vec::<u32>::new()];
            while let Some(prefix) = stack.pop() {
                let mut probs: Vec<f64> = (0..vocab).map(|_| rng.uniform_in(0.05, 1.0)).collect();
                let total: f64 = probs.iter().sum();
                for p in probs.iter_mut() {
                    *p /= total;
                }
                table.insert(prefix.clone(), log_dist(&probs));
                if prefix.len() < max_len {
                    for t in 1..vocab as u32 {
                        let mut next = prefix.clone();
                        next.push(t);
                        stack.push(next);
                    }
                }
            }
            let alpha = 0.6;
            let cfg = DecodeConfig { beam_size: 3, length_penalty: alpha, max_len };
            let mut s1 = ToyScorer { vocab, table: table.clone() };
            let beam = beam_search(&mut s1, &cfg, 0).unwrap();
            let mut s2 = ToyScorer { vocab, table: table.clone() };
            let greedy = greedy_decode(&mut s2, max_len, 0).unwrap();
            assert!(
                score(&table, &beam, alpha) >= score(&table, &greedy, alpha) - 1e-12,
                "beam {beam:?} scored below greedy {greedy:?}"
            );
        }
    }

    #[test]
    fn exact_match_and_token_accuracy() {
        let outs = vec![vec![1, 2], vec![3, 4]];
        let refs = vec![vec![1, 2], vec![3, 5]];
        assert_eq!(exact_match_rate(&outs, &outs.clone()).unwrap(), 1.0);
        assert_eq!(exact_match_rate(&outs, &refs).unwrap(), 0.5);
        assert!(exact_match_rate(&[], &[]).is_err());
        assert!((token_accuracy(&outs, &refs).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_brackets_the_mean() {
        let values: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        let (lo, hi) = bootstrap_interval(&values, 1000, 5).unwrap();
        assert!(lo <= mean && mean <= hi);
        let (lo2, hi2) = bootstrap_interval(&values, 1000, 5).unwrap();
        assert_eq!((lo, hi), (lo2, hi2));
    }
}
