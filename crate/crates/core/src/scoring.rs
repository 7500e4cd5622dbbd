//! Set-based extraction metrics and the report arithmetic built on them.
//!
//! Extraction has no true negatives, so accuracy is the Jaccard overlap
//! `tp / (tp + fp + fn)`. With that definition `f1 = 2J / (1 + J)` and, from rates alone,
//! `accuracy = 1 / (1/P + 1/R - 1)`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScoringError {
    #[error("cannot aggregate an empty list of repetitions")]
    Empty,
    #[error("{cards} score cards but {times} iteration times")]
    LengthMismatch { cards: usize, times: usize },
    #[error("percentage change from a zero initial value")]
    ZeroInitial,
    #[error(
        "failure percent needs iterations > 0 and errors <= iterations (got {errors}/{iterations})"
    )]
    InvalidCounts { errors: usize, iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0.0 when both inputs are 0.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Jaccard accuracy implied by a precision/recall pair.
pub fn accuracy_from(precision: f64, recall: f64) -> f64 {
    if precision == 0.0 || recall == 0.0 {
        return 0.0;
    }
    1.0 / (1.0 / precision + 1.0 / recall - 1.0)
}

impl ScoreCard {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio_or_one(tp, tp + fp);
        let recall = ratio_or_one(tp, tp + fn_);
        Self {
            tp,
            fp,
            fn_,
            accuracy: ratio_or_one(tp, tp + fp + fn_),
            precision,
            recall,
            f1: f1_from(precision, recall),
        }
    }

    /// Micro-pooling: sums the counts and recomputes the metrics.
    pub fn pooled<'a>(cards: impl IntoIterator<Item = &'a ScoreCard>) -> Self {
        let (tp, fp, fn_) = cards.into_iter().fold((0, 0, 0), |(tp, fp, fn_), c| {
            (tp + c.tp, fp + c.fp, fn_ + c.fn_)
        });
        Self::from_counts(tp, fp, fn_)
    }
}

/// Scores a final prediction list against gold under exact string equality, with set
/// semantics on both sides.
pub fn score<G, P>(gold: &[G], pred: &[P]) -> ScoreCard
where
    G: AsRef<str>,
    P: AsRef<str>,
{
    let gold: HashSet<&str> = gold.iter().map(AsRef::as_ref).collect();
    let pred: HashSet<&str> = pred.iter().map(AsRef::as_ref).collect();
    let tp = gold.intersection(&pred).count();
    ScoreCard::from_counts(tp, pred.len() - tp, gold.len() - tp)
}

pub fn round_to(value: f64, decimals: i32) -> f64 {
    let factor = 10f64.powi(decimals);
    (value * factor).round() / factor
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore {
    pub repetitions: Vec<ScoreCard>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iteration_time_s: f64,
}

/// Averages per-repetition cards (already micro-pooled over articles) and pass times.
/// Metrics are rounded to three decimals, time to one.
pub fn aggregate(cards: &[ScoreCard], times: &[f64]) -> Result<AggregateScore, ScoringError> {
    if cards.is_empty() || times.is_empty() {
        return Err(ScoringError::Empty);
    }
    if cards.len() != times.len() {
        return Err(ScoringError::LengthMismatch {
            cards: cards.len(),
            times: times.len(),
        });
    }
    let n = cards.len() as f64;
    let mean = |f: fn(&ScoreCard) -> f64| round_to(cards.iter().map(f).sum::<f64>() / n, 3);
    Ok(AggregateScore {
        repetitions: cards.to_vec(),
        accuracy: mean(|c| c.accuracy),
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
        iteration_time_s: round_to(times.iter().sum::<f64>() / n, 1),
    })
}

/// `(final - initial) / initial * 100`.
pub fn percent_change(initial: f64, final_value: f64) -> Result<f64, ScoringError> {
    if initial == 0.0 {
        return Err(ScoringError::ZeroInitial);
    }
    Ok((final_value - initial) / initial * 100.0)
}

/// Share of extractions that ended with a JSON error, in percent, two decimals.
pub fn failure_percent(errors: usize, iterations: usize) -> Result<f64, ScoringError> {
    if iterations == 0 || errors > iterations {
        return Err(ScoringError::InvalidCounts { errors, iterations });
    }
    Ok(round_to(100.0 * errors as f64 / iterations as f64, 2))
}

/// Renders a failure percentage the way the structuring table prints it: `0%` for none,
/// otherwise two decimals.
pub fn format_failure_percent(value: f64) -> String {
    if value == 0.0 {
        "0%".to_string()
    } else {
        format!("{value:.2}%")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(items: &[&str]) -> Vec<String> {
        items.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn direct_formula_example() {
        let card = score(&s(&["A", "B", "C"]), &s(&["A", "B", "D"]));
        assert_eq!((card.tp, card.fp, card.fn_), (2, 1, 1));
        assert_eq!(round_to(card.precision, 3), 0.667);
        assert_eq!(round_to(card.recall, 3), 0.667);
        assert_eq!(round_to(card.f1, 3), 0.667);
        assert_eq!(round_to(card.accuracy, 3), 0.5);
    }

    #[test]
    fn identity_scores_one() {
        let card = score(&s(&["A", "B"]), &s(&["B", "A"]));
        assert_eq!(
            (card.accuracy, card.precision, card.recall, card.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn zero_denominator_conventions() {
        let empty: [&str; 0] = [];
        let card = score(&empty, &empty);
        assert_eq!(
            (card.accuracy, card.precision, card.recall),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(card.f1, 1.0);
        let card = score(&["A"], &["B"]);
        assert_eq!(
            (card.precision, card.recall, card.f1, card.accuracy),
            (0.0, 0.0, 0.0, 0.0)
        );
        let card = score(&empty, &["B"]);
        assert_eq!((card.precision, card.recall), (0.0, 1.0));
    }

    #[test]
    fn rates_reproduce_published_rows() {
        assert_eq!(round_to(f1_from(0.982, 0.951), 3), 0.966);
        assert_eq!(round_to(accuracy_from(0.982, 0.951), 3), 0.935);
        assert_eq!(round_to(f1_from(0.486, 0.845), 3), 0.617);
        assert!((accuracy_from(0.486, 0.845) - 0.447).abs() <= 0.001);
    }

    #[test]
    fn aggregation() {
        let a = ScoreCard::from_counts(2, 1, 1);
        let agg = aggregate(&[a], &[36.04]).unwrap();
        assert_eq!(agg.f1, 0.667);
        assert_eq!(agg.iteration_time_s, 36.0);
        let agg = aggregate(&[a, a], &[36.0, 36.4]).unwrap();
        assert_eq!(agg.accuracy, 0.5);
        assert_eq!(agg.iteration_time_s, 36.2);
        assert_eq!(aggregate(&[], &[]), Err(ScoringError::Empty));
        assert!(matches!(
            aggregate(&[a], &[1.0, 2.0]),
            Err(ScoringError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn percentages() {
        assert!((percent_change(36.2, 48.8).unwrap() - 34.8).abs() < 0.05);
        assert!((percent_change(0.780, 0.823).unwrap() - 5.51).abs() < 0.01);
        assert_eq!(percent_change(3.0, 3.0).unwrap(), 0.0);
        assert_eq!(percent_change(0.0, 1.0), Err(ScoringError::ZeroInitial));
    }

    #[test]
    fn failure_percentages() {
        assert_eq!(failure_percent(4, 525).unwrap(), 0.76);
        assert_eq!(failure_percent(0, 525).unwrap(), 0.0);
        assert_eq!(failure_percent(1, 4).unwrap(), 25.0);
        assert_eq!(format_failure_percent(0.76), "0.76%");
        assert_eq!(format_failure_percent(0.0), "0%");
        assert_eq!(format_failure_percent(25.0), "25.00%");
        assert!(failure_percent(1, 0).is_err());
        assert!(failure_percent(5, 4).is_err());
    }

    /// Exhaustive membership counting, independent of the set-intersection path.
    fn oracle(gold: &[String], pred: &[String]) -> (usize, usize, usize) {
        let mut g: Vec<&String> = Vec::new();
        for x in gold {
            if !g.contains(&x) {
                g.push(x);
            }
        }
        let mut p: Vec<&String> = Vec::new();
        for x in pred {
            if !p.contains(&x) {
                p.push(x);
            }
        }
        let tp = g.iter().filter(|x| p.contains(x)).count();
        let fp = p.iter().filter(|x| !g.contains(x)).count();
        let fn_ = g.iter().filter(|x| !p.contains(x)).count();
        (tp, fp, fn_)
    }

    fn all_lists(alphabet: &[&str], max_len: usize) -> Vec<Vec<String>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for list in &frontier {
                for sym in alphabet {
                    let mut l: Vec<String> = list.clone();
                    l.push(sym.to_string());
                    next.push(l);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    #[test]
    fn brute_force_equivalence_small_alphabet() {
        let lists = all_lists(&["a", "b", "c", "d", "e"], 4);
        assert_eq!(lists.len(), 1 + 5 + 25 + 125 + 625);
        // every gold list against a spread of predictions keeps runtime bounded
        for (i, gold) in lists.iter().enumerate() {
            for pred in lists.iter().skip(i % 7).step_by(7) {
                let card = score(gold, pred);
                assert_eq!((card.tp, card.fp, card.fn_), oracle(gold, pred));
            }
        }
    }

    proptest! {
        #[test]
        fn f1_jaccard_identity(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            prop_assume!(tp + fp + fn_ > 0);
            let c = ScoreCard::from_counts(tp, fp, fn_);
            let j = c.accuracy;
            prop_assert!((c.f1 - 2.0 * j / (1.0 + j)).abs() < 1e-12);
            prop_assert!(c.accuracy <= c.precision.min(c.recall) + 1e-12);
        }

        #[test]
        fn permutation_and_duplicate_invariant(
            gold in proptest::collection::vec("[a-e]", 0..6),
            pred in proptest::collection::vec("[a-e]", 0..6),
        ) {
            let base = score(&gold, &pred);
            let mut rg = gold.clone();
            rg.reverse();
            let mut dp = pred.clone();
            dp.extend(pred.iter().cloned());
            prop_assert_eq!(score(&rg, &dp), base);
        }

        #[test]
        fn aggregate_within_bounds(counts in proptest::collection::vec((0usize..20, 0usize..20, 0usize..20), 1..8)) {
            let cards: Vec<ScoreCard> = counts.iter().map(|&(a, b, c)| ScoreCard::from_counts(a, b, c)).collect();
            let times: Vec<f64> = cards.iter().enumerate().map(|(i, _)| i as f64 * 1.37).collect();
            let agg = aggregate(&cards, &times).unwrap();
            let lo = cards.iter().map(|c| c.f1).fold(f64::INFINITY, f64::min);
            let hi = cards.iter().map(|c| c.f1).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(agg.f1 >= round_to(lo, 3) && agg.f1 <= round_to(hi, 3));
        }
    }
}
