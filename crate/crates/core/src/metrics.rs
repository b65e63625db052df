//! Average precision, accuracy and cross-modal alignment.
//!
//! Average precision treats tied scores as one block: walking the distinct
//! scores from high to low, each block adds `(positives in block / P)` times
//! the precision over everything ranked at or above that block. Constant
//! scores therefore give the class prevalence.

use crate::tensor::{cosine, Tensor};

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exact non-negative fraction, `None` on overflow.
#[derive(Clone, Copy)]
struct Frac(u128, u128);

impl Frac {
    fn add(self, o: Frac) -> Option<Frac> {
        let g = gcd(self.1, o.1);
        let den = (self.1 / g).checked_mul(o.1)?;
        let num = self
            .0
            .checked_mul(o.1 / g)?
            .checked_add(o.0.checked_mul(self.1 / g)?)?;
        let r = gcd(num, den).max(1);
        Some(Frac(num / r, den / r))
    }
}

/// Average precision of one class, `None` without positives.
///
/// The block sum is accumulated as an exact fraction and rounded once, so the
/// result is the correctly rounded value whenever the fraction fits in 128 bits.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut exact = Some(Frac(0, 1));
    let mut approx = 0.0;
    let (mut seen, mut hits) = (0usize, 0usize);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let block_hits = order[start..end].iter().filter(|&&i| labels[i]).count();
        seen += end - start;
        hits += block_hits;
        if block_hits > 0 {
            // block_hits/P · hits/seen
            let term = Frac((block_hits * hits) as u128, seen as u128);
            exact = exact.and_then(|e| e.add(term));
            approx += (block_hits * hits) as f64 / seen as f64;
        }
        start = end;
    }
    let exact = exact.and_then(|Frac(num, den)| {
        let den = den.checked_mul(positives as u128)?;
        let g = gcd(num, den).max(1);
        Some((num / g) as f64 / (den / g) as f64)
    });
    Some(exact.unwrap_or(approx / positives as f64))
}

/// Mean over classes (columns) of [`average_precision`], skipping classes
/// without positives. Zero if no class has a positive.
pub fn mean_average_precision(scores: &Tensor, targets: &Tensor) -> f64 {
    let (r, c) = (scores.rows(), scores.cols());
    assert_eq!((targets.rows(), targets.cols()), (r, c), "scores and targets must align");
    let aps: Vec<f64> = (0..c)
        .filter_map(|k| {
            let s: Vec<f64> = (0..r).map(|i| scores.get(i, k)).collect();
            let y: Vec<bool> = (0..r).map(|i| targets.get(i, k) == 1.0).collect();
            average_precision(&s, &y)
        })
        .collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Share of rows whose argmax equals the target.
pub fn accuracy(probs: &Tensor, targets: &[usize]) -> f64 {
    assert_eq!(probs.rows(), targets.len(), "one target per row");
    if targets.is_empty() {
        return 0.0;
    }
    let hits = targets
        .iter()
        .enumerate()
        .filter(|(r, t)| argmax(probs.row_slice(*r)) == **t)
        .count();
    hits as f64 / targets.len() as f64
}

/// Mean cosine between row `b` of `vis` and row `b` of `key`; zero-norm pairs count as 0.
pub fn alignment(vis: &Tensor, key: &Tensor) -> f64 {
    assert_eq!(vis.shape(), key.shape(), "paired rows");
    let r = vis.rows();
    if r == 0 {
        return 0.0;
    }
    (0..r)
        .map(|i| cosine(vis.row_slice(i), key.row_slice(i)).unwrap_or(0.0))
        .sum::<f64>()
        / r as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant_scores() {
        let y = [true, false, true, false, false];
        let s = [0.9, 0.1, 0.8, 0.3, 0.2];
        assert_eq!(average_precision(&s, &y), Some(1.0));
        assert_eq!(average_precision(&[0.5; 5], &y), Some(0.4));
        assert_eq!(average_precision(&s, &[false; 5]), None);
    }

    #[test]
    fn hand_ranking() {
        // ranks: + - + -  → (1/1 + 2/3) / 2
        let ap = average_precision(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]).unwrap();
        assert_eq!(ap, 5.0 / 6.0);
        // tie block {+,-} first then +: (1·1/2 + 1·2/3) / 2
        let ap = average_precision(&[2.0, 2.0, 1.0], &[true, false, true]).unwrap();
        assert_eq!(ap, 7.0 / 12.0);
    }

    #[test]
    fn long_rankings_stay_in_range() {
        let n = 400;
        let scores: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64).collect();
        let labels: Vec<bool> = (0..n).map(|i| (i * 31) % 3 == 0).collect();
        let ap = average_precision(&scores, &labels).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let (mut hits, mut sum) = (0.0, 0.0);
        for (rank, &i) in order.iter().enumerate() {
            if labels[i] {
                hits += 1.0;
                sum += hits / (rank + 1) as f64;
            }
        }
        assert!((ap - sum / hits).abs() < 1e-12 && ap <= 1.0);
    }

    #[test]
    fn map_skips_empty_classes() {
        let s = Tensor::from_rows(&[&[0.9, 0.1, 0.5], &[0.1, 0.2, 0.5]]);
        let y = Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert_eq!(mean_average_precision(&s, &y), 1.0);
        assert_eq!(mean_average_precision(&s, &Tensor::zeros(&[2, 3]).unwrap()), 0.0);
        assert_eq!(mean_average_precision(&y, &y), 1.0);
    }

    #[test]
    fn accuracy_and_alignment() {
        let p = Tensor::from_rows(&[&[0.2, 0.8], &[0.5, 0.5], &[0.9, 0.1]]);
        assert_eq!(accuracy(&p, &[1, 0, 1]), 2.0 / 3.0);
        let a = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let b = Tensor::from_rows(&[&[2.0, 0.0], &[1.0, 1.0]]);
        assert_eq!(alignment(&a, &b), 0.5);
    }
}
