//! Within-subject rank normalization.

use std::cmp::Ordering;

/// Median of the present values, `None` when all are missing.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Ranks 1..n with ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Replace missing entries of one feature column by the median of the present ones.
/// A column with nothing present becomes all zeros (one shared rank).
pub fn impute_column(column: &[Option<f64>]) -> Vec<f64> {
    let m = median(column.iter().flatten().copied()).unwrap_or(0.0);
    column.iter().map(|v| v.unwrap_or(m)).collect()
}

/// Rank-normalize one subject's observations feature by feature.
pub fn rank_rows(rows: &[&[Option<f64>]]) -> Vec<Vec<f64>> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut out = vec![vec![0.0; d]; rows.len()];
    for j in 0..d {
        let column: Vec<Option<f64>> = rows.iter().map(|r| r[j]).collect();
        for (i, r) in ranks(&impute_column(&column)).into_iter().enumerate() {
            out[i][j] = r;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(ranks(&[3.2, 1.1, 2.7]), vec![3.0, 1.0, 2.0]);
        assert_eq!(ranks(&[5.0, 5.0, 1.0]), vec![2.5, 2.5, 1.0]);
        assert_eq!(ranks(&[7.0, 7.0, 7.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn imputation_uses_subject_median() {
        let a = [Some(1.0), None];
        let b = [Some(4.0), Some(2.0)];
        let c = [Some(9.0), Some(3.0)];
        let r = rank_rows(&[&a, &b, &c]);
        // feature 0: 1, 4, 9 ; feature 1: median(2, 3) = 2.5 imputed → 2.5, 2, 3
        assert_eq!(r, vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 3.0]]);
    }

    #[test]
    fn medians() {
        assert_eq!(median([3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median([4.0, 1.0]), Some(2.5));
        assert_eq!(median(std::iter::empty()), None);
    }
}
