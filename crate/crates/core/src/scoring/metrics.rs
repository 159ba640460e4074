use crate::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::invalid(format!("score {s} is not comparable")));
    }
    Ok(())
}

/// Indices sorted by ascending score.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("auroc needs both positive and negative samples"));
    }
    let idx = ascending(scores);
    // Sum of (twice the) midranks of positives, kept integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let pos_in_group = idx[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        // Ranks i+1..=j; midrank * 2 = i + 1 + j.
        rank_sum2 += pos_in_group * (i as u128 + 1 + j as u128);
        i = j;
    }
    let np = n_pos as u128;
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Mean over positives of the precision at their rank, descending by score.
/// A tied group is handled as one block: every positive in it receives the
/// precision at the block's end.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::invalid("average precision needs at least one positive"));
    }
    let mut idx = ascending(scores);
    idx.reverse();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut acc = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let p = idx[i..j].iter().filter(|&&k| labels[k]).count();
        tp += p;
        seen += j - i;
        acc += p as f64 * tp as f64 / seen as f64;
        i = j;
    }
    Ok(acc / n_pos as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        let l = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &l).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.3, 0.4], &l).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &l).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.3, 0.2], &[true, true]).unwrap(), 1.0);
        let last = average_precision(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap();
        assert_eq!(last, 0.25);
        assert!(average_precision(&[0.3], &[false]).is_err());
    }

    #[test]
    fn auroc_complement_and_monotone_invariance() {
        let s = [0.3, 0.9, 0.1, 0.45, 0.7, 0.2];
        let l = [true, true, false, false, true, false];
        let a = auroc(&s, &l).unwrap();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        assert_eq!(a + auroc(&neg, &l).unwrap(), 1.0);
        let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let aff: Vec<f64> = s.iter().map(|v| 3.0 * v - 7.0).collect();
        assert_eq!(auroc(&e, &l).unwrap(), a);
        assert_eq!(auroc(&aff, &l).unwrap(), a);
    }
}
