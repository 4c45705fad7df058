use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Area under the ROC curve in Mann–Whitney form,
/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`, using average ranks for ties.
pub fn auc<T: Scalar>(labels: &[u8], scores: &[T]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Dimension(format!("{} labels, {} scores", labels.len(), scores.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("AUC scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!("AUC needs both classes ({pos} positive, {neg} negative)")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite"));

    // sum of (1-based, tie-averaged) ranks of the positives, doubled to stay integral
    let mut rank_sum2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let doubled_rank = (start + 1 + end) as u128;
        let positives = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        rank_sum2 += doubled_rank * positives;
        start = end;
    }
    let (p, n) = (pos as u128, neg as u128);
    // U = R⁺ − p(p+1)/2, AUC = U / (p·n)
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumerated() {
        assert_eq!(auc(&[1, 0, 1, 0], &[0.9, 0.8, 0.3, 0.1]).unwrap(), 0.75);
    }

    #[test]
    fn separated_and_tied() {
        assert_eq!(auc(&[0, 0, 1, 1, 1], &[0.1, 0.2, 0.3, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auc(&[1, 1, 0, 0, 0], &[0.1, 0.2, 0.3, 0.8, 0.9]).unwrap(), 0.0);
        assert_eq!(auc(&[1, 0, 0, 1], &[0.5f32; 4]).unwrap(), 0.5);
    }

    #[test]
    fn partial_ties() {
        // pairs (+,−): (2,1)>, (2,2)=, (3,1)>, (3,2)> → (3 + ½)/4
        assert_eq!(auc(&[0, 0, 1, 1], &[1.0, 2.0, 2.0, 3.0]).unwrap(), 0.875);
    }

    #[test]
    fn errors() {
        assert!(matches!(auc(&[1, 1], &[0.1, 0.2]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auc(&[1, 0], &[0.1]), Err(Error::Dimension(_))));
        assert!(matches!(auc(&[1, 0], &[0.1, f64::NAN]), Err(Error::NonFinite(_))));
    }
}
