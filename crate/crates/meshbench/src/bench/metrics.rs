//! Estimator-fidelity metrics over per-method mean errors.

use crate::error::{Error, Result};

/// Fraction of unordered method pairs whose estimated ordering contradicts
/// the true ordering. An estimated tie counts as a disagreement when the
/// true ordering is strict; a true tie never disagrees.
pub fn rate_of_inconsistency(true_means: &[f64], est_means: &[f64]) -> Result<f64> {
    if true_means.len() != est_means.len() {
        return Err(Error::LengthMismatch(format!(
            "{} true vs {} estimated means",
            true_means.len(),
            est_means.len()
        )));
    }
    let n = true_means.len();
    if n < 2 {
        return Err(Error::Config("need at least 2 methods".into()));
    }
    // f64::signum(0.0) is 1.0, so compare explicitly to get a true zero sign
    let sign = |d: f64| -> i8 {
        if d > 0.0 {
            1
        } else if d < 0.0 {
            -1
        } else {
            0
        }
    };
    let mut pairs = 0usize;
    let mut bad = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1;
            let t = sign(true_means[i] - true_means[j]);
            let e = sign(est_means[i] - est_means[j]);
            if t != 0 && e != t {
                bad += 1;
            }
        }
    }
    Ok(bad as f64 / pairs as f64)
}

/// Pearson correlation between true and estimated per-method means. With
/// `top_k`, only the k methods with the smallest TRUE error enter.
pub fn pearson(true_means: &[f64], est_means: &[f64], top_k: Option<usize>) -> Result<f64> {
    if true_means.len() != est_means.len() {
        return Err(Error::LengthMismatch(format!(
            "{} true vs {} estimated means",
            true_means.len(),
            est_means.len()
        )));
    }
    let (t, e): (Vec<f64>, Vec<f64>) = match top_k {
        Some(k) => {
            if k < 2 {
                return Err(Error::Config("top_k must be >= 2".into()));
            }
            let mut order: Vec<usize> = (0..true_means.len()).collect();
            order.sort_by(|&a, &b| {
                true_means[a]
                    .total_cmp(&true_means[b])
                    .then(a.cmp(&b))
            });
            order
                .into_iter()
                .take(k)
                .map(|i| (true_means[i], est_means[i]))
                .unzip()
        }
        None => (true_means.to_vec(), est_means.to_vec()),
    };
    if t.len() < 2 {
        return Err(Error::Config("need at least 2 methods".into()));
    }
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let me = e.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vt = 0.0;
    let mut ve = 0.0;
    for (a, b) in t.iter().zip(&e) {
        cov += (a - mt) * (b - me);
        vt += (a - mt).powi(2);
        ve += (b - me).powi(2);
    }
    if vt == 0.0 || ve == 0.0 {
        return Err(Error::Numerical(
            "zero variance: correlation undefined".into(),
        ));
    }
    Ok((cov / (vt * ve).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roi_identical_is_zero() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(rate_of_inconsistency(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn roi_reversed_is_one() {
        let t = [1.0, 2.0, 3.0];
        let e = [3.0, 2.0, 1.0];
        assert_eq!(rate_of_inconsistency(&t, &e).unwrap(), 1.0);
    }

    #[test]
    fn roi_one_swapped_pair_of_three() {
        // pairs: (1,2) swapped, (1,3) ok, (2,3) ok → 1/3
        let t = [1.0, 2.0, 3.0];
        let e = [2.0, 1.0, 3.0];
        let r = rate_of_inconsistency(&t, &e).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn roi_estimated_tie_against_strict_truth_disagrees() {
        let t = [1.0, 2.0];
        let e = [5.0, 5.0];
        assert_eq!(rate_of_inconsistency(&t, &e).unwrap(), 1.0);
        // true tie: anything agrees
        let t2 = [2.0, 2.0];
        assert_eq!(rate_of_inconsistency(&t2, &[1.0, 9.0]).unwrap(), 0.0);
    }

    #[test]
    fn roi_errors() {
        assert!(rate_of_inconsistency(&[1.0], &[1.0]).is_err());
        assert!(rate_of_inconsistency(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn pearson_affine_invariance() {
        let t = [1.0, 2.0, 3.0, 5.0];
        let e: Vec<f64> = t.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&t, &e, None).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = t.iter().map(|x| -x).collect();
        assert!((pearson(&t, &neg, None).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_hand_four_point_case() {
        // t = [1,2,3,4], e = [2,1,4,3]: means 2.5, cov terms:
        // (-1.5)(-0.5)+(-0.5)(-1.5)+(0.5)(1.5)+(1.5)(0.5) = 3.0
        // var each = 5.0 → r = 3/5 = 0.6
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0], None).unwrap();
        assert!((r - 0.6).abs() < 1e-12, "r = {r}");
    }

    #[test]
    fn pearson_top_k_selects_smallest_true() {
        // methods 0..4 with true [5,1,4,2,3]; top-3 by true error = indices 1,3,4
        let t = [5.0, 1.0, 4.0, 2.0, 3.0];
        // estimated: perfect on top-3, scrambled elsewhere
        let e = [0.0, 10.0, 0.0, 20.0, 30.0];
        let r = pearson(&t, &e, Some(3)).unwrap();
        assert!((r - 1.0).abs() < 1e-12, "r = {r}");
    }

    #[test]
    fn pearson_zero_variance_errors() {
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0], None).is_err());
        assert!(pearson(&[1.0, 2.0], &[3.0, 3.0], None).is_err());
    }
}
