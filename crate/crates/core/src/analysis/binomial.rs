use serde::{Deserialize, Serialize};

use super::special::beta_quantile;
use crate::{Error, Result};

/// Exact two-sided binomial confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialInterval {
    pub k: u64,
    pub n: u64,
    pub alpha: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Clopper-Pearson interval for `k` successes in `n` trials at level
/// `1 - alpha`.
pub fn clopper_pearson(k: u64, n: u64, alpha: f64) -> Result<BinomialInterval> {
    if n == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= k <= n and n >= 1, got k={k}, n={n}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let (kf, nf) = (k as f64, n as f64);
    let lower = if k == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, kf, nf - kf + 1.0)
    };
    let upper = if k == n {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, kf + 1.0, nf - kf)
    };
    Ok(BinomialInterval {
        k,
        n,
        alpha,
        lower,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        let all = clopper_pearson(68, 68, 0.05).unwrap();
        assert_eq!(all.upper, 1.0);
        let none = clopper_pearson(0, 68, 0.05).unwrap();
        assert_eq!(none.lower, 0.0);
        let closed_form = 1.0 - 0.025_f64.powf(1.0 / 68.0);
        assert!((none.upper - closed_form).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(clopper_pearson(3, 2, 0.05).is_err());
        assert!(clopper_pearson(0, 0, 0.05).is_err());
        assert!(clopper_pearson(1, 2, 0.0).is_err());
        assert!(clopper_pearson(1, 2, 1.0).is_err());
    }
}
