//! Small statistics helpers: mean/std aggregation across seeds and the
//! unequal-variance two-sample t-test used to compare methods.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Mean and sample standard deviation (n−1 denominator; 0 for a single
/// value).
pub fn mean_std(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::InvalidParameter("mean of an empty sample".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Welch's t-test outcome. `p_greater` is the one-sided p-value for
/// "mean(a) > mean(b)".
#[derive(Debug, Clone, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    pub p_greater: f64,
}

/// Unequal-variance (Welch) two-sample t-test on equal-length samples.
///
/// When both samples have zero variance the test degenerates: equal means
/// give p = 1, distinct means give p = 0 (the pooled df is reported but
/// carries no information in that branch).
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "sample sizes differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidParameter("need at least 2 values per sample".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite value in a t-test sample".into()));
    }
    let (ma, sa) = mean_std(a)?;
    let (mb, sb) = mean_std(b)?;
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let va = sa * sa / na;
    let vb = sb * sb / nb;
    let se2 = va + vb;
    if se2 == 0.0 {
        let equal = ma == mb;
        return Ok(WelchResult {
            t: if equal {
                0.0
            } else if ma > mb {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            },
            df: na + nb - 2.0,
            p_two_sided: if equal { 1.0 } else { 0.0 },
            p_greater: if equal {
                1.0
            } else if ma > mb {
                0.0
            } else {
                1.0
            },
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Numeric(format!("t-distribution with df {df}: {e}")))?;
    let p_two_sided = 2.0 * (1.0 - dist.cdf(t.abs()));
    let p_greater = 1.0 - dist.cdf(t);
    Ok(WelchResult { t, df, p_two_sided, p_greater })
}
