//! Goodness-of-fit support: one-sample Kolmogorov-Smirnov test against the
//! Exp(1) distribution of transformed inter-event gaps.

/// Outcome of [`ks_exp1`].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Kolmogorov distribution survival function
/// `Q(x) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0; // the series converges too slowly; Q is 1 to >10 digits
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64 * x).powi(2)).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `gaps` against Exp(1), with the usual
/// finite-sample correction `(sqrt(n) + 0.12 + 0.11/sqrt(n)) * D` in the
/// asymptotic survival function.
pub fn ks_exp1(gaps: &[f64]) -> KsResult {
    let n = gaps.len();
    if n == 0 {
        return KsResult {
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
        };
    }
    let mut sorted: Vec<f64> = gaps.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = -f64::exp_m1(-x); // 1 - exp(-x)
        let upper = (i as f64 + 1.0) / nf - cdf;
        let lower = cdf - i as f64 / nf;
        d = d.max(upper).max(lower);
    }
    let scaled = (nf.sqrt() + 0.12 + 0.11 / nf.sqrt()) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf(scaled),
        n,
    }
}
