//! Small descriptive statistics used by the experiment reports.

use statrs::distribution::{ContinuousCDF, Normal};

/// Linear-interpolation quantile (type 7) of unsorted data. NaNs are ignored.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = data.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(data: &[f64]) -> f64 {
    quantile(data, 0.5)
}

pub fn iqr(data: &[f64]) -> f64 {
    quantile(data, 0.75) - quantile(data, 0.25)
}

pub fn mean(data: &[f64]) -> f64 {
    data.iter().sum::<f64>() / data.len() as f64
}

/// Unbiased sample variance.
pub fn variance(data: &[f64]) -> f64 {
    let m = mean(data);
    data.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (data.len() as f64 - 1.0)
}

/// Two-sided p-value of Welch's test for equal means, using the normal
/// approximation to the t distribution (adequate for samples in the hundreds).
pub fn welch_p_value(a: &[f64], b: &[f64]) -> f64 {
    let se = (variance(a) / a.len() as f64 + variance(b) / b.len() as f64).sqrt();
    if se == 0.0 {
        return if mean(a) == mean(b) { 1.0 } else { 0.0 };
    }
    let z = (mean(a) - mean(b)) / se;
    let normal = Normal::standard();
    2.0 * (1.0 - normal.cdf(z.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_of_small_sample() {
        let d = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(median(&d), 3.0);
        assert_eq!(quantile(&d, 0.0), 1.0);
        assert_eq!(quantile(&d, 1.0), 5.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
        assert_eq!(iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]), 2.0);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn welch_detects_shift() {
        let a: Vec<f64> = (0..200).map(|i| (i % 10) as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 5.0).collect();
        assert!(welch_p_value(&a, &b) < 1e-6);
        assert!(welch_p_value(&a, &a) > 0.99);
    }
}
