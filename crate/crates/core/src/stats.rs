//! Sample mean and Student-t confidence intervals across seeds.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean of a sample with its two-sided confidence interval. With a single
/// observation the interval is undefined and both bounds are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary<T> {
    pub mean: T,
    pub ci_low: Option<T>,
    pub ci_high: Option<T>,
    pub n: usize,
}

impl<T: Float> Summary<T> {
    pub fn half_width(&self) -> Option<T> {
        Some((self.ci_high? - self.ci_low?) / (T::one() + T::one()))
    }
}

pub fn mean<T: Float>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let sum = xs.iter().fold(T::zero(), |a, &x| a + x);
    Some(sum / T::from(xs.len())?)
}

/// Unbiased sample variance (n − 1 denominator).
pub fn sample_variance<T: Float>(xs: &[T]) -> Option<T> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss = xs.iter().fold(T::zero(), |a, &x| a + (x - m) * (x - m));
    Some(ss / T::from(xs.len() - 1)?)
}

/// Two-sided quantile of Student's t with `df` degrees of freedom.
pub fn t_quantile(level: f64, df: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    dist.inverse_cdf(0.5 + level / 2.0)
}

/// Mean and `level` confidence interval using t with n − 1 degrees of
/// freedom. Returns `None` for an empty sample.
pub fn summarize<T: Float>(xs: &[T], level: f64) -> Option<Summary<T>> {
    let m = mean(xs)?;
    let n = xs.len();
    if n < 2 {
        return Some(Summary { mean: m, ci_low: None, ci_high: None, n });
    }
    let sd = sample_variance(xs)?.sqrt();
    let t = T::from(t_quantile(level, n - 1))?;
    let half = t * sd / T::from(n)?.sqrt();
    Some(Summary { mean: m, ci_low: Some(m - half), ci_high: Some(m + half), n })
}
