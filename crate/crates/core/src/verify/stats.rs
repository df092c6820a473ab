use statrs::distribution::{ContinuousCDF, StudentsT};

/// One-sided one-sample t-test of H1: mean(samples) > threshold.
///
/// With zero sample variance the statistic is undefined; the p-value is then
/// 0 when the mean exceeds the threshold and 1 otherwise.
pub fn one_sided_t_test(samples: &[f64], threshold: f64) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return if mean > threshold { 0.0 } else { 1.0 };
    }
    let t = (mean - threshold) / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("at least two samples");
    dist.sf(t)
}
