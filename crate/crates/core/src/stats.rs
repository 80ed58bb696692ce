//! Small statistics helpers shared by training and evaluation.

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "pearson inputs differ in length");
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Mean over neurons of the Pearson correlation between predicted and
/// target responses (row-major `[images, neurons]`). Neurons whose
/// prediction or target is constant count as zero correlation.
pub fn mean_neuron_correlation(pred: &[f32], target: &[f32], neurons: usize) -> f64 {
    assert_eq!(pred.len(), target.len(), "response matrices differ in size");
    if neurons == 0 || pred.is_empty() {
        return 0.0;
    }
    let images = pred.len() / neurons;
    let total: f64 = (0..neurons)
        .map(|n| {
            let a: Vec<f64> = (0..images).map(|i| pred[i * neurons + n] as f64).collect();
            let b: Vec<f64> = (0..images).map(|i| target[i * neurons + n] as f64).collect();
            pearson(&a, &b).unwrap_or(0.0)
        })
        .sum();
    total / neurons as f64
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_correlation_is_one() {
        let a = [0.3, 1.2, -0.7, 2.5, 0.0];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -2.0 * v + 1.0).collect();
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &[1.0; 5]), None);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert_eq!(percentile(&v, 50.0), 2.5);
    }
}
