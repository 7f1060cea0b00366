//! Regression, classification and combined losses with their gradients.

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

use super::tensor::Tensor;

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("loss inputs differ in size: {a} vs {b}")));
    }
    Ok(())
}

/// Sum of squared differences over all pixels.
pub fn loss_distance(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(pred.len(), target.len())?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum())
}

/// Per-pixel mean of squared differences and its gradient.
pub fn loss_distance_mean(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(pred.len(), target.len())?;
    let n = pred.len() as f64;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss_distance(pred, target)? / n, grad))
}

/// Mean over pixels of `-ln p(true class)` for a `(2, h, w)` probability
/// map whose channel 1 is foreground, with the gradient w.r.t. the
/// probabilities.
pub fn loss_crossentropy(probs: &Tensor, mask: &BinaryMask) -> Result<(f64, Tensor)> {
    let n = mask.data.len();
    check_len(probs.len(), 2 * n)?;
    let mut grad = probs.zeros_like();
    let mut total = 0.0;
    for (i, &fg) in mask.data.iter().enumerate() {
        let idx = if fg { n + i } else { i };
        let p = probs.data[idx];
        total -= p.max(PROB_FLOOR).ln();
        if p > PROB_FLOOR {
            grad.data[idx] = -1.0 / (p * n as f64);
        }
    }
    Ok((total / n as f64, grad))
}

/// Coefficients of the distance and pixel losses at step `tau` of `total`:
/// `(1 - tau/total, gamma * tau/total)`.
pub fn schedule(tau: usize, total: usize, gamma: f64) -> Result<(f64, f64)> {
    if total == 0 || tau > total {
        return Err(Error::domain(format!("step {tau} outside 0..={total}")));
    }
    let frac = tau as f64 / total as f64;
    Ok((1.0 - frac, gamma * frac))
}

pub fn loss_multi(ld: f64, ls: f64, tau: usize, total: usize, gamma: f64) -> Result<f64> {
    let (cd, cs) = schedule(tau, total, gamma)?;
    Ok(cd * ld + cs * ls)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_loss_examples() {
        let t = [0.1, 0.4, 1.0];
        assert_eq!(loss_distance(&t, &t).unwrap(), 0.0);
        assert_eq!(loss_distance(&[0.6, 0.4, 1.0], &t).unwrap(), 0.25);
        assert!(loss_distance(&[0.0], &t).is_err());
    }

    #[test]
    fn distance_gradient_matches_finite_differences() {
        let pred = vec![0.3, 0.9, 0.05, 0.5];
        let target = vec![0.1, 1.0, 0.0, 0.7];
        let (_, g) = loss_distance_mean(&pred, &target).unwrap();
        let h = 1e-6;
        for i in 0..pred.len() {
            let mut p = pred.clone();
            p[i] += h;
            let up = loss_distance_mean(&p, &target).unwrap().0;
            p[i] -= 2.0 * h;
            let down = loss_distance_mean(&p, &target).unwrap().0;
            assert!(((up - down) / (2.0 * h) - g[i]).abs() < 1e-9);
            assert!((g[i] - 2.0 * (pred[i] - target[i]) / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn crossentropy_examples() {
        let mask = BinaryMask::new(2, 1, vec![true, false]).unwrap();
        let perfect = Tensor::new(vec![2, 1, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(loss_crossentropy(&perfect, &mask).unwrap().0 <= 1e-10);
        let uniform = Tensor::filled(&[2, 1, 2], 0.5);
        let l = loss_crossentropy(&uniform, &mask).unwrap().0;
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn crossentropy_clamps_zero_probability() {
        let mask = BinaryMask::new(1, 1, vec![true]).unwrap();
        let wrong = Tensor::new(vec![2, 1, 1], vec![1.0, 0.0]).unwrap();
        let (l, g) = loss_crossentropy(&wrong, &mask).unwrap();
        assert!((l + PROB_FLOOR.ln()).abs() < 1e-12);
        assert!(g.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(schedule(0, 10, 2.0).unwrap(), (1.0, 0.0));
        assert_eq!(schedule(5, 10, 2.0).unwrap(), (0.5, 1.0));
        assert_eq!(schedule(10, 10, 2.0).unwrap(), (0.0, 2.0));
        assert_eq!(loss_multi(3.0, 5.0, 0, 10, 1.0).unwrap(), 3.0);
        assert_eq!(loss_multi(3.0, 5.0, 10, 10, 1.5).unwrap(), 7.5);
        assert_eq!(loss_multi(3.0, 5.0, 5, 10, 1.0).unwrap(), 4.0);
        assert!(matches!(loss_multi(1.0, 1.0, 11, 10, 1.0), Err(Error::Domain(_))));
    }
}
