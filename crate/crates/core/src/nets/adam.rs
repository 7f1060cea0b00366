use crate::error::{Error, Result};

use super::tensor::Tensor;

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let params: Vec<&mut Tensor> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape != g.shape || p.shape != m.shape {
            return Err(Error::shape(format!("adam: shape {:?} vs {:?}", p.shape, g.shape)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in params.into_iter().enumerate() {
        let (m, v, g) = (&mut state.m[i].data, &mut state.v[i].data, &grads[i].data);
        for j in 0..p.data.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            p.data[j] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::filled(&[3], 0.5)];
        let mut st = AdamState::new(&p);
        adam_step(p.iter_mut(), &[Tensor::zeros(&[3])], &mut st, 0.1).unwrap();
        assert_eq!(p[0].data, vec![0.5; 3]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&p);
        let g = Tensor::new(vec![2], vec![3.0, -0.02]).unwrap();
        adam_step(p.iter_mut(), &[g], &mut st, 0.01).unwrap();
        assert!((p[0].data[0] + 0.01).abs() < 1e-8);
        assert!((p[0].data[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&p);
        let r = adam_step(p.iter_mut(), &[Tensor::zeros(&[3])], &mut st, 0.1);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn minimizes_quadratic() {
        // Independent scalar recurrence for f(x) = x^2.
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=200 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        let mut p = vec![Tensor::filled(&[1], 1.0)];
        let mut st = AdamState::new(&p);
        for _ in 0..200 {
            let g = Tensor::filled(&[1], 2.0 * p[0].data[0]);
            adam_step(p.iter_mut(), &[g], &mut st, 0.1).unwrap();
        }
        assert!(p[0].data[0].abs() < 1e-2);
        assert!((p[0].data[0] - x).abs() < 1e-12);
    }
}
