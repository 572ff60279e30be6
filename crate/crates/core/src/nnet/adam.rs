use super::Parameterized;

/// First and second moment estimates, one buffer per parameter slice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

/// One bias-corrected Adam update over parallel lists of parameter and
/// gradient slices.
pub fn adam_step(
    params: Vec<&mut [f64]>,
    grads: Vec<&[f64]>,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .into_iter()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState::default(),
        }
    }

    pub fn step<P: Parameterized>(&mut self, model: &mut P, grads: &P) {
        adam_step(
            model.params_mut(),
            grads.params(),
            &mut self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        );
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<P: Parameterized + ?Sized>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads
        .params()
        .iter()
        .flat_map(|s| s.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for s in grads.params_mut() {
            s.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let g = vec![0.0; 3];
        let mut st = AdamState::default();
        for _ in 0..3 {
            adam_step(vec![&mut p], vec![&g], &mut st, 0.1, 0.9, 0.999, 1e-8);
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let lr = 1e-3;
        let g = vec![0.5, -3.0, 1e-2, -7e-3];
        let mut p = vec![0.0; 4];
        let mut st = AdamState::default();
        adam_step(vec![&mut p], vec![&g], &mut st, lr, 0.9, 0.999, 1e-8);
        for (pi, gi) in p.iter().zip(&g) {
            assert!((pi + lr * gi.signum()).abs() < 1e-6, "{pi} for grad {gi}");
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![0.1, 0.2];
            let mut st = AdamState::default();
            for k in 0..10 {
                let g = vec![(k as f64).sin(), (k as f64).cos()];
                adam_step(vec![&mut p], vec![&g], &mut st, 0.01, 0.9, 0.999, 1e-8);
            }
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
