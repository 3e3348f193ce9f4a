use super::mlp::{Gradients, MlpParams};
use super::NumKitError;

/// Adam moment estimates plus hyper-parameters for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moments: Gradients,
    second_moments: Gradients,
    step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Moments start at zero.
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        Self {
            first_moments: Gradients::zeros_like(params),
            second_moments: Gradients::zeros_like(params),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One Adam update with bias correction (Kingma & Ba, Algorithm 1):
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<(), NumKitError> {
    if !grads.matches(params) || !state.first_moments.matches(params) {
        return Err(NumKitError::Dimension(
            "adam_step shapes do not match".into(),
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;

    let mut flat_m: Vec<&mut f64> = Vec::new();
    let mut flat_v: Vec<&mut f64> = Vec::new();
    for w in &mut state.first_moments.weights {
        flat_m.extend(w.data_mut().iter_mut());
    }
    for b in &mut state.first_moments.biases {
        flat_m.extend(b.iter_mut());
    }
    for w in &mut state.second_moments.weights {
        flat_v.extend(w.data_mut().iter_mut());
    }
    for b in &mut state.second_moments.biases {
        flat_v.extend(b.iter_mut());
    }
    let mut flat_g: Vec<f64> = Vec::with_capacity(flat_m.len());
    grads.for_each(|g| flat_g.push(g));

    let mut nonfinite = false;
    let mut i = 0;
    params.for_each_param_mut(|p| {
        let g = flat_g[i];
        let m = &mut *flat_m[i];
        let v = &mut *flat_v[i];
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
        if !p.is_finite() {
            nonfinite = true;
        }
        i += 1;
    });
    if nonfinite {
        return Err(NumKitError::NonFinite("adam_step parameters"));
    }
    Ok(())
}
