//! AdamW with decoupled weight decay, over a flat list of parameter slices.

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, one pair per parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            t: 0,
            m: shapes.iter().map(|&s| vec![0.0; s]).collect(),
            v: shapes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }
}

/// One AdamW update:
///
/// ```text
/// t += 1
/// m = b1*m + (1-b1)*g        v = b2*v + (1-b2)*g^2
/// m_hat = m / (1 - b1^t)     v_hat = v / (1 - b2^t)
/// p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// ```
///
/// The decay term uses the pre-update parameter value and never enters the
/// moments.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Shape(format!(
            "optimizer saw {} parameter slices, {} gradient slices, {} state slices",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (k, param) in params.iter_mut().enumerate() {
        if param.len() != grads[k].len() || param.len() != state.m[k].len() {
            return Err(TrainError::Shape(format!(
                "optimizer slice {k} length mismatch: param {}, grad {}, state {}",
                param.len(),
                grads[k].len(),
                state.m[k].len()
            )));
        }
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        let g = grads[k];
        for i in 0..param.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= lr * (m_hat / (v_hat.sqrt() + hyper.epsilon) + hyper.weight_decay * param[i]);
        }
    }
    Ok(())
}
