use crate::error::{Error, Result};
use crate::scorer::{Gradients, ScorerParameters};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ScorerParameters) -> Self {
        let zeros: Vec<Vec<f64>> = params.entries().iter().map(|e| vec![0.0; e.tensor.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam step. Parameters are left untouched when any
/// gradient entry is non-finite.
pub fn adam_update(
    params: &mut ScorerParameters,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.entries.len() != params.entries().len() || state.m.len() != grads.entries.len() {
        return Err(Error::Shape(
            "gradient / optimizer state does not match parameters".into(),
        ));
    }
    for (p, g) in params.entries().iter().zip(&grads.entries) {
        if p.tensor.shape != g.tensor.shape {
            return Err(Error::Shape(format!("gradient for {} has the wrong shape", p.name)));
        }
        if let Some(i) = g.tensor.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: g.name.clone(),
                index: i,
                value: g.tensor.data[i],
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.entries_mut().iter_mut().zip(&grads.entries).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, (w, &gi)) in p.tensor.data.iter_mut().zip(&g.tensor.data).enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
