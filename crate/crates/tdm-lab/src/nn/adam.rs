//! Adam with bias correction.

use super::mlp::{MlpGrads, MlpParams};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    /// First-moment accumulators, parameter-shaped.
    pub m: MlpGrads,
    /// Second-moment accumulators, parameter-shaped; entries stay >= 0.
    pub v: MlpGrads,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        AdamState {
            m: MlpGrads::zeros_like(params),
            v: MlpGrads::zeros_like(params),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update. Rejects non-finite gradients before touching any state.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if !grads.matches_shape(params) || !state.m.matches_shape(params) {
        return Err(Error::Shape {
            what: "adam gradient/state",
            expected: params.param_count(),
            got: grads.flatten().len(),
        });
    }
    if learning_rate <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    if !grads.all_finite() {
        return Err(Error::NumericHealth(
            "non-finite gradient entry passed to adam_step".to_string(),
        ));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);

    for (k, layer) in params.layers.iter_mut().enumerate() {
        let (gm, gv, gl) = (&mut state.m.layers[k], &mut state.v.layers[k], &grads.layers[k]);
        for i in 0..layer.w.len() {
            let g = gl.dw[i];
            gm.dw[i] = b1 * gm.dw[i] + (1.0 - b1) * g;
            gv.dw[i] = b2 * gv.dw[i] + (1.0 - b2) * g * g;
            let m_hat = gm.dw[i] / bias1;
            let v_hat = gv.dw[i] / bias2;
            layer.w[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        for i in 0..layer.b.len() {
            let g = gl.db[i];
            gm.db[i] = b1 * gm.db[i] + (1.0 - b1) * g;
            gv.db[i] = b2 * gv.db[i] + (1.0 - b2) * g * g;
            let m_hat = gm.db[i] / bias1;
            let v_hat = gv.db[i] / bias2;
            layer.b[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_net(w0: f64) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = MlpParams::new(&[1, 1], Activation::Linear, &mut rng);
        p.layers[0].w[0] = w0;
        p.layers[0].b[0] = 0.0;
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = MlpParams::new(&[3, 4, 2], Activation::Linear, &mut rng);
        let before = p.flatten();
        let grads = MlpGrads::zeros_like(&p);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &grads, &mut st, 1e-3).unwrap();
        assert_eq!(p.flatten(), before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // Hand-evaluating the recurrences at t = 1: m_hat = g, v_hat = g^2,
        // so the update is lr * g / (|g| + eps) ~= lr * sign(g).
        let mut p = scalar_net(0.0);
        let mut grads = MlpGrads::zeros_like(&p);
        grads.layers[0].dw[0] = -0.37;
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &grads, &mut st, 0.01).unwrap();
        assert!((p.layers[0].w[0] - 0.01).abs() < 1e-6);
    }

    /// Independent scalar Adam, written directly from the update equations,
    /// used as the reference for the optimization-run check.
    fn reference_adam_quadratic(w0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = 2.0 * (w - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        w
    }

    #[test]
    fn converges_on_quadratic_and_matches_reference() {
        // Minimize f(w) = (w - 3)^2 from w = 0 at lr = 0.1 for 100 steps.
        let mut p = scalar_net(0.0);
        let mut st = AdamState::new(&p);
        let mut grads = MlpGrads::zeros_like(&p);
        for _ in 0..100 {
            let w = p.layers[0].w[0];
            grads.layers[0].dw[0] = 2.0 * (w - 3.0);
            grads.layers[0].db[0] = 0.0;
            adam_step(&mut p, &grads, &mut st, 0.1).unwrap();
        }
        let w = p.layers[0].w[0];
        let reference = reference_adam_quadratic(0.0, 0.1, 100);
        assert!((w - reference).abs() < 1e-12, "{w} vs reference {reference}");
        assert!((w - 3.0).abs() < 0.05, "did not converge: w = {w}");
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut p = scalar_net(0.0);
        let mut st = AdamState::new(&p);
        let mut grads = MlpGrads::zeros_like(&p);
        grads.layers[0].dw[0] = f64::NAN;
        let before = p.flatten();
        match adam_step(&mut p, &grads, &mut st, 0.1) {
            Err(Error::NumericHealth(_)) => {}
            other => panic!("expected numeric-health error, got {other:?}"),
        }
        assert_eq!(p.flatten(), before);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn second_moments_stay_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = MlpParams::new(&[2, 3, 1], Activation::Linear, &mut rng);
        let mut st = AdamState::new(&p);
        let mut grads = MlpGrads::zeros_like(&p);
        for k in 0..50 {
            for l in &mut grads.layers {
                for (i, v) in l.dw.iter_mut().enumerate() {
                    *v = ((k * 31 + i) as f64 * 0.7).sin();
                }
            }
            adam_step(&mut p, &grads, &mut st, 1e-3).unwrap();
        }
        assert!(st.v.flatten().iter().all(|x| *x >= 0.0));
    }
}
