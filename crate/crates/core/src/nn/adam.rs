use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one network, with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let n = net.parameter_count();
        Self {
            config,
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    /// One Adam update of `net` with `grads`. Rejects non-finite gradients before touching state.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        if self.first.len() != net.parameter_count() || !grads.matches(net) {
            return Err(NnError::ShapeMismatch);
        }
        if grads.values().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient);
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        let mut k = 0;
        let mut update = |param: &mut f64, g: f64| {
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *param -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            k += 1;
        };
        for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
            for (w, &gw) in layer.weights.iter_mut().zip(&g.weights) {
                update(w, gw);
            }
            for (b, &gb) in layer.biases.iter_mut().zip(&g.biases) {
                update(b, gb);
            }
        }
        Ok(())
    }
}

/// Single Adam step returning the updated network and state.
pub fn adam_step(
    net: &Mlp,
    grads: &Gradients,
    state: &AdamState,
) -> Result<(Mlp, AdamState), NnError> {
    let mut net = net.clone();
    let mut state = state.clone();
    state.step(&mut net, grads)?;
    Ok((net, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};

    fn scalar_net(w: f64) -> Mlp {
        let mut l = DenseLayer::zeros(1, 1, Activation::Identity);
        l.weights[0] = w;
        Mlp::from_layers(vec![l]).unwrap()
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let net = scalar_net(0.7);
        let state = AdamState::new(&net, AdamConfig::default());
        let (after, st) = adam_step(&net, &net.zero_gradients(), &state).unwrap();
        assert_eq!(after, net);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let net = scalar_net(1.0);
        let state = AdamState::new(&net, AdamConfig::default());
        let mut g = net.zero_gradients();
        g.layers[0].weights[0] = 1.0;
        let (after, _) = adam_step(&net, &g, &state).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let expected = 1.0 - 0.003 / (1.0 + 1e-8);
        assert!((after.layers()[0].weights[0] - expected).abs() < 1e-15);
        assert!((after.layers()[0].weights[0] - 0.997).abs() < 1e-10);
    }

    #[test]
    fn deterministic_and_rejects_bad_grads() {
        let net = scalar_net(0.3);
        let state = AdamState::new(&net, AdamConfig::default());
        let mut g = net.zero_gradients();
        g.layers[0].weights[0] = -0.2;
        assert_eq!(adam_step(&net, &g, &state), adam_step(&net, &g, &state));

        g.layers[0].biases[0] = f64::NAN;
        assert_eq!(adam_step(&net, &g, &state), Err(NnError::NonFiniteGradient));

        let bigger = Mlp::from_layers(vec![DenseLayer::zeros(2, 1, Activation::Identity)]).unwrap();
        assert_eq!(
            adam_step(&net, &bigger.zero_gradients(), &state),
            Err(NnError::ShapeMismatch)
        );
    }
}
