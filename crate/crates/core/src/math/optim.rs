use super::{MathError, RealArray};

/// A network's trainable arrays, visited in a fixed order.
///
/// Gradient containers implement the same trait with the same block order so
/// optimizers and target updates can zip them.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<(String, &RealArray)>;
    fn blocks_mut(&mut self) -> Vec<&mut RealArray>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            cfg,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
///
/// A gradient that is zero everywhere leaves both the parameter and the
/// state untouched: the block is treated as disconnected from the loss.
pub fn adam_step(
    param: &mut RealArray,
    grad: &RealArray,
    state: &mut AdamState,
    lr: f64,
    block: &str,
) -> Result<(), MathError> {
    if param.shape() != grad.shape() || state.m.len() != param.len() {
        return Err(MathError::Shape(format!(
            "adam block {block}: param {:?}, grad {:?}, state {}",
            param.shape(),
            grad.shape(),
            state.m.len()
        )));
    }
    if !grad.all_finite() {
        return Err(MathError::NonFinite {
            block: block.to_string(),
        });
    }
    if grad.data().iter().all(|g| *g == 0.0) {
        return Ok(());
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.cfg;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every block of a [`ParamBlocks`] value.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<P: ParamBlocks + ?Sized>(params: &P, lr: f64) -> Self {
        Self::with_config(params, lr, AdamConfig::default())
    }

    pub fn with_config<P: ParamBlocks + ?Sized>(params: &P, lr: f64, cfg: AdamConfig) -> Self {
        let states = params
            .blocks()
            .iter()
            .map(|(_, b)| AdamState::new(b.len(), cfg))
            .collect();
        Self { lr, states }
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    pub fn step<P: ParamBlocks + ?Sized, G: ParamBlocks + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
    ) -> Result<(), MathError> {
        let g = grads.blocks();
        let mut p = params.blocks_mut();
        if g.len() != p.len() || g.len() != self.states.len() {
            return Err(MathError::Shape(format!(
                "adam: {} param blocks, {} grad blocks, {} states",
                p.len(),
                g.len(),
                self.states.len()
            )));
        }
        // Validate everything first so a bad block leaves all parameters untouched.
        for (name, gb) in &g {
            if !gb.all_finite() {
                return Err(MathError::NonFinite {
                    block: name.clone(),
                });
            }
        }
        for ((param, (name, grad)), state) in p.iter_mut().zip(g.iter()).zip(self.states.iter_mut()) {
            adam_step(param, grad, state, self.lr, name)?;
        }
        Ok(())
    }
}

/// `target ← τ·source + (1−τ)·target` for every coordinate.
pub fn soft_update<P: ParamBlocks>(target: &mut P, source: &P, tau: f64) {
    let src = source.blocks();
    for (t, (_, s)) in target.blocks_mut().into_iter().zip(src) {
        for (x, y) in t.data_mut().iter_mut().zip(s.data()) {
            *x = tau * y + (1.0 - tau) * *x;
        }
    }
}

/// Global L2 norm over all blocks.
pub fn global_norm<G: ParamBlocks>(grads: &G) -> f64 {
    grads
        .blocks()
        .iter()
        .map(|(_, b)| b.sum_squares())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<G: ParamBlocks>(grads: &mut G, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let f = max_norm / norm;
        for b in grads.blocks_mut() {
            b.scale(f);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_grad_fresh_state_is_identity() {
        let mut p = RealArray::vector(vec![0.3, -1.2]);
        let g = RealArray::zeros(&[2]);
        let mut s = AdamState::new(2, AdamConfig::default());
        adam_step(&mut p, &g, &mut s, 1e-3, "p").unwrap();
        assert_eq!(p.data(), &[0.3, -1.2]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = RealArray::vector(vec![0.0]);
        let g = RealArray::vector(vec![1.0]);
        let mut s = AdamState::new(1, AdamConfig::default());
        adam_step(&mut p, &g, &mut s, 1e-3, "p").unwrap();
        assert!((p.data()[0] + 1e-3).abs() < 1e-9);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = RealArray::vector(vec![0.5, 0.25]);
            let g = RealArray::vector(vec![0.1, -3.0]);
            let mut s = AdamState::new(2, AdamConfig::default());
            for _ in 0..3 {
                adam_step(&mut p, &g, &mut s, 1e-2, "p").unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_grad_names_block() {
        let mut p = RealArray::vector(vec![0.0]);
        let g = RealArray::from_vec(&[1], vec![1.0]).unwrap();
        let mut bad = g.clone();
        bad.data_mut()[0] = f64::INFINITY;
        let mut s = AdamState::new(1, AdamConfig::default());
        match adam_step(&mut p, &bad, &mut s, 1e-3, "critic.0.weight") {
            Err(MathError::NonFinite { block }) => assert_eq!(block, "critic.0.weight"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.data()[0], 0.0);
    }

    proptest! {
        #[test]
        fn zero_grad_identity_for_any_state(
            m in prop::collection::vec(-1.0f64..1.0, 3),
            v in prop::collection::vec(0.0f64..1.0, 3),
            step in 0u64..50,
            p0 in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let mut p = RealArray::vector(p0.clone());
            let mut s = AdamState { m, v, step, cfg: AdamConfig::default() };
            let before = s.clone();
            adam_step(&mut p, &RealArray::zeros(&[3]), &mut s, 1e-3, "p").unwrap();
            prop_assert_eq!(p.data(), &p0[..]);
            prop_assert_eq!(s, before);
        }
    }
}
