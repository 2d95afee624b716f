use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

/// Hyperparameters read by [`adam_step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm the gradient is scaled down to before the update.
    pub grad_clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip_norm: 5.0,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Applied { grad_norm: f64, clipped: bool },
    /// A gradient entry was NaN or infinite; nothing changed.
    Skipped,
}

/// Global L2 norm over all tensors, accumulated in name order.
pub fn global_norm(grads: &ParamSet) -> f64 {
    grads
        .iter()
        .flat_map(|(_, t)| t.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// One bias-corrected Adam update after global-norm clipping.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, cfg: &AdamConfig) -> Result<StepOutcome> {
    for (name, p) in params.iter() {
        match grads.get(name) {
            Some(g) if g.shape() == p.shape() => {}
            Some(g) => {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                })
            }
            None => return Err(Error::Config(format!("no gradient for parameter `{name}`"))),
        }
    }
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
        log::warn!("non-finite gradient in `{name}`; skipping optimizer step {}", state.step + 1);
        return Ok(StepOutcome::Skipped);
    }
    let norm = global_norm(grads);
    let clipped = norm > cfg.grad_clip_norm;
    let factor = if clipped { cfg.grad_clip_norm / norm } else { 1.0 };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("checked above");
        if state.m.get(name).is_none() {
            state.m.insert(name.clone(), Tensor::zeros(p.shape()));
            state.v.insert(name.clone(), Tensor::zeros(p.shape()));
        }
        let m = state.m.get_mut(name).expect("inserted").data_mut();
        let v = state.v.get_mut(name).expect("inserted").data_mut();
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = if clipped { gi * factor } else { gi };
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(StepOutcome::Applied { grad_norm: norm, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("p", Tensor::scalar(v));
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(0.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &single(1.0), &mut s, &AdamConfig::default()).unwrap();
        let moved = p.get("p").unwrap().item();
        assert!((moved + 0.001 / (1.0 + 1e-8)).abs() < 1e-15, "{moved}");
        assert!(moved > -0.001);
    }

    #[test]
    fn zero_grads_leave_params_but_count_the_step() {
        let mut p = single(0.7);
        let mut s = AdamState::default();
        adam_step(&mut p, &single(0.0), &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("p").unwrap().item(), 0.7);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut p = single(0.7);
        let mut s = AdamState::default();
        let out = adam_step(&mut p, &single(f64::NAN), &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(out, StepOutcome::Skipped);
        assert_eq!((p.get("p").unwrap().item(), s.step), (0.7, 0));
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = single(1.0);
        let mut s = AdamState::default();
        let mut at = Vec::new();
        for step in 1..=2500 {
            let g = single(p.get("p").unwrap().item());
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
            if step == 2000 || step == 2500 {
                at.push(p.get("p").unwrap().item().abs());
            }
        }
        // The band |p| < 0.01 is first entered at step 2203.
        assert!(at[0] < 0.025, "{at:?}");
        assert!(at[1] < 0.01, "{at:?}");
    }

    #[test]
    fn clipping_scales_to_the_bound() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::row_vector(vec![0.0, 0.0]));
        let mut g = ParamSet::new();
        g.insert("a", Tensor::row_vector(vec![30.0, 40.0]));
        let mut s = AdamState::default();
        let out = adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(out, StepOutcome::Applied { grad_norm: 50.0, clipped: true });
        let m = s.m.get("a").unwrap().data();
        assert!((m[0] - 0.1 * 3.0).abs() < 1e-12 && (m[1] - 0.1 * 4.0).abs() < 1e-12);
    }
}
