use crate::adaptnet::ParamSet;
use crate::error::{Error, Result};

/// One Nesterov momentum step in the lookahead-gradient form.
///
/// The stored parameters are the lookahead point `theta + mu * v`, so the
/// caller evaluates `grads` at the parameters it holds. With that
/// reparametrization the classic update
/// `v <- mu * v - lr * g(theta + mu * v); theta <- theta + v` becomes
/// `v <- mu * v - lr * g; params <- params + mu * v - lr * g`.
pub fn sgd_nesterov_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::dim(format!(
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += momentum * *v - lr * g;
    }
    Ok(())
}

/// Velocity buffers for a whole parameter set.
#[derive(Debug, Clone)]
pub struct Nesterov {
    pub momentum: f64,
    velocity: ParamSet,
}

impl Nesterov {
    pub fn new(params: &ParamSet, momentum: f64) -> Self {
        Nesterov {
            momentum,
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
        params.check_layout(grads)?;
        params.check_layout(&self.velocity)?;
        for ((p, g), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.velocity.tensors)
        {
            sgd_nesterov_step(&mut p.data, &g.data, &mut v.data, lr, self.momentum)?;
        }
        Ok(())
    }
}
