use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// `velocity' = mu * velocity + grads`, `params' = params - lr * velocity'`.
///
/// `grads` are gradients of the quantity being minimized. Tensors whose
/// `mask` entry is false keep both their value and their velocity. A step
/// with any non-finite gradient in an updated tensor is rejected.
pub fn sgd_momentum_update(
    params: &ModelParams,
    grads: &ModelParams,
    velocity: &ModelParams,
    lr: f64,
    mu: f64,
    mask: Option<&[bool]>,
) -> Result<(ModelParams, ModelParams)> {
    let names = ModelParams::<Tensor>::names();
    let mut new_params = params.clone();
    let mut new_velocity = velocity.clone();
    let grads = grads.items();
    for (k, (p, v)) in new_params
        .items_mut()
        .into_iter()
        .zip(new_velocity.items_mut())
        .enumerate()
    {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        let g = grads[k];
        if g.shape() != p.shape() {
            return Err(Error::shape("sgd_momentum_update", g.shape(), p.shape()));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(names[k].clone()));
        }
        for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok((new_params, new_velocity))
}

/// `params - lr * direction` on masked tensors, leaving velocity untouched.
pub(crate) fn step_along(params: &ModelParams, direction: &ModelParams, lr: f64, mask: Option<&[bool]>) -> ModelParams {
    let mut out = params.clone();
    let dirs = direction.items();
    for (k, p) in out.items_mut().into_iter().enumerate() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        for (pv, d) in p.data_mut().iter_mut().zip(dirs[k].data()) {
            *pv -= lr * d;
        }
    }
    out
}

/// `mu * velocity + grads` on masked tensors.
pub(crate) fn next_velocity(
    velocity: &ModelParams,
    grads: &ModelParams,
    mu: f64,
    mask: Option<&[bool]>,
) -> Result<ModelParams> {
    let names = ModelParams::<Tensor>::names();
    let mut out = velocity.clone();
    let gs = grads.items();
    for (k, v) in out.items_mut().into_iter().enumerate() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        if !gs[k].all_finite() {
            return Err(Error::NonFiniteGradient(names[k].clone()));
        }
        for (vv, g) in v.data_mut().iter_mut().zip(gs[k].data()) {
            *vv = mu * *vv + g;
        }
    }
    Ok(out)
}

/// Adds `scale * other` into `acc`, tensor by tensor.
pub(crate) fn accumulate(acc: &mut ModelParams, other: &ModelParams, scale: f64) {
    for (a, o) in acc.items_mut().into_iter().zip(other.items()) {
        for (x, y) in a.data_mut().iter_mut().zip(o.data()) {
            *x += scale * y;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_emb: 2,
            d_h: 2,
            d_a: 2,
            classes: 2,
        }
    }

    fn filled(value: f64) -> ModelParams {
        let mut p = ModelParams::zeros(&cfg());
        for t in p.items_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = value);
        }
        p
    }

    #[test]
    fn plain_sgd_subtracts_gradient() {
        let params = filled(1.0);
        let grads = filled(0.25);
        let (p, v) = sgd_momentum_update(&params, &grads, &params.zeros_like(), 1.0, 0.0, None).unwrap();
        assert!(p.items().iter().all(|t| t.data().iter().all(|&x| x == 0.75)));
        assert!(v.items().iter().all(|t| t.data().iter().all(|&x| x == 0.25)));
    }

    #[test]
    fn velocity_decays_without_gradient() {
        let params = filled(0.0);
        let grads = filled(0.0);
        let mut v = filled(1.0);
        for step in 1..=3 {
            let (_, nv) = sgd_momentum_update(&params, &grads, &v, 0.1, 0.9, None).unwrap();
            v = nv;
            let expected = 0.9f64.powi(step);
            assert!(v
                .items()
                .iter()
                .all(|t| t.data().iter().all(|&x| (x - expected).abs() < 1e-15)));
        }
    }

    #[test]
    fn two_momentum_steps_follow_recursion() {
        let g = 2.0;
        let start = filled(0.0);
        let grads = filled(g);
        let (p1, v1) = sgd_momentum_update(&start, &grads, &start.zeros_like(), 0.1, 0.9, None).unwrap();
        let (p2, _) = sgd_momentum_update(&p1, &grads, &v1, 0.1, 0.9, None).unwrap();
        let expected = -0.1 * g - 0.19 * g;
        assert!(p2
            .items()
            .iter()
            .all(|t| t.data().iter().all(|&x| (x - expected).abs() < 1e-12)));
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let params = filled(1.0);
        let mut grads = filled(0.0);
        grads.b_c.data_mut()[0] = f64::NAN;
        let err = sgd_momentum_update(&params, &grads, &params.zeros_like(), 0.1, 0.9, None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref name) if name == "b_c"));
    }

    #[test]
    fn mask_freezes_tensors() {
        let params = filled(1.0);
        let grads = filled(1.0);
        let mask = ModelParams::<Tensor>::indicator_head_mask();
        let (p, _) = sgd_momentum_update(&params, &grads, &params.zeros_like(), 0.5, 0.0, Some(&mask)).unwrap();
        for (k, t) in p.items().iter().enumerate() {
            let expected = if mask[k] { 0.5 } else { 1.0 };
            assert!(t.data().iter().all(|&x| x == expected));
        }
    }
}
