//! Adam with bias correction. One global step counter, per-parameter moment
//! tensors aligned by index with the parameter list they were created for.

use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(lr: f64, params: &[Tensor]) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }
}

/// One Adam update over an aligned (params, grads) pair.
///
/// With eps -> 0 and a fresh state, the first step moves every coordinate by
/// exactly -lr * sign(g): m-hat = g and sqrt(v-hat) = |g|.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) {
    assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
    assert_eq!(params.len(), state.m.len(), "optimizer state built for a different parameter list");
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        assert_eq!(p.shape(), g.shape(), "param/grad shape mismatch");
        if let Some(bad) = g.data().iter().find(|x| !x.is_finite()) {
            panic!("non-finite gradient {bad} reached the optimizer");
        }
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for ((pv, &gv), (mv, vv)) in pd.iter_mut().zip(g.data()).zip(md.iter_mut().zip(vd.iter_mut())) {
            *mv = state.beta1 * *mv + (1.0 - state.beta1) * gv;
            *vv = state.beta2 * *vv + (1.0 - state.beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::new(vec![2], vec![1.0, -2.0])];
        let grads = vec![Tensor::zeros(vec![2])];
        let mut st = AdamState::new(0.1, &params);
        adam_step(&mut params, &grads, &mut st);
        assert_eq!(params[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut params = vec![Tensor::new(vec![3], vec![0.0, 0.0, 0.0])];
        let grads = vec![Tensor::new(vec![3], vec![2.5, -0.01, 7.0])];
        let mut st = AdamState::new(0.1, &params);
        st.eps = 0.0;
        adam_step(&mut params, &grads, &mut st);
        assert_eq!(params[0].data(), &[-0.1, 0.1, -0.1]);
    }

    #[test]
    fn two_steps_match_hand_trace() {
        // f(x) = x^2 at x = 1: gradient 2x. Replayed by hand from the update rule.
        let lr = 0.1;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut x = 1.0_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        let mut want = Vec::new();
        for t in 1..=2 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            x -= lr * mhat / (vhat.sqrt() + eps);
            want.push(x);
        }

        let mut params = vec![Tensor::new(vec![1], vec![1.0])];
        let mut st = AdamState::new(lr, &params);
        for t in 0..2 {
            let g = vec![Tensor::new(vec![1], vec![2.0 * params[0].data()[0]])];
            adam_step(&mut params, &g, &mut st);
            assert_eq!(params[0].data()[0], want[t]);
        }
        // Objective decreased both steps.
        assert!(want[1] < want[0] && want[0] < 1.0);
    }

    #[test]
    #[should_panic(expected = "different parameter list")]
    fn misaligned_state_rejected() {
        let mut params = vec![Tensor::zeros(vec![2]), Tensor::zeros(vec![2])];
        let grads = vec![Tensor::zeros(vec![2]), Tensor::zeros(vec![2])];
        let mut st = AdamState::new(0.1, &params[..1]);
        adam_step(&mut params, &grads, &mut st);
    }
}
