use super::ParamStore;
use crate::error::{Error, Result};

/// Classic momentum SGD state: `v ← μ·v + g; p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocities: Vec<Vec<f64>>,
    pub momentum: f64,
    pub lr: f64,
}

impl SgdState {
    pub fn new(params: &ParamStore, momentum: f64) -> Self {
        Self {
            velocities: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            momentum,
            lr: 0.0,
        }
    }

    pub fn velocity(&self, index: usize) -> &[f64] {
        &self.velocities[index]
    }
}

/// One optimizer step over every parameter in the store, consuming the
/// gradients accumulated in it.
pub fn sgd_step(params: &mut ParamStore, state: &mut SgdState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if state.velocities.len() != params.len() {
        return Err(Error::invalid("optimizer state does not match parameter set"));
    }
    if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
        return Err(Error::MissingGrad(name.to_string()));
    }
    state.lr = lr;
    let mu = state.momentum;
    for ((_, p), v) in params.iter_mut().zip(state.velocities.iter_mut()) {
        let g = p.grad().expect("checked above").to_vec();
        debug_assert_eq!(v.len(), g.len());
        for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(&g) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn single(p: f64, g: f64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut t = Tensor::new(&[1], vec![p]).unwrap();
        t.grad_mut()[0] = g;
        store.add("p", t).unwrap();
        store
    }

    #[test]
    fn vanilla_step() {
        let mut store = single(1.0, 2.0);
        let mut st = SgdState::new(&store, 0.0);
        sgd_step(&mut store, &mut st, 0.1).unwrap();
        assert!((store.get(0).data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence() {
        let mut store = single(0.0, 1.0);
        let mut st = SgdState::new(&store, 0.9);
        sgd_step(&mut store, &mut st, 0.1).unwrap();
        assert_eq!(st.velocity(0), &[1.0]);
        assert!((store.get(0).data()[0] + 0.1).abs() < 1e-15);
        sgd_step(&mut store, &mut st, 0.1).unwrap();
        assert!((st.velocity(0)[0] - 1.9).abs() < 1e-15);
        assert!((store.get(0).data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[2])).unwrap();
        let mut st = SgdState::new(&store, 0.9);
        assert!(matches!(sgd_step(&mut store, &mut st, 0.1), Err(Error::MissingGrad(n)) if n == "w"));
    }

    #[test]
    fn non_positive_lr_rejected() {
        let mut store = single(0.0, 1.0);
        let mut st = SgdState::new(&store, 0.9);
        assert!(sgd_step(&mut store, &mut st, 0.0).is_err());
    }
}
