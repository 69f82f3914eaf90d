use crate::error::{NumError, Result};
use crate::param::ParamStore;

/// Adam with bias correction and decoupled weight decay.
///
/// Weight decay is applied straight to the parameter (`p -= lr * wd * p`)
/// and only to parameters whose `decay` flag is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(NumError::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Applies one update to every parameter in `store` using its gradient.
    ///
    /// Every parameter must carry a gradient; parameters that genuinely did
    /// not participate should hold an explicit zero gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(p) = store.iter().find(|p| p.grad.is_none()) {
            return Err(NumError::MissingGrad(p.name.clone()));
        }
        if self.m.len() != store.len() {
            self.m = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (lr, wd) = (self.learning_rate, self.weight_decay);
        for (idx, p) in store.iter_mut().enumerate() {
            let grad = p.grad.as_ref().expect("checked above").data();
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            let decay = p.decay && wd != 0.0;
            for (((w, &g), m_i), v_i) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m_i = self.beta1 * *m_i + (1.0 - self.beta1) * g;
                *v_i = self.beta2 * *v_i + (1.0 - self.beta2) * g * g;
                let m_hat = *m_i / bc1;
                let v_hat = *v_i / bc2;
                if decay {
                    *w -= lr * wd * *w;
                }
                *w -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`Adam::step`].
pub fn adam_step(store: &mut ParamStore, state: &mut Adam) -> Result<()> {
    state.step(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(x: f64, decay: bool) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::new([1], vec![x]).unwrap(), decay).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        let mut store = scalar_store(1.0, false);
        let id = store.id_of("x").unwrap();
        store.accumulate_grad(id, &[0.3]).unwrap();
        let mut adam = Adam::new(0.01, 0.0).unwrap();
        adam.step(&mut store).unwrap();
        let expected = 1.0 - 0.01 * 0.3 / (0.3 + 1e-8);
        assert!((store.value(id).item() - expected).abs() < 1e-15);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut store = scalar_store(0.7, true);
        let id = store.id_of("x").unwrap();
        let mut adam = Adam::new(0.01, 0.0).unwrap();
        for _ in 0..3 {
            store.zero_grad();
            store.accumulate_grad(id, &[0.0]).unwrap();
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(id).item(), 0.7);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut store = scalar_store(0.7, true);
        let mut adam = Adam::new(0.01, 0.0).unwrap();
        assert_eq!(
            adam.step(&mut store).unwrap_err(),
            NumError::MissingGrad("x".into())
        );
    }

    #[test]
    fn rejects_non_positive_lr() {
        assert!(Adam::new(0.0, 0.0).is_err());
    }

    /// Hand-stepped scalar Adam on f(x) = (x - 3)^2.
    #[test]
    fn quadratic_trajectory_matches_hand_stepped_oracle() {
        let (lr, wd, b1, b2, eps) = (0.1, 0.01, 0.9f64, 0.999f64, 1e-8);
        let mut store = scalar_store(0.5, true);
        let id = store.id_of("x").unwrap();
        let mut adam = Adam::new(lr, wd).unwrap();

        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = 2.0 * (x - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * wd * x;
            x -= lr * mh / (vh.sqrt() + eps);

            let xs = store.value(id).item();
            store.zero_grad();
            store.accumulate_grad(id, &[2.0 * (xs - 3.0)]).unwrap();
            adam.step(&mut store).unwrap();
            assert!((store.value(id).item() - x).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn decay_skips_bias_flagged_parameters() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new([1], vec![1.0]).unwrap(), true).unwrap();
        let b = store.add("b", Tensor::new([1], vec![1.0]).unwrap(), false).unwrap();
        store.accumulate_grad(w, &[0.0]).unwrap();
        store.accumulate_grad(b, &[0.0]).unwrap();
        let mut adam = Adam::new(0.1, 0.5).unwrap();
        adam.step(&mut store).unwrap();
        assert!((store.value(w).item() - 0.95).abs() < 1e-15);
        assert_eq!(store.value(b).item(), 1.0);
    }
}
