use serde::{Deserialize, Serialize};

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied as `p -= lr·wd·p` before the step.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::new(1e-3)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new<'m>(config: AdamConfig, params: impl IntoIterator<Item = &'m Matrix>) -> Self {
        let m: Vec<Matrix> = params
            .into_iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        AdamState {
            config,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One Adam step. Parameters are left untouched if any gradient is
    /// non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Invalid(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            if let Some(k) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient {i} entry {k} is {} at adam step {}",
                    g.data()[k],
                    self.t + 1
                )));
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gi), (mi, vi)) in it {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                if weight_decay != 0.0 {
                    *w -= lr * weight_decay * *w;
                }
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `target ← rho·target + (1 − rho)·online`, elementwise.
pub fn polyak_update(target: &mut [&mut Matrix], online: &[&Matrix], rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Invalid(format!("polyak rho {rho} outside [0, 1]")));
    }
    if target.len() != online.len() {
        return Err(Error::Invalid("polyak: parameter count mismatch".into()));
    }
    for (t, o) in target.iter().zip(online) {
        if t.shape() != o.shape() {
            return Err(Error::Shape {
                op: "polyak",
                lhs: t.shape(),
                rhs: o.shape(),
            });
        }
    }
    for (t, o) in target.iter_mut().zip(online) {
        for (x, &y) in t.data_mut().iter_mut().zip(o.data()) {
            *x = rho * *x + (1.0 - rho) * y;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut w = Matrix::from_rows(&[[1.0, -2.0, 0.5]]);
        let g = Matrix::from_rows(&[[3.0, -0.01, 1e3]]);
        let mut st = AdamState::new(AdamConfig::new(1e-3), [&w]);
        let before = w.clone();
        st.step(&mut [&mut w], std::slice::from_ref(&g)).unwrap();
        for k in 0..3 {
            let delta = w.data()[k] - before.data()[k];
            assert!(
                (delta + 1e-3 * g.data()[k].signum()).abs() < 1e-9,
                "{delta}"
            );
        }
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut w = Matrix::from_rows(&[[0.3, -7.0]]);
        let orig = w.clone();
        let mut st = AdamState::new(AdamConfig::new(0.1), [&w]);
        for _ in 0..5 {
            st.step(&mut [&mut w], &[Matrix::zeros(1, 2)]).unwrap();
        }
        assert_eq!(w, orig);
        assert_eq!(st.steps(), 5);
    }

    #[test]
    fn weight_decay_shrinks_with_zero_gradient() {
        let mut w = Matrix::scalar(2.0);
        let mut st = AdamState::new(AdamConfig::new(0.1).with_weight_decay(0.5), [&w]);
        st.step(&mut [&mut w], &[Matrix::scalar(0.0)]).unwrap();
        assert!((w.item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        // Independent scalar Adam on f(w) = w², compared step by step.
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut w = Matrix::scalar(1.0);
        let mut st = AdamState::new(AdamConfig::new(lr), [&w]);
        let mut prev = 1.0f64;
        for t in 1..=10 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);

            let gw = Matrix::scalar(2.0 * w.item());
            st.step(&mut [&mut w], &[gw]).unwrap();
            assert!((w.item() - x).abs() < 1e-12);
            assert!(
                w.item().abs() < prev,
                "step {t}: {} !< {prev}",
                w.item().abs()
            );
            prev = w.item().abs();
        }
    }

    #[test]
    fn nan_gradient_aborts_without_touching_params() {
        let mut w = Matrix::from_rows(&[[1.0, 2.0]]);
        let mut st = AdamState::new(AdamConfig::default(), [&w]);
        let err = st.step(&mut [&mut w], &[Matrix::from_rows(&[[0.0, f64::NAN]])]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(w, Matrix::from_rows(&[[1.0, 2.0]]));
        assert_eq!(st.steps(), 0);
    }

    #[test]
    fn polyak_extremes() {
        let online = Matrix::from_rows(&[[1.0, 2.0]]);
        let mut t = Matrix::from_rows(&[[5.0, -5.0]]);
        polyak_update(&mut [&mut t], &[&online], 1.0).unwrap();
        assert_eq!(t, Matrix::from_rows(&[[5.0, -5.0]]));
        polyak_update(&mut [&mut t], &[&online], 0.0).unwrap();
        assert_eq!(t, online);
    }

    #[test]
    fn polyak_shape_mismatch() {
        let mut t = Matrix::zeros(1, 2);
        let o = Matrix::zeros(2, 1);
        assert!(polyak_update(&mut [&mut t], &[&o], 0.5).is_err());
    }

    #[test]
    fn polyak_contracts_geometrically() {
        let online = Matrix::from_rows(&[[1.0, -3.0, 0.25]]);
        let mut t = Matrix::from_rows(&[[4.0, 2.0, -1.0]]);
        let d0 = t.max_abs_diff(&online);
        for k in 1..=200 {
            polyak_update(&mut [&mut t], &[&online], 0.995).unwrap();
            let want = d0 * 0.995f64.powi(k);
            assert!((t.max_abs_diff(&online) - want).abs() < 1e-12 * d0);
        }
    }

    proptest! {
        #[test]
        fn polyak_distance_never_grows(rho in 0.0f64..1.0, a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let online = Matrix::scalar(b);
            let mut t = Matrix::scalar(a);
            let mut prev = (a - b).abs();
            for _ in 0..20 {
                polyak_update(&mut [&mut t], &[&online], rho).unwrap();
                let d = (t.item() - b).abs();
                prop_assert!(d <= prev + 1e-12);
                prev = d;
            }
        }
    }
}
