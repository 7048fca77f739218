use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Loss evaluations per online window.
    pub max_iters: usize,
    /// Loss evaluations for a whole-sequence offline solve.
    pub offline_max_iters: usize,
    /// Initial per-coordinate step in pixels.
    pub initial_step: f64,
    /// Stop once an accepted step lowers the loss by less than this fraction.
    pub tolerance: f64,
    /// Start each window from the previous window's increments shifted by one frame.
    pub warm_start: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 60,
            offline_max_iters: 400,
            initial_step: 0.1,
            tolerance: 1e-5,
            warm_start: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.offline_max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.initial_step > 0.0 && self.tolerance >= 0.0) {
            return Err(Error::InvalidConfig(
                "initial_step must be positive and tolerance non-negative".into(),
            ));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-12;
const GROW: f64 = 1.2;
const MIN_STEP: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<Vec2>,
    pub loss: f64,
    /// Loss evaluations spent, including the initial one.
    pub evaluations: usize,
}

/// Adam-style descent with per-coordinate scaling and backtracking.
///
/// A step that raises the loss is rejected, the step size halved and the
/// moments restarted from the current gradient, so accepted losses never
/// increase. `f` returns the loss and writes the gradient.
pub fn minimize(
    x0: Vec<Vec2>,
    max_evals: usize,
    initial_step: f64,
    tolerance: f64,
    mut f: impl FnMut(&[Vec2], &mut [Vec2]) -> f64,
) -> Minimum {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![Vec2::zeros(); n];
    let mut loss = f(&x, &mut g);
    let mut evaluations = 1;
    let mut m = vec![Vec2::zeros(); n];
    let mut v = vec![Vec2::zeros(); n];
    let mut k = 0i32;
    let mut step = initial_step;
    let mut cand = vec![Vec2::zeros(); n];
    let mut gc = vec![Vec2::zeros(); n];
    while evaluations < max_evals && loss > 0.0 {
        k += 1;
        let (c1, c2) = (1.0 - BETA1.powi(k), 1.0 - BETA2.powi(k));
        for i in 0..n {
            m[i] = m[i] * BETA1 + g[i] * (1.0 - BETA1);
            v[i] = v[i] * BETA2 + g[i].component_mul(&g[i]) * (1.0 - BETA2);
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            cand[i] = x[i]
                - Vec2::new(
                    mh.x / (vh.x.sqrt() + EPS),
                    mh.y / (vh.y.sqrt() + EPS),
                ) * step;
        }
        gc.iter_mut().for_each(|p| *p = Vec2::zeros());
        let lc = f(&cand, &mut gc);
        evaluations += 1;
        if lc <= loss {
            let rel = (loss - lc) / loss.abs().max(f64::MIN_POSITIVE);
            std::mem::swap(&mut x, &mut cand);
            std::mem::swap(&mut g, &mut gc);
            loss = lc;
            step *= GROW;
            if rel < tolerance {
                break;
            }
        } else {
            step *= 0.5;
            k = 0;
            m.iter_mut().for_each(|p| *p = Vec2::zeros());
            v.iter_mut().for_each(|p| *p = Vec2::zeros());
            if step < MIN_STEP {
                break;
            }
        }
    }
    Minimum {
        x,
        loss,
        evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_an_ill_scaled_quadratic() {
        let target = [Vec2::new(3.0, -2.0), Vec2::new(0.5, 40.0)];
        let scale = [Vec2::new(1.0, 100.0), Vec2::new(0.01, 5.0)];
        let r = minimize(vec![Vec2::zeros(); 2], 5000, 0.1, 0.0, |x, g| {
            let mut f = 0.0;
            for i in 0..2 {
                let d = x[i] - target[i];
                f += d.component_mul(&d).dot(&scale[i]);
                g[i] = d.component_mul(&scale[i]) * 2.0;
            }
            f
        });
        for i in 0..2 {
            assert!((r.x[i] - target[i]).norm() < 1e-4, "{:?}", r.x);
        }
    }

    #[test]
    fn accepted_losses_never_increase() {
        let mut history = Vec::new();
        let r = minimize(vec![Vec2::new(5.0, 5.0)], 200, 3.0, 0.0, |x, g| {
            let f = x[0].norm() + 0.1 * x[0].norm_squared();
            g[0] = x[0] / x[0].norm().max(1e-12) + x[0] * 0.2;
            history.push(f);
            f
        });
        assert!(r.loss <= history[0]);
        assert!(r.loss < 1e-2);
    }

    #[test]
    fn zero_loss_returns_immediately() {
        let r = minimize(vec![Vec2::zeros()], 10, 0.1, 1e-5, |_, _| 0.0);
        assert_eq!(r.evaluations, 1);
    }
}
