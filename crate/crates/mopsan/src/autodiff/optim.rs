//! Adam with bias correction and global-norm gradient clipping.

use super::tape::{Mat, ParamSet};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2-norm ceiling applied to the whole gradient before the
    /// moment updates. Non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 0.5,
        }
    }
}

/// First and second moment buffers plus the step counter. Buffers are laid
/// out parallel to the [`ParamSet`] the optimizer was created for.
pub struct Adam {
    pub cfg: AdamConfig,
    step_count: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

/// What a single step did, for logging.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clipped: bool,
}

impl Adam {
    pub fn new(cfg: AdamConfig, set: &ParamSet) -> Self {
        let m = set
            .ids()
            .map(|id| Mat::zeros(set.value(id).raw_dim()))
            .collect();
        let v = set
            .ids()
            .map(|id| Mat::zeros(set.value(id).raw_dim()))
            .collect();
        Adam {
            cfg,
            step_count: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update using the gradients accumulated in `set`, then
    /// zeroes them. Gradients are clipped jointly across all parameters.
    pub fn step(&mut self, set: &mut ParamSet) -> StepStats {
        assert_eq!(self.m.len(), set.len(), "optimizer matches its parameter set");
        let norm = set.global_grad_norm();
        let clip = self.cfg.clip_norm;
        let scale = if clip > 0.0 && norm > clip {
            clip / norm
        } else {
            1.0
        };
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let ids: Vec<_> = set.ids().collect();
        for id in ids {
            let g = set.grad(id) * scale;
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            m.zip_mut_with(&g, |mi, &gi| *mi = self.cfg.beta1 * *mi + (1.0 - self.cfg.beta1) * gi);
            v.zip_mut_with(&g, |vi, &gi| {
                *vi = self.cfg.beta2 * *vi + (1.0 - self.cfg.beta2) * gi * gi
            });
            let lr = self.cfg.lr;
            let eps = self.cfg.eps;
            let value = set.value_mut(id);
            for ((x, &mi), &vi) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mh = mi / bc1;
                let vh = vi / bc2;
                *x -= lr * mh / (vh.sqrt() + eps);
            }
        }
        set.zero_grads();
        StepStats {
            grad_norm: norm,
            clipped: scale < 1.0,
        }
    }

    /// Raw view of the optimizer state for checkpointing.
    pub fn state(&self) -> (u64, &[Mat], &[Mat]) {
        (self.step_count, &self.m, &self.v)
    }

    /// Restores moments and step count saved by [`Adam::state`]. Shapes must
    /// match the parameter set the optimizer was built for.
    pub fn restore(&mut self, step_count: u64, m: Vec<Mat>, v: Vec<Mat>) {
        assert_eq!(m.len(), self.m.len(), "moment count matches");
        assert_eq!(v.len(), self.v.len(), "moment count matches");
        for (cur, new) in self.m.iter().zip(&m) {
            assert_eq!(cur.raw_dim(), new.raw_dim(), "moment shapes match");
        }
        self.step_count = step_count;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::Tape;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr_regardless_of_gradient_scale() {
        // With bias correction, step 1 is value -= lr * g/|g| elementwise
        // (for scalar params), independent of gradient magnitude.
        for g0 in [0.01, 1.0, 250.0] {
            let mut set = ParamSet::new();
            let id = set.add("w", array![[1.0]]).unwrap();
            let mut adam = Adam::new(
                AdamConfig {
                    clip_norm: 0.0,
                    ..AdamConfig::default()
                },
                &set,
            );
            set.accumulate_grad(id, &array![[g0]]);
            adam.step(&mut set);
            let moved = 1.0 - set.value(id)[[0, 0]];
            assert_abs_diff_eq!(moved, 3e-4, epsilon = 1e-8);
        }
    }

    #[test]
    fn global_norm_clipping_rescales_jointly() {
        let mut set = ParamSet::new();
        let a = set.add("a", array![[0.0]]).unwrap();
        let b = set.add("b", array![[0.0]]).unwrap();
        set.accumulate_grad(a, &array![[3.0]]);
        set.accumulate_grad(b, &array![[4.0]]);
        let mut adam = Adam::new(AdamConfig::default(), &set);
        let stats = adam.step(&mut set);
        // Norm of (3, 4) is 5, clipped to 0.5.
        assert_abs_diff_eq!(stats.grad_norm, 5.0, epsilon = 1e-12);
        assert!(stats.clipped);
    }

    #[test]
    fn gradients_are_zeroed_after_step() {
        let mut set = ParamSet::new();
        let id = set.add("w", array![[1.0, 2.0]]).unwrap();
        set.accumulate_grad(id, &array![[1.0, 1.0]]);
        let mut adam = Adam::new(AdamConfig::default(), &set);
        adam.step(&mut set);
        assert_eq!(set.grad(id), &array![[0.0, 0.0]]);
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        let mut set = ParamSet::new();
        let id = set.add("w", array![[5.0]]).unwrap();
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                clip_norm: 0.0,
                ..AdamConfig::default()
            },
            &set,
        );
        for _ in 0..500 {
            let mut t = Tape::new();
            let w = t.param(&set, id);
            let sq = t.mul(w, w).unwrap();
            let loss = t.sum_all(sq).unwrap();
            t.backward(loss, &mut set).unwrap();
            adam.step(&mut set);
        }
        assert!(set.value(id)[[0, 0]].abs() < 1e-2);
    }
}
