//! Determinantal diversity reward over the personality bank.
//!
//! Each personality's action distribution is mapped through a small learned
//! feature network and L2-normalized; the reward is the log-determinant of
//! the resulting Gram matrix plus a diagonal jitter. Orthogonal features
//! (maximally diverse personalities) maximize it, collapsed personalities
//! drive it toward the jitter floor.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Mat, NodeId, ParamId, ParamSet, Tape, TapeError};
use crate::env::ACTION_COUNT;

#[derive(Debug, Clone)]
pub struct DppConfig {
    pub actions: usize,
    /// Feature dimension; must stay at or above the personality count so the
    /// Gram matrix is not structurally rank-deficient.
    pub feature_dim: usize,
    pub hidden: usize,
    /// Diagonal jitter keeping the log-determinant finite when personalities
    /// collapse.
    pub jitter: f64,
}

impl Default for DppConfig {
    fn default() -> Self {
        Self { actions: ACTION_COUNT, feature_dim: 16, hidden: 32, jitter: 1e-6 }
    }
}

/// Learned feature map with its own parameter set; checkpointed as the
/// "dpp" component.
pub struct DppModel {
    pub cfg: DppConfig,
    pub params: ParamSet,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl DppModel {
    pub fn init(cfg: DppConfig, rng: &mut impl Rng) -> Result<Self, TapeError> {
        let mut params = ParamSet::new();
        let scale1 = 1.0 / (cfg.actions as f64).sqrt();
        let w1 = params.add(
            "dpp.w1",
            Array2::from_shape_fn((cfg.actions, cfg.hidden), |_| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale1
            }),
        )?;
        let b1 = params.add("dpp.b1", Array2::zeros((1, cfg.hidden)))?;
        let scale2 = 1.0 / (cfg.hidden as f64).sqrt();
        let w2 = params.add(
            "dpp.w2",
            Array2::from_shape_fn((cfg.hidden, cfg.feature_dim), |_| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale2
            }),
        )?;
        let b2 = params.add("dpp.b2", Array2::zeros((1, cfg.feature_dim)))?;
        Ok(Self { cfg, params, w1, b1, w2, b2 })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix("dpp.")
    }

    /// Unit-norm feature rows for a stack of action distributions [k, 6].
    /// Errors if the raw feature network emits an exact zero row.
    pub fn features(
        &self,
        t: &mut Tape,
        set: &ParamSet,
        dists: NodeId,
    ) -> Result<NodeId, TapeError> {
        let w1 = t.param(set, self.w1);
        let b1 = t.param(set, self.b1);
        let w2 = t.param(set, self.w2);
        let b2 = t.param(set, self.b2);
        let h = t.matmul(dists, w1)?;
        let h = t.add_row(h, b1)?;
        let h = t.tanh(h)?;
        let f = t.matmul(h, w2)?;
        let f = t.add_row(f, b2)?;
        t.normalize_rows(f)
    }

    /// Log-determinant of the jittered Gram matrix of the feature rows.
    pub fn reward_graph(
        &self,
        t: &mut Tape,
        set: &ParamSet,
        dists: NodeId,
    ) -> Result<NodeId, TapeError> {
        let b = self.features(t, set, dists)?;
        let bt = t.transpose(b)?;
        let gram = t.matmul(b, bt)?;
        t.logdet_psd(gram, self.cfg.jitter)
    }

    /// Host-side reward for one timestep's k personality distributions.
    pub fn reward(&self, dists: &[Vec<f64>]) -> Result<f64, TapeError> {
        let stacked = stack_rows(dists)?;
        let mut t = Tape::new();
        let d = t.leaf(stacked);
        let r = self.reward_graph(&mut t, &self.params, d)?;
        Ok(t.value(r)[[0, 0]])
    }
}

fn stack_rows(rows: &[Vec<f64>]) -> Result<Mat, TapeError> {
    if rows.is_empty() {
        return Err(TapeError::EmptyInput { op: "stack_rows" });
    }
    let cols = rows[0].len();
    let mut m = Array2::zeros((rows.len(), cols));
    for (i, r) in rows.iter().enumerate() {
        debug_assert_eq!(r.len(), cols);
        for (j, x) in r.iter().enumerate() {
            m[[i, j]] = *x;
        }
    }
    Ok(m)
}

/// Determinant by cofactor expansion, for cross-checking the Cholesky path
/// on small matrices.
pub fn det_bruteforce(l: &Mat) -> f64 {
    let n = l.nrows();
    assert_eq!(n, l.ncols(), "determinant needs a square matrix");
    assert!(n <= 6, "cofactor expansion is for small matrices only");
    if n == 1 {
        return l[[0, 0]];
    }
    let mut det = 0.0;
    for j in 0..n {
        let mut minor = Array2::zeros((n - 1, n - 1));
        for r in 1..n {
            let mut cc = 0;
            for c in 0..n {
                if c == j {
                    continue;
                }
                minor[[r - 1, cc]] = l[[r, c]];
                cc += 1;
            }
        }
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * l[[0, j]] * det_bruteforce(&minor);
    }
    det
}

/// Log-determinant via cofactor expansion; `None` when the determinant is
/// not strictly positive (callers must jitter before comparing).
pub fn logdet_bruteforce(l: &Mat) -> Option<f64> {
    let d = det_bruteforce(l);
    if d > 0.0 {
        Some(d.ln())
    } else {
        None
    }
}
