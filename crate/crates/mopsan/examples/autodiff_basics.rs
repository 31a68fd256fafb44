//! Tour of the autodiff tape: build a graph, read gradients, fit a tiny
//! linear model with Adam, and finite-difference-check a small network.

use mopsan::autodiff::gradcheck::check_gradients;
use mopsan::autodiff::optim::{Adam, AdamConfig};
use mopsan::autodiff::{Mat, ParamSet, Tape, TapeError};
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), TapeError> {
    // One forward/backward pass by hand: loss = mean((x*w - y)^2).
    let mut set = ParamSet::new();
    let w = set.add("w", array![[0.5], [-0.5]])?;
    let x_data: Mat = array![[1.0, 2.0], [2.0, 0.0], [0.0, 1.0]];
    let y_data: Mat = array![[3.0], [2.0], [1.0]];

    let mut t = Tape::new();
    let x = t.leaf(x_data.clone());
    let y = t.leaf(y_data.clone());
    let w_node = t.param(&set, w);
    let pred = t.matmul(x, w_node)?;
    let loss = t.mean_sq_diff(pred, y)?;
    println!("initial loss = {:.4}", t.value(loss)[[0, 0]]);
    t.backward(loss, &mut set)?;
    println!("dloss/dw = {:?}", set.grad(w).as_slice().unwrap());

    // The same model trained with Adam for a few hundred steps.
    let mut optim = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &set);
    for step in 0..300 {
        set.zero_grads();
        let mut t = Tape::new();
        let x = t.leaf(x_data.clone());
        let y = t.leaf(y_data.clone());
        let w_node = t.param(&set, w);
        let pred = t.matmul(x, w_node)?;
        let loss = t.mean_sq_diff(pred, y)?;
        t.backward(loss, &mut set)?;
        optim.step(&mut set);
        if step % 100 == 99 {
            println!("step {:3}: loss = {:.6}", step + 1, t.value(loss)[[0, 0]]);
        }
    }
    println!("fitted w = {:?} (target [1, 1])", set.value(w).as_slice().unwrap());

    // Gradient checking probes random parameters of an arbitrary graph
    // against central finite differences.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut mlp = ParamSet::new();
    mlp.add("w1", Mat::from_shape_fn((4, 8), |(i, j)| ((i * 7 + j) as f64).sin() * 0.3))?;
    mlp.add("w2", Mat::from_shape_fn((8, 1), |(i, _)| (i as f64 * 0.7).cos() * 0.3))?;
    let report = check_gradients(&mut mlp, &mut rng, 60, 1e-5, |set| {
        let mut t = Tape::new();
        let x = t.leaf(Mat::from_shape_fn((2, 4), |(i, j)| 0.1 * (i + j) as f64 + 0.2));
        let w1 = t.param(set, set.id_of("w1").expect("registered above"));
        let w2 = t.param(set, set.id_of("w2").expect("registered above"));
        let h = t.matmul(x, w1)?;
        let h = t.tanh(h)?;
        let out = t.matmul(h, w2)?;
        let loss = t.mean_all(out)?;
        Ok((t, loss))
    })?;
    println!(
        "gradcheck: {} probes, max relative error {:.2e} (worst: {})",
        report.probes, report.max_rel_err, report.worst_param
    );
    Ok(())
}
