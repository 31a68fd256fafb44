//! Leaky integrate-and-fire dynamics: membrane traces, spike rasters, and
//! the rate curve that makes the spiking actor trainable.

use mopsan::autodiff::{Mat, ParamSet, SpikeMode, Tape, TapeError};
use mopsan::snn::{lif_step, LifConfig};
use ndarray::Array2;

fn main() -> Result<(), TapeError> {
    let cfg = LifConfig::default();
    println!(
        "tau={} dt={} threshold={} reset={} (decay {:.2}, drive {:.2})\n",
        cfg.tau,
        cfg.dt,
        cfg.v_threshold,
        cfg.v_reset,
        cfg.decay(),
        cfg.drive()
    );

    // One neuron per row, each driven by a different constant current.
    let currents = [0.4, 0.8, 1.2, 2.0];
    let steps = 24;
    let mut v: Mat = Array2::zeros((currents.len(), 1));
    let mut rasters = vec![String::new(); currents.len()];
    let mut counts = vec![0usize; currents.len()];
    for _ in 0..steps {
        let drive = Array2::from_shape_vec(
            (currents.len(), 1),
            currents.to_vec(),
        )
        .expect("column of currents");
        let (v_next, spikes) = lif_step(&v, &drive, &cfg);
        for (i, raster) in rasters.iter_mut().enumerate() {
            if spikes[[i, 0]] > 0.5 {
                raster.push('|');
                counts[i] += 1;
            } else {
                raster.push('.');
            }
        }
        v = v_next;
    }
    println!("spike rasters over {steps} steps:");
    for (i, current) in currents.iter().enumerate() {
        println!(
            "  current {:.1}: {}  rate {:.3}",
            current,
            rasters[i],
            counts[i] as f64 / steps as f64
        );
    }

    // The same thresholding inside the graph: the hard spike is a step
    // function forward, but its surrogate window passes gradients near the
    // threshold, which is what lets spiking policies learn.
    let mut set = ParamSet::new();
    let w = set.add("w", Array2::from_elem((1, 1), 0.45))?;
    for (mode, label) in [(SpikeMode::Hard, "hard"), (SpikeMode::Smooth, "smooth")] {
        set.zero_grads();
        let mut t = Tape::new();
        let v_node = t.param(&set, w);
        let spike = t.spike(v_node, cfg.v_threshold, cfg.surrogate_width, mode)?;
        let loss = t.mean_all(spike)?;
        t.backward(loss, &mut set)?;
        println!(
            "{label} spike at v=0.45: forward {:.3}, gradient {:.3}",
            t.value(spike)[[0, 0]],
            set.grad(w)[[0, 0]]
        );
    }
    Ok(())
}
