//! Central-difference validation of the tape's backward pass.

use rand::Rng;

use super::tape::{NodeId, ParamSet, Tape, TapeError};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
}

/// Compares analytic gradients against central finite differences at
/// `probes` randomly chosen parameter coordinates.
///
/// `build` must be a pure function of the parameter values: any randomness
/// (noise draws, sampled inputs) has to be captured outside and replayed
/// identically on every call, otherwise the difference quotient is
/// meaningless. The relative error uses `max(|analytic|, |numeric|, 1e-3)`
/// as denominator so that near-zero gradients do not inflate the report.
pub fn check_gradients<F, R>(
    set: &mut ParamSet,
    rng: &mut R,
    probes: usize,
    eps: f64,
    build: F,
) -> Result<GradCheckReport, TapeError>
where
    F: FnMut(&ParamSet) -> Result<(Tape, NodeId), TapeError>,
    R: Rng,
{
    check_gradients_scoped(set, rng, probes, eps, "", build)
}

/// Same check, but probes only parameters whose registered name starts with
/// `prefix`. The loss may still flow through the rest of the set; scoping
/// concentrates every probe on one component of a shared parameter set.
pub fn check_gradients_scoped<F, R>(
    set: &mut ParamSet,
    rng: &mut R,
    probes: usize,
    eps: f64,
    prefix: &str,
    mut build: F,
) -> Result<GradCheckReport, TapeError>
where
    F: FnMut(&ParamSet) -> Result<(Tape, NodeId), TapeError>,
    R: Rng,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    set.zero_grads();
    let (tape, loss) = build(set)?;
    let shape = {
        let v = tape.value(loss);
        (v.nrows(), v.ncols())
    };
    if shape != (1, 1) {
        return Err(TapeError::NonScalarLoss {
            node: loss.0,
            shape,
        });
    }
    tape.backward(loss, set)?;
    let analytic: Vec<_> = set.ids().map(|id| set.grad(id).clone()).collect();
    set.zero_grads();
    drop(tape);

    let mut report = GradCheckReport {
        probes,
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
    };
    let eligible: Vec<super::tape::ParamId> = set
        .ids()
        .filter(|id| set.name(*id).starts_with(prefix))
        .collect();
    assert!(
        !eligible.is_empty(),
        "gradient check needs parameters matching prefix {prefix:?}"
    );

    for _ in 0..probes {
        let id = eligible[rng.gen_range(0..eligible.len())];
        let len = set.value(id).len();
        let flat = rng.gen_range(0..len);
        let cols = set.value(id).ncols();
        let coord = (flat / cols, flat % cols);
        let orig = set.value(id)[coord];

        set.value_mut(id)[coord] = orig + eps;
        let (tape_p, loss_p) = build(set)?;
        let f_plus = tape_p.value(loss_p)[[0, 0]];
        drop(tape_p);

        set.value_mut(id)[coord] = orig - eps;
        let (tape_m, loss_m) = build(set)?;
        let f_minus = tape_m.value(loss_m)[[0, 0]];
        drop(tape_m);

        set.value_mut(id)[coord] = orig;

        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let a = analytic[id.0][coord];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = set.name(id).to_string();
            report.worst_index = flat;
        }
    }
    Ok(report)
}
