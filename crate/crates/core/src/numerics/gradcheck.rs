//! Central finite-difference validation of analytic gradients.

use std::collections::HashMap;

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Floor on the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric(format!("{what} loss is {value}")))
    }
}

/// Compares the tape gradient of `loss_fn` with central differences
/// `(f(p + h) - f(p - h)) / 2h` for every coordinate of every input and
/// returns the worst relative error.
pub fn gradient_check<F>(loss_fn: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Var,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = loss_fn(&mut tape, &vars);
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = loss_fn(&mut tape, &vars);
    finite(tape.value(loss).item(), "analytic")?;
    let analytic: Vec<Tensor> = if tape.requires_grad(loss) {
        let grads = tape.backward(loss);
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    } else {
        inputs.iter().map(|t| Tensor::zeros(t.shape())).collect()
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for c in 0..inputs[p].numel() {
            let orig = inputs[p].data()[c];
            probe[p].data_mut()[c] = orig + step;
            let plus = finite(eval(&probe), "perturbed")?;
            probe[p].data_mut()[c] = orig - step;
            let minus = finite(eval(&probe), "perturbed")?;
            probe[p].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(grad.data()[c], numeric));
        }
    }
    Ok(worst)
}

/// Variant for models whose parameters live in a [`ParamStore`].
///
/// `loss_fn` evaluates the loss on a store and returns its value with the
/// parameter gradients; only the listed `ids` are probed.
pub fn gradient_check_store<F>(
    store: &ParamStore,
    ids: &[ParamId],
    step: f64,
    loss_fn: F,
) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(f64, HashMap<ParamId, Tensor>)>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let (value, grads) = loss_fn(store)?;
    finite(value, "analytic")?;
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for &id in ids {
        for c in 0..store.get(id).numel() {
            let orig = store.get(id).data()[c];
            probe.get_mut(id).data_mut()[c] = orig + step;
            let plus = finite(loss_fn(&probe)?.0, "perturbed")?;
            probe.get_mut(id).data_mut()[c] = orig - step;
            let minus = finite(loss_fn(&probe)?.0, "perturbed")?;
            probe.get_mut(id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.get(&id).map_or(0.0, |g| g.data()[c]);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}

/// Candidate steps for [`gradient_check_piecewise`], largest first.
pub const PIECEWISE_STEPS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

/// Finite-difference check for losses that are only piecewise smooth
/// (ReLU kinks, decoded structures).
///
/// `piece` identifies the smooth piece a store lies on. For every
/// coordinate the numeric derivative is the extrapolated central difference
/// `(4 D(h/2) - D(h)) / 3` at the largest step in [`PIECEWISE_STEPS`] whose
/// four probe points all stay on the piece of the unperturbed store. Large
/// steps keep roundoff well below tiny gradient entries; the extrapolation
/// cancels the `h^2` term. A coordinate with no such step is reported as a
/// numeric error.
pub fn gradient_check_piecewise<F, P, K>(
    store: &ParamStore,
    ids: &[ParamId],
    loss_fn: F,
    piece: P,
) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(f64, HashMap<ParamId, Tensor>)>,
    P: Fn(&ParamStore) -> K,
    K: PartialEq,
{
    let (value, grads) = loss_fn(store)?;
    finite(value, "analytic")?;
    let base = piece(store);
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for &id in ids {
        for c in 0..store.get(id).numel() {
            let orig = store.get(id).data()[c];
            let mut numeric = None;
            for h in PIECEWISE_STEPS {
                let mut same = true;
                let mut eval = |x: f64| -> Result<f64> {
                    probe.get_mut(id).data_mut()[c] = orig + x;
                    same &= piece(&probe) == base;
                    finite(loss_fn(&probe)?.0, "perturbed")
                };
                let wide = (eval(h)? - eval(-h)?) / (2.0 * h);
                let narrow = (eval(h / 2.0)? - eval(-h / 2.0)?) / h;
                if same {
                    numeric = Some((4.0 * narrow - wide) / 3.0);
                    break;
                }
            }
            probe.get_mut(id).data_mut()[c] = orig;
            let numeric = numeric.ok_or_else(|| {
                Error::Numeric(format!(
                    "coordinate {c} of {} is within {} of a non-differentiable point",
                    store.param(id).name,
                    PIECEWISE_STEPS[PIECEWISE_STEPS.len() - 1] / 2.0
                ))
            })?;
            let analytic = grads.get(&id).map_or(0.0, |g| g.data()[c]);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}
