//! Central finite-difference gradient verification.

use crate::store::ParamStore;
use crate::tape::{Tape, Var};
use crate::TensorError;

/// Per-parameter worst relative error between reverse-mode and central
/// finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compare reverse-mode gradients of a scalar-valued builder against central
/// differences with step `h`. `skip(name, index)` excludes entries sitting on
/// non-differentiable points (e.g. relu inputs at exactly zero).
pub fn grad_check_masked<F>(
    store: &mut ParamStore,
    build: F,
    h: f64,
    skip: impl Fn(&str, usize) -> bool,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var, TensorError>,
{
    let eval = |store: &ParamStore| -> Result<f64, TensorError> {
        let mut tape = Tape::new(store);
        let out = build(store, &mut tape)?;
        Ok(tape.value(out).item())
    };

    let analytic = {
        let mut tape = Tape::new(store);
        let loss = build(store, &mut tape)?;
        tape.backward(loss)?
    };

    let mut per_param = Vec::new();
    let mut max_rel = 0.0_f64;
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let n = store.value(id).len();
        let mut worst = 0.0_f64;
        for i in 0..n {
            if skip(&name, i) {
                continue;
            }
            let original = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = original + h;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = original - h;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = original;

            let fd = (plus - minus) / (2.0 * h);
            let ad = analytic.get(id).data()[i];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        max_rel = max_rel.max(worst);
        per_param.push((name, worst));
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_err: max_rel,
    })
}

/// `grad_check_masked` with nothing excluded.
pub fn grad_check<F>(store: &mut ParamStore, build: F, h: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var, TensorError>,
{
    grad_check_masked(store, build, h, |_, _| false)
}
