//! Finite-difference verification of analytic gradients.
//!
//! Central differences at 64-bit: for each checked element, the function is
//! evaluated at x ± h and the quotient compared against the gradient from a
//! reverse sweep. Errors are relative with an absolute floor of 1:
//! `|a - n| / max(1, |a|, |n|)`, so near-zero gradients are held to the
//! tolerance absolutely instead of blowing up the quotient.

use crate::error::Result;
use crate::params::{Binding, ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
    pub checked: usize,
    /// Set for stochastic functions compared under frozen noise; such
    /// entries are informational, not pass/fail evidence.
    pub note: Option<&'static str>,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = match self.note {
            Some(n) => n.to_string(),
            None => if self.pass { "pass".into() } else { "FAIL".into() },
        };
        write!(
            f,
            "{:<32} max rel err {:>12.3e}  (tol {:.0e}, {} elems) {}",
            self.name, self.max_rel_err, self.tol, self.checked, status
        )
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs())
}

/// Check df/dx of a scalar-valued tensor function against central
/// differences over every element of `x`.
pub fn grad_check<F>(
    name: &str,
    f: F,
    x: &Tensor<f64>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    // analytic
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let y = f(&mut tape, xv)?;
    tape.backward(y)?;
    let analytic = tape
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let eval = |xt: &Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(xt.clone(), false);
        let y = f(&mut tape, xv)?;
        Ok(tape.value(y).item())
    };

    let mut max_err = 0.0f64;
    let mut xp = x.clone();
    for i in 0..x.numel() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + h;
        let fp = eval(&xp)?;
        xp.data_mut()[i] = orig - h;
        let fm = eval(&xp)?;
        xp.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        max_err = max_err.max(rel_err(analytic.data()[i], numeric));
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_err: max_err,
        tol,
        pass: max_err <= tol,
        checked: x.numel(),
        note: None,
    })
}

/// Check a model loss against central differences on a slice of parameter
/// elements. `elems` lists (parameter, flat element index) pairs.
pub fn grad_check_params<F>(
    name: &str,
    f: F,
    params: &mut ParamSet<f64>,
    elems: &[(ParamId, usize)],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bind = tape.bind(params);
    let y = f(&mut tape, &bind)?;
    tape.backward(y)?;

    let mut max_err = 0.0f64;
    for &(id, idx) in elems {
        let analytic = tape
            .grad(bind.var(id))
            .map(|g| g.data()[idx])
            .unwrap_or(0.0);
        let orig = params.value(id).data()[idx];

        params.value_mut(id).data_mut()[idx] = orig + h;
        let fp = {
            let mut t = Tape::new();
            let b = t.bind(params);
            let y = f(&mut t, &b)?;
            t.value(y).item()
        };
        params.value_mut(id).data_mut()[idx] = orig - h;
        let fm = {
            let mut t = Tape::new();
            let b = t.bind(params);
            let y = f(&mut t, &b)?;
            t.value(y).item()
        };
        params.value_mut(id).data_mut()[idx] = orig;

        let numeric = (fp - fm) / (2.0 * h);
        max_err = max_err.max(rel_err(analytic, numeric));
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_err: max_err,
        tol,
        pass: max_err <= tol,
        checked: elems.len(),
        note: None,
    })
}

/// Pick an evenly spread slice of parameter elements for a composite check.
pub fn param_slice(params: &ParamSet<f64>, count: usize) -> Vec<(ParamId, usize)> {
    let mut out = Vec::with_capacity(count);
    let ids: Vec<ParamId> = params.ids().collect();
    if ids.is_empty() {
        return out;
    }
    for i in 0..count {
        let id = ids[i % ids.len()];
        let n = params.value(id).numel();
        let idx = (i * 7919) % n; // coprime stride spreads picks within tensors
        out.push((id, idx));
    }
    out
}
