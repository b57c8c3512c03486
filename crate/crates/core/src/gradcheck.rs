//! Central finite-difference gradient checking in 64-bit.
//!
//! The error of one parameter group is
//! `max|analytic − numeric| / max(max|analytic|, max|numeric|, FLOOR)`.

use std::fmt;

use crate::error::{Error, Result};
use crate::nn::{BoundParams, ParamStore};
use crate::tensor::{Tape, Var};

/// Denominator floor so groups with vanishing gradients compare absolutely.
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub elements: usize,
    pub max_abs_error: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GroupReport> {
        self.groups.iter().filter(|g| !(g.rel_error < self.tolerance))
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "group\telements\tmax_abs_error\tmax_rel_error\tstatus")?;
        for g in &self.groups {
            let status = if g.rel_error < self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{}\t{}\t{:.3e}\t{:.3e}\t{status}",
                g.name, g.elements, g.max_abs_error, g.rel_error
            )?;
        }
        write!(
            f,
            "overall\t{}\tstep={:e}\ttolerance={:e}\t{}",
            self.max_rel_error(),
            self.step,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares reverse-mode gradients of `loss` against central differences
/// for every element of every parameter in `params`. `params` is restored
/// before returning.
pub fn check_gradients<F>(params: &mut ParamStore<f64>, loss: F, step: f64, tolerance: f64) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&BoundParams<'t, f64>) -> Result<Var<'t, f64>>,
{
    if !(step > 0.0) || !(tolerance > 0.0) {
        return Err(Error::Config("gradcheck step and tolerance must be positive".into()));
    }
    let analytic = {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let value = loss(&bound)?;
        let mut grads = tape.backward(value)?;
        bound.collect_grads(&mut grads)
    };
    let eval = |params: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::new();
        let value = loss(&params.bind_constants(&tape))?;
        let v = value.value().item();
        if !v.is_finite() {
            return Err(Error::NonFinite("loss during finite differencing".into()));
        }
        Ok(v)
    };

    let mut groups = Vec::with_capacity(params.len());
    for (index, grad) in analytic.iter().enumerate() {
        let id = crate::nn::ParamId(index);
        let mut max_abs_error = 0.0f64;
        let mut scale = FLOOR;
        for e in 0..grad.len() {
            let original = params.get(id).data()[e];
            params.get_mut(id).data_mut()[e] = original + step;
            let plus = eval(params);
            params.get_mut(id).data_mut()[e] = original - step;
            let minus = eval(params);
            params.get_mut(id).data_mut()[e] = original;
            let numeric = (plus? - minus?) / (2.0 * step);
            let a = grad.data()[e];
            max_abs_error = max_abs_error.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        groups.push(GroupReport {
            name: params.name(index).to_string(),
            elements: grad.len(),
            max_abs_error,
            rel_error: max_abs_error / scale,
        });
    }
    Ok(GradcheckReport { step, tolerance, groups })
}
