//! Central finite-difference gradient oracle.

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParameterTape};
use crate::scalar::Scalar;

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[derive(Debug, Clone)]
pub struct ParamGradError {
    pub name: String,
    pub count: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamGradError>,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} max_rel_err={:.3e} mean_rel_err={:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.mean_rel_err
        )
    }
}

/// Compare reverse-mode gradients against central differences with step `h`.
///
/// `loss` records a forward pass on the supplied graph using the supplied
/// parameter values and returns the scalar loss node. It is invoked once
/// per perturbed entry, so it must be deterministic; two identical calls
/// with diverging values abort the check.
pub fn finite_diff_check<T, F>(params: &ParameterTape<T>, mut loss: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &ParameterTape<T>) -> Result<NodeId>,
{
    check_step(h)?;
    let analytic = analytic_grads(params, &mut loss)?;
    compare(&analytic, params.clone(), loss, h, tol)
}

/// As [`finite_diff_check`], but the central differences are taken by
/// `oracle`, which records the same loss in a wider scalar type `U`. The
/// parameters are widened exactly and perturbed in `U`, so the oracle's own
/// rounding stays far below the gradients being checked.
pub fn finite_diff_check_with_oracle<T, U, F, G>(
    params: &ParameterTape<T>,
    mut loss: F,
    oracle: G,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    U: Scalar,
    F: FnMut(&mut Graph<T>, &ParameterTape<T>) -> Result<NodeId>,
    G: FnMut(&mut Graph<U>, &ParameterTape<U>) -> Result<NodeId>,
{
    check_step(h)?;
    let analytic = analytic_grads(params, &mut loss)?;
    compare(&analytic, params.cast::<U>(), oracle, h, tol)
}

fn check_step(h: f64) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    Ok(())
}

fn eval<U: Scalar>(loss: &mut impl FnMut(&mut Graph<U>, &ParameterTape<U>) -> Result<NodeId>, p: &ParameterTape<U>) -> Result<U> {
    let mut g = Graph::new();
    let id = loss(&mut g, p)?;
    Ok(g.scalar(id))
}

fn analytic_grads<T: Scalar>(
    params: &ParameterTape<T>,
    loss: &mut impl FnMut(&mut Graph<T>, &ParameterTape<T>) -> Result<NodeId>,
) -> Result<Vec<Vec<f64>>> {
    let mut work = params.clone();
    let mut g = Graph::new();
    let id = loss(&mut g, &work)?;
    g.backward(id, &mut work)?;
    Ok(work
        .entries()
        .iter()
        .map(|e| e.grad.data().iter().map(|x| x.as_f64()).collect())
        .collect())
}

/// `max` that keeps a NaN, so a NaN error can never pass.
fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn compare<U: Scalar>(
    analytic: &[Vec<f64>],
    mut work: ParameterTape<U>,
    mut loss: impl FnMut(&mut Graph<U>, &ParameterTape<U>) -> Result<NodeId>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let first = eval(&mut loss, &work)?;
    let second = eval(&mut loss, &work)?;
    if first != second && !(first.is_nan() && second.is_nan()) {
        return Err(Error::NonDeterministic(format!(
            "loss changed between identical calls: {first} vs {second}"
        )));
    }
    let step = U::of(h);
    let mut report = Vec::with_capacity(work.len());
    let mut all_max = 0.0f64;
    let mut all_sum = 0.0f64;
    let mut all_count = 0usize;
    for (p, grads) in analytic.iter().enumerate() {
        let mut max = 0.0f64;
        let mut sum = 0.0f64;
        for (i, &a) in grads.iter().enumerate() {
            let orig = work.entries()[p].value.data()[i];
            work.entries_mut()[p].value.data_mut()[i] = orig + step;
            let plus = eval(&mut loss, &work)?;
            work.entries_mut()[p].value.data_mut()[i] = orig - step;
            let minus = eval(&mut loss, &work)?;
            work.entries_mut()[p].value.data_mut()[i] = orig;
            let numeric = ((plus - minus) / (step + step)).as_f64();
            let err = relative_error(a, numeric);
            max = nan_max(max, err);
            sum += err;
        }
        let count = grads.len();
        all_max = nan_max(all_max, max);
        all_sum += sum;
        all_count += count;
        report.push(ParamGradError {
            name: work.entries()[p].name.clone(),
            count,
            max_rel_err: max,
            mean_rel_err: if count == 0 { 0.0 } else { sum / count as f64 },
        });
    }
    let mean = if all_count == 0 { 0.0 } else { all_sum / all_count as f64 };
    Ok(GradCheckReport {
        params: report,
        max_rel_err: all_max,
        mean_rel_err: mean,
        tol,
        passed: all_max < tol,
    })
}
