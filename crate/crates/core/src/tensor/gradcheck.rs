use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element)` with the largest error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::invalid(format!("grad_check needs a scalar output, got {:?}", v.shape())));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    Ok(v)
}

/// Compares tape gradients of scalar `f` against five-point central
/// differences at every element of every input. The relative error uses the
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |e| (i, e)))
        .collect();
    grad_check_indices(f, inputs, h, &all)
}

/// As [`grad_check`], restricted to the listed `(input, element)` pairs.
pub fn grad_check_indices<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    indices: &[(usize, usize)],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::invalid("grad_check needs a scalar output"));
    }
    if !tape.value(out).item().is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for &(i, e) in indices {
        let x0 = inputs[i].data()[e];
        let mut at = |dx: f64| {
            work[i].data_mut()[e] = x0 + dx;
            eval_scalar(&f, &work)
        };
        let (f2p, f1p, f1m, f2m) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
        work[i].data_mut()[e] = x0;

        let numeric = (8.0 * (f1p - f1m) - (f2p - f2m)) / (12.0 * h);
        let a = analytic[i].data()[e];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel;
            report.worst = Some((i, e));
        }
    }
    Ok(report)
}
