//! Central-difference verification of reverse-mode gradients.

use super::rng::Rng;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input index, element index, analytic, numeric)` at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Gradients smaller than this are below what a finite difference of an
/// O(1) function can resolve; the denominator never drops under it.
pub const GRAD_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRAD_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Shape("grad_check: function must return a scalar".into()));
    }
    Ok(tape.scalar(out))
}

fn check_coords<F>(f: &F, inputs: &[Tensor], h: f64, coords: &[(usize, usize)]) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::Domain(format!("grad_check: step {h} out of range")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut work = inputs.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for &(i, j) in coords {
        let analytic = grads.get(vars[i]).map_or(0.0, |g| g[j]);
        let orig = work[i].data()[j];
        let mut at = |offset: f64| -> Result<f64> {
            work[i].data_mut()[j] = orig + offset;
            eval(f, &work)
        };
        let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
        work[i].data_mut()[j] = orig;
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst = Some((i, j, analytic, numeric));
        }
    }
    Ok(report)
}

/// Compares reverse-mode gradients of the scalar `f` against fourth-order
/// central differences at every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    check_coords(&f, inputs, h, &coords)
}

/// Same as [`grad_check`] on at most `max_coords` elements drawn uniformly
/// without replacement.
pub fn grad_check_sampled<F>(f: F, inputs: &[Tensor], h: f64, max_coords: usize, rng: &mut Rng) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    rng.shuffle(&mut coords);
    coords.truncate(max_coords);
    coords.sort_unstable();
    check_coords(&f, inputs, h, &coords)
}
