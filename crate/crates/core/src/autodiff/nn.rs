//! Composite differentiable building blocks: the gated recurrent cell,
//! diagonal-Gaussian helpers and cosine similarity.

use super::rng::Rng;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Norms at or below this are treated as zero vectors.
pub const NORM_EPS: f64 = 1e-8;

/// Weights of one gated recurrent cell, bound to a tape.
///
/// `w_*` are `[input, hidden]`, `u_*` are `[hidden, hidden]`, biases `[1, hidden]`.
/// Gates: reset `r`, update `u`, candidate `n`.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_r: Var,
    pub w_u: Var,
    pub w_n: Var,
    pub u_r: Var,
    pub u_u: Var,
    pub u_n: Var,
    pub b_r: Var,
    pub b_u: Var,
    pub b_n: Var,
}

impl GruVars {
    pub fn hidden(&self, tape: &Tape) -> usize {
        tape.value(self.u_r).cols()
    }
}

/// Output projection of the decoder, `[hidden, vocab]` and `[1, vocab]`.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionVars {
    pub weight: Var,
    pub bias: Var,
}

/// One recurrent step given the pre-computed input terms `x·W + b` for each
/// gate (all `[1, hidden]`).
fn gru_step(tape: &mut Tape, p: &GruVars, xr: Var, xu: Var, xn: Var, h: Var) -> Result<Var> {
    let hr = tape.matmul(h, p.u_r)?;
    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r);
    let hu = tape.matmul(h, p.u_u)?;
    let u = tape.add(xu, hu)?;
    let u = tape.sigmoid(u);
    let hn = tape.matmul(h, p.u_n)?;
    let rhn = tape.mul(r, hn)?;
    let n = tape.add(xn, rhn)?;
    let n = tape.tanh(n);
    // h' = (1 - u) * n + u * h = n + u * (h - n)
    let diff = tape.sub(h, n)?;
    let gated = tape.mul(u, diff)?;
    tape.add(n, gated)
}

fn input_terms(tape: &mut Tape, p: &GruVars, x: Var) -> Result<(Var, Var, Var)> {
    let mut term = |w: Var, b: Var| -> Result<Var> {
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    };
    Ok((term(p.w_r, p.b_r)?, term(p.w_u, p.b_u)?, term(p.w_n, p.b_n)?))
}

/// Single cell application on a `[1, input]` row.
pub fn gru_cell(tape: &mut Tape, p: &GruVars, x: Var, h: Var) -> Result<Var> {
    let (xr, xu, xn) = input_terms(tape, p, x)?;
    gru_step(tape, p, xr, xu, xn, h)
}

/// Runs the cell over an embedded sequence `[L, input]` starting from `h0`
/// (zeros when `None`) and returns the state after every processed step.
/// Positions whose `keep` flag is false are skipped, carrying the state
/// through unchanged.
pub fn gru_scan(tape: &mut Tape, p: &GruVars, seq: Var, h0: Option<Var>, keep: Option<&[bool]>) -> Result<Vec<Var>> {
    let len = tape.value(seq).rows();
    if let Some(k) = keep {
        if k.len() != len {
            return shape_err(format!("gru_scan: {} mask flags for {} steps", k.len(), len));
        }
    }
    let steps: Vec<usize> = (0..len).filter(|&t| keep.is_none_or(|k| k[t])).collect();
    if steps.is_empty() {
        return Err(Error::Domain("gru_scan: empty sequence".into()));
    }
    let hidden = p.hidden(tape);
    let (xr, xu, xn) = input_terms(tape, p, seq)?;
    let mut h = match h0 {
        Some(h) => h,
        None => tape.constant(Tensor::zeros(&[1, hidden])),
    };
    let mut states = Vec::with_capacity(steps.len());
    for t in steps {
        let r = tape.slice_rows(xr, t, t + 1)?;
        let u = tape.slice_rows(xu, t, t + 1)?;
        let n = tape.slice_rows(xn, t, t + 1)?;
        h = gru_step(tape, p, r, u, n, h)?;
        states.push(h);
    }
    Ok(states)
}

/// Final hidden state `[1, hidden]` of [`gru_scan`] from a zero state.
pub fn gru_encode(tape: &mut Tape, p: &GruVars, seq: Var, keep: Option<&[bool]>) -> Result<Var> {
    let states = gru_scan(tape, p, seq, None, keep)?;
    Ok(*states.last().expect("non-empty scan"))
}

/// One decoder step: advances the state with `input` and projects the new
/// state to vocabulary logits. Returns `(logits [1, vocab], state [1, hidden])`.
pub fn gru_decode_step(
    tape: &mut Tape,
    p: &GruVars,
    out: &ProjectionVars,
    state: Var,
    input: Var,
) -> Result<(Var, Var)> {
    let hidden = p.hidden(tape);
    if tape.value(state).len() != hidden {
        return shape_err(format!(
            "gru_decode_step: state {:?}, hidden {}",
            tape.value(state).shape(),
            hidden
        ));
    }
    let state = tape.reshape(state, &[1, hidden])?;
    let next = gru_cell(tape, p, input, state)?;
    let logits = tape.matmul(next, out.weight)?;
    let logits = tape.add_row(logits, out.bias)?;
    Ok((logits, next))
}

/// Closed-form `KL(N(mu_q, e^lv_q) || N(mu_p, e^lv_p))`, summed over dimensions.
pub fn gaussian_kl(tape: &mut Tape, mu_q: Var, lv_q: Var, mu_p: Var, lv_p: Var) -> Result<Var> {
    let d = tape.sub(mu_q, mu_p)?;
    let d2 = tape.square(d);
    let var_q = tape.exp(lv_q);
    let num = tape.add(var_q, d2)?;
    let var_p = tape.exp(lv_p);
    let ratio = tape.div(num, var_p)?;
    let log_ratio = tape.sub(lv_p, lv_q)?;
    let inner = tape.add(log_ratio, ratio)?;
    let inner = tape.offset(inner, -1.0);
    let total = tape.sum(inner);
    Ok(tape.scale(total, 0.5))
}

/// `mu + exp(logvar / 2) * eps` with a fixed noise tensor.
pub fn reparameterize_with(tape: &mut Tape, mu: Var, logvar: Var, eps: Tensor) -> Result<Var> {
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let eps = tape.constant(eps.reshaped(tape.value(mu).shape())?);
    let noise = tape.mul(std, eps)?;
    tape.add(mu, noise)
}

/// Draws `eps ~ N(0, I)` from `rng` and applies [`reparameterize_with`].
pub fn reparameterize(tape: &mut Tape, mu: Var, logvar: Var, rng: &mut Rng) -> Result<Var> {
    let shape = tape.value(mu).shape().to_vec();
    let n = tape.value(mu).len();
    let eps = Tensor::new(&shape, (0..n).map(|_| rng.normal()).collect())?;
    reparameterize_with(tape, mu, logvar, eps)
}

fn norm_of(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine similarity of two same-shape nodes.
pub fn cosine(tape: &mut Tape, u: Var, v: Var) -> Result<Var> {
    for x in [u, v] {
        if norm_of(tape.value(x)) <= NORM_EPS {
            return Err(Error::DegenerateVector(NORM_EPS));
        }
    }
    let uv = tape.mul(u, v)?;
    let dot = tape.sum(uv);
    let uu = tape.square(u);
    let uu = tape.sum(uu);
    let vv = tape.square(v);
    let vv = tape.sum(vv);
    let prod = tape.mul(uu, vv)?;
    let denom = tape.sqrt(prod);
    tape.div(dot, denom)
}
