//! Randomized finite-difference verification of every differentiable
//! primitive and every loss term.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::autodiff::{
    cosine, gaussian_kl, grad_check, grad_check_sampled, gru_cell, reparameterize_with, GradCheck, GruVars, Rng, Tape,
    Tensor, Var,
};
use crate::corpus::{EncodedPair, BOS, EOS, PAD, SPECIAL_TOKENS};
use crate::error::Result;
use crate::model::{san, scn, sdn, uniform, Ablation, Bound, Frozen, ModelConfig, SegCvae};

pub const SUITE_TOLERANCE: f64 = 1e-4;
/// Finite-difference step for primitives.
pub const SUITE_STEP: f64 = 1e-4;
/// Larger step for the model-level terms, whose values are O(10).
pub const LOSS_STEP: f64 = 1e-3;
/// Coordinates sampled per loss-term check.
pub const LOSS_COORDS: usize = 40;

type Probe = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + Send + Sync>;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteCase {
    pub name: &'static str,
    pub config: usize,
    pub check: GradCheck,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub configs: usize,
    pub cases: Vec<SuiteCase>,
}

impl SuiteReport {
    pub fn failures(&self) -> Vec<&SuiteCase> {
        self.cases
            .iter()
            .filter(|c| !(c.check.max_rel_error < SUITE_TOLERANCE))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn worst(&self) -> Option<&SuiteCase> {
        self.cases
            .iter()
            .max_by(|a, b| a.check.max_rel_error.total_cmp(&b.check.max_rel_error))
    }

    /// Worst relative error per case name, one `name: value` line each.
    pub fn to_text(&self) -> String {
        let mut names: Vec<&str> = self.cases.iter().map(|c| c.name).collect();
        names.dedup();
        let mut seen = std::collections::BTreeSet::new();
        let mut s = String::new();
        let _ = writeln!(s, "configs: {}", self.configs);
        for n in names {
            if !seen.insert(n) {
                continue;
            }
            let worst = self
                .cases
                .iter()
                .filter(|c| c.name == n)
                .map(|c| c.check.max_rel_error)
                .fold(0.0, f64::max);
            let _ = writeln!(s, "{n}: {worst:.3e}");
        }
        let _ = writeln!(s, "failures: {}", self.failures().len());
        s
    }
}

/// Non-uniform fixed weighting so that sums that are constant by
/// construction (softmax rows) still have a gradient.
fn readout(tape: &mut Tape, out: Var) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let n = tape.value(out).len();
    let w: Vec<f64> = (0..n).map(|k| (k as f64 * 0.754_877_666 + 0.3).sin() + 0.1).collect();
    let w = tape.constant(Tensor::new(&shape, w)?);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn rand(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_in(lo, hi)).collect()).expect("shape")
}

/// Magnitudes in `[lo, hi]` with random signs.
fn away_from_zero(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x = rng.uniform_in(lo, hi);
            if rng.uniform() < 0.5 {
                -x
            } else {
                x
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

fn unary(name: &'static str, input: Tensor, op: fn(&mut Tape, Var) -> Var) -> (&'static str, Probe, Vec<Tensor>) {
    (
        name,
        Box::new(move |t, v| {
            let o = op(t, v[0]);
            readout(t, o)
        }),
        vec![input],
    )
}

/// Every primitive at randomly drawn small shapes.
pub fn primitive_cases(rng: &mut Rng) -> Vec<(&'static str, Probe, Vec<Tensor>)> {
    let dim = |rng: &mut Rng| 1 + rng.below(4);
    let (r, c, k) = (dim(rng), 2 + rng.below(3), dim(rng));
    let std = |rng: &mut Rng, s: &[usize]| rand(rng, s, -1.5, 1.5);
    let mut cases: Vec<(&'static str, Probe, Vec<Tensor>)> = Vec::new();

    cases.push((
        "matmul",
        Box::new(|t, v| {
            let o = t.matmul(v[0], v[1])?;
            readout(t, o)
        }),
        vec![std(rng, &[r, k]), std(rng, &[k, c])],
    ));
    type Binary = fn(&mut Tape, Var, Var) -> Result<Var>;
    let binaries: [(&'static str, Binary); 3] = [
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
    ];
    for (name, op) in binaries {
        cases.push((
            name,
            Box::new(move |t, v| {
                let o = op(t, v[0], v[1])?;
                readout(t, o)
            }),
            vec![std(rng, &[r, c]), std(rng, &[r, c])],
        ));
    }
    cases.push((
        "div",
        Box::new(|t, v| {
            let o = t.div(v[0], v[1])?;
            readout(t, o)
        }),
        vec![std(rng, &[r, c]), away_from_zero(rng, &[r, c], 0.5, 2.0)],
    ));
    cases.push((
        "add_row",
        Box::new(|t, v| {
            let o = t.add_row(v[0], v[1])?;
            readout(t, o)
        }),
        vec![std(rng, &[r, c]), std(rng, &[1, c])],
    ));
    cases.push(unary("scale_offset", std(rng, &[r, c]), |t, a| {
        let s = t.scale(a, -1.7);
        let n = t.neg(s);
        t.offset(n, 0.4)
    }));
    cases.push(unary("sigmoid", std(rng, &[r, c]), Tape::sigmoid));
    cases.push(unary("tanh", std(rng, &[r, c]), Tape::tanh));
    cases.push(unary("exp", std(rng, &[r, c]), Tape::exp));
    cases.push(unary("square", std(rng, &[r, c]), Tape::square));
    cases.push(unary("ln", rand(rng, &[r, c], 0.5, 2.0), Tape::ln));
    cases.push(unary("sqrt", rand(rng, &[r, c], 0.5, 2.0), Tape::sqrt));
    cases.push(unary("abs", away_from_zero(rng, &[r, c], 0.1, 1.0), Tape::abs));
    let bands: Vec<f64> = (0..r * c)
        .map(|_| match rng.below(3) {
            0 => rng.uniform_in(-1.0, -0.6),
            1 => rng.uniform_in(-0.4, 0.4),
            _ => rng.uniform_in(0.6, 1.0),
        })
        .collect();
    cases.push(unary("clamp", Tensor::new(&[r, c], bands).expect("shape"), |t, a| t.clamp(a, -0.5, 0.5)));
    cases.push(unary("softmax_rows", std(rng, &[r, c]), Tape::softmax_rows));
    cases.push(unary("log_softmax_rows", std(rng, &[r, c]), Tape::log_softmax_rows));
    cases.push(unary("sum", std(rng, &[r, c]), Tape::sum));
    cases.push(unary("mean", std(rng, &[r, c]), Tape::mean));
    cases.push((
        "mask_cols",
        Box::new(move |t, v| {
            let mut masked = vec![false; c];
            masked[0] = true;
            let m = t.mask_cols(v[0], &masked)?;
            let o = t.softmax_rows(m);
            readout(t, o)
        }),
        vec![std(rng, &[r, c])],
    ));
    cases.push((
        "gumbel_softmax",
        Box::new(|t, v| {
            let o = t.gumbel_softmax(v[0], 0.5, None)?;
            readout(t, o)
        }),
        vec![std(rng, &[r, c])],
    ));
    let (len, n, m, ch) = (3 + rng.below(3), dim(rng), 1 + rng.below(3), dim(rng));
    cases.push((
        "conv_seq",
        Box::new(|t, v| {
            let o = t.conv_seq(v[0], v[1])?;
            readout(t, o)
        }),
        vec![std(rng, &[len, n]), std(rng, &[m, n, 1, ch])],
    ));
    cases.push((
        "transpose",
        Box::new(|t, v| {
            let o = t.transpose(v[0])?;
            readout(t, o)
        }),
        vec![std(rng, &[r, c])],
    ));
    cases.push((
        "reshape",
        Box::new(move |t, v| {
            let o = t.reshape(v[0], &[1, r * c])?;
            let o = t.square(o);
            readout(t, o)
        }),
        vec![std(rng, &[r, c])],
    ));
    cases.push((
        "concat_rows",
        Box::new(|t, v| {
            let o = t.concat_rows(&[v[0], v[1]])?;
            readout(t, o)
        }),
        vec![std(rng, &[r, c]), std(rng, &[k, c])],
    ));
    cases.push((
        "concat_cols",
        Box::new(|t, v| {
            let o = t.concat_cols(&[v[0], v[1]])?;
            readout(t, o)
        }),
        vec![std(rng, &[r, c]), std(rng, &[r, k])],
    ));
    let (rs, cs) = (rng.below(r), rng.below(c));
    cases.push((
        "slice_rows",
        Box::new(move |t, v| {
            let o = t.slice_rows(v[0], rs, r)?;
            readout(t, o)
        }),
        vec![std(rng, &[r, c])],
    ));
    cases.push((
        "slice_cols",
        Box::new(move |t, v| {
            let o = t.slice_cols(v[0], cs, c)?;
            readout(t, o)
        }),
        vec![std(rng, &[r, c])],
    ));
    let ids: Vec<usize> = (0..2 + rng.below(4)).map(|_| rng.below(r + 1)).collect();
    cases.push((
        "gather_rows",
        Box::new(move |t, v| {
            let o = t.gather_rows(v[0], &ids)?;
            readout(t, o)
        }),
        vec![std(rng, &[r + 1, c])],
    ));
    let flat: Vec<usize> = (0..3).map(|_| rng.below(r * c)).collect();
    cases.push((
        "select",
        Box::new(move |t, v| {
            let o = t.select(v[0], &flat)?;
            readout(t, o)
        }),
        vec![std(rng, &[r, c])],
    ));
    cases.push((
        "add_all",
        Box::new(|t, v| {
            let o = t.add_all(v)?;
            readout(t, o)
        }),
        vec![std(rng, &[r, c]), std(rng, &[r, c]), std(rng, &[r, c])],
    ));

    let (inp, hid) = (dim(rng), dim(rng));
    let mut gru_inputs = vec![std(rng, &[1, inp]), std(rng, &[1, hid])];
    for _ in 0..3 {
        gru_inputs.push(rand(rng, &[inp, hid], -0.8, 0.8));
    }
    for _ in 0..3 {
        gru_inputs.push(rand(rng, &[hid, hid], -0.8, 0.8));
    }
    for _ in 0..3 {
        gru_inputs.push(rand(rng, &[1, hid], -0.5, 0.5));
    }
    cases.push((
        "gru_cell",
        Box::new(|t, v| {
            let p = GruVars {
                w_r: v[2],
                w_u: v[3],
                w_n: v[4],
                u_r: v[5],
                u_u: v[6],
                u_n: v[7],
                b_r: v[8],
                b_u: v[9],
                b_n: v[10],
            };
            let o = gru_cell(t, &p, v[0], v[1])?;
            readout(t, o)
        }),
        gru_inputs,
    ));
    let d = dim(rng);
    cases.push((
        "gaussian_kl",
        Box::new(|t, v| gaussian_kl(t, v[0], v[1], v[2], v[3])),
        vec![std(rng, &[1, d]), rand(rng, &[1, d], -1.0, 1.0), std(rng, &[1, d]), rand(rng, &[1, d], -1.0, 1.0)],
    ));
    let eps = rand(rng, &[1, d], -2.0, 2.0);
    cases.push((
        "reparameterize",
        Box::new(move |t, v| {
            let o = reparameterize_with(t, v[0], v[1], eps.clone())?;
            readout(t, o)
        }),
        vec![std(rng, &[1, d]), rand(rng, &[1, d], -1.0, 1.0)],
    ));
    let d = 2 + rng.below(3);
    cases.push((
        "cosine",
        Box::new(|t, v| cosine(t, v[0], v[1])),
        vec![std(rng, &[1, d]), std(rng, &[1, d])],
    ));
    cases
}

fn random_pair(rng: &mut Rng, max_clen: usize, vocab: usize) -> EncodedPair {
    let word = |rng: &mut Rng| SPECIAL_TOKENS.len() + rng.below(vocab - SPECIAL_TOKENS.len());
    let n_ctx = 1 + rng.below(max_clen);
    let mut context: Vec<usize> = (0..n_ctx).map(|_| word(rng)).collect();
    context.resize(max_clen, PAD);
    let n_resp = 1 + rng.below(max_clen - 2);
    let mut response = vec![BOS];
    response.extend((0..n_resp).map(|_| word(rng)));
    response.push(EOS);
    response.resize(max_clen, PAD);
    EncodedPair { context, response }
}

/// A small random model for loss-term checks: `M = 1 + config % 3`,
/// `chan = 2`, hidden size 8.
pub fn small_model(config: usize, rng: &mut Rng) -> Result<SegCvae> {
    let vocab = 10 + rng.below(5);
    let cfg = ModelConfig {
        max_clen: 5 + rng.below(3),
        emb_dim: 4,
        hidden_dim: 8,
        latent_dim: 4,
        kernel_width: 2,
        channels: 2,
        num_semantics: 1 + config % 3,
        tau: 0.1,
        vocab_size: vocab,
        ablation: Ablation::default(),
    };
    let emb = uniform(&[vocab, cfg.emb_dim], 0.5, rng);
    SegCvae::new(cfg, &emb, rng)
}

/// Loss terms checked against model parameters (SDN against its
/// generated side), on sampled coordinates. Branch selection is held at
/// its unperturbed value, so each probe is the smooth piece the tape
/// differentiates.
pub fn loss_cases(config: usize, rng: &mut Rng) -> Result<Vec<(&'static str, Probe, Vec<Tensor>)>> {
    let model = small_model(config, rng)?;
    let (l, v) = (model.config().max_clen, model.config().vocab_size);
    let batch = vec![random_pair(rng, l, v), random_pair(rng, l, v)];
    let kl_weight = rng.uniform();
    let lambda = rng.uniform_in(0.2, 1.0);
    let eps_seed = rng.below(1 << 30) as u64;
    let params = model.params().tensors().to_vec();
    let mut cases: Vec<(&'static str, Probe, Vec<Tensor>)> = Vec::new();

    let (m, p) = (model.clone(), batch[0].clone());
    let positive = {
        let mut t = Tape::new();
        let b = model.bind(&mut t, false);
        model.forward_example(&mut t, &b, &p, kl_weight, &mut Rng::new(eps_seed), false)?.positive
    };
    cases.push((
        "elbo",
        Box::new(move |t, vars| {
            let b = Bound::from_vars(vars.to_vec());
            let f = m.forward_example(t, &b, &p, kl_weight, &mut Rng::new(eps_seed), false)?;
            Ok(f.branches[positive].elbo)
        }),
        params.clone(),
    ));
    let (m, p) = (model.clone(), batch[0].clone());
    cases.push((
        "san",
        Box::new(move |t, vars| {
            let b = Bound::from_vars(vars.to_vec());
            let enc = m.encode_context(t, &b, &p.context, None)?;
            san(t, enc.stacked)
        }),
        params.clone(),
    ));
    let (m, p) = (model.clone(), batch[1].clone());
    cases.push((
        "scn",
        Box::new(move |t, vars| {
            let b = Bound::from_vars(vars.to_vec());
            let enc = m.encode_context(t, &b, &p.context, None)?;
            scn(t, enc.enc_context, &enc.semantics)
        }),
        params.clone(),
    ));
    let rows = 2 + rng.below(3);
    let gt = rand(rng, &[rows, 8], -1.0, 1.0);
    cases.push((
        "sdn",
        Box::new(move |t, vars| {
            let g = t.constant(gt.clone());
            sdn(t, g, vars[0])
        }),
        vec![rand(rng, &[rows, 8], -1.0, 1.0)],
    ));
    let frozen = {
        let mut t = Tape::new();
        let b = model.bind(&mut t, false);
        let o = model.batch_objective(&mut t, &b, &batch, kl_weight, lambda, &mut Rng::new(eps_seed), false)?;
        Frozen::of(&t, &o)
    };
    let m = model;
    cases.push((
        "l_all",
        Box::new(move |t, vars| {
            let b = Bound::from_vars(vars.to_vec());
            let o = m.batch_objective_frozen(t, &b, &batch, kl_weight, lambda, &mut Rng::new(eps_seed), false, &frozen)?;
            Ok(o.objective)
        }),
        params,
    ));
    Ok(cases)
}

fn run_config(config: usize, seed: u64) -> Result<Vec<SuiteCase>> {
    let mut rng = Rng::new(seed.wrapping_add(config as u64 * 7919));
    let mut out = Vec::new();
    for (name, f, inputs) in primitive_cases(&mut rng) {
        let check = grad_check(f, &inputs, SUITE_STEP)?;
        out.push(SuiteCase { name, config, check });
    }
    for (name, f, inputs) in loss_cases(config, &mut rng)? {
        let check = grad_check_sampled(f, &inputs, LOSS_STEP, LOSS_COORDS, &mut rng)?;
        out.push(SuiteCase { name, config, check });
    }
    Ok(out)
}

/// Runs every primitive and loss-term check on `configs` random
/// configurations derived from `seed`.
pub fn run_gradient_suite(configs: usize, seed: u64) -> Result<SuiteReport> {
    let per: Vec<Result<Vec<SuiteCase>>> = (0..configs).into_par_iter().map(|c| run_config(c, seed)).collect();
    let mut cases = Vec::new();
    for p in per {
        cases.extend(p?);
    }
    Ok(SuiteReport { configs, cases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let r = run_gradient_suite(6, 1).unwrap();
        assert!(r.passed(), "{}", r.to_text());
        let names: std::collections::HashSet<&str> = r.cases.iter().map(|c| c.name).collect();
        for n in ["matmul", "conv_seq", "gumbel_softmax", "gru_cell", "elbo", "san", "scn", "sdn", "l_all"] {
            assert!(names.contains(n), "{n}");
        }
        assert!(r.to_text().contains("failures: 0"));
    }
}
