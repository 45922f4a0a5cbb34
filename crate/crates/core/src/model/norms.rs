//! Branch selection, the three semantic norms and the combined objective.

use crate::autodiff::{cosine, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of the largest bound; ties go to the lowest index. The choice is a
/// plain number, so nothing differentiates through it.
pub fn select_positive(elbos: &[f64]) -> Result<usize> {
    if elbos.is_empty() {
        return Err(Error::Domain("select_positive: no candidates".into()));
    }
    let mut best = 0;
    for (i, &v) in elbos.iter().enumerate().skip(1) {
        if v > elbos[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Alienation norm: mean absolute entry of `I - softmax_rows(X Xᵀ)` for the
/// stacked prominent semantics `X` `[M, hidden]`.
pub fn san(tape: &mut Tape, x: Var) -> Result<Var> {
    let m = tape.value(x).rows();
    let xt = tape.transpose(x)?;
    let gram = tape.matmul(x, xt)?;
    let attn = tape.softmax_rows(gram);
    let eye = tape.constant(Tensor::eye(m));
    let diff = tape.sub(eye, attn)?;
    let abs = tape.abs(diff);
    Ok(tape.mean(abs))
}

/// Centralization norm: `1 - cos(enc(C), Σ x_i)`.
pub fn scn(tape: &mut Tape, enc_context: Var, xs: &[Var]) -> Result<Var> {
    let total = tape.add_all(xs)?;
    let c = cosine(tape, enc_context, total)?;
    let neg = tape.neg(c);
    Ok(tape.offset(neg, 1.0))
}

/// Distillation norm: row-averaged `KL(softmax(R_gt R_gtᵀ) || softmax(R R_ᵀ))`
/// where `R` holds the representations generated under the positive branch.
/// The ground-truth side is a fixed target.
pub fn sdn(tape: &mut Tape, r_gt: Var, r_gen: Var) -> Result<Var> {
    let b = tape.value(r_gt).rows();
    if b < 2 {
        return Err(Error::Domain(format!("sdn needs a batch of at least 2, got {b}")));
    }
    if tape.value(r_gen).shape() != tape.value(r_gt).shape() {
        return Err(Error::Shape(format!(
            "sdn: {:?} vs {:?}",
            tape.value(r_gt).shape(),
            tape.value(r_gen).shape()
        )));
    }
    let gt = tape.detach(r_gt);
    let gt_t = tape.transpose(gt)?;
    let gt_gram = tape.matmul(gt, gt_t)?;
    let target = tape.softmax_rows(gt_gram);
    let target_log = tape.log_softmax_rows(gt_gram);
    // Σ p log p is constant; 0·log 0 counts as 0.
    let neg_entropy: f64 = tape
        .value(target)
        .data()
        .iter()
        .zip(tape.value(target_log).data())
        .map(|(&p, &lp)| if p > 0.0 { p * lp } else { 0.0 })
        .sum();

    let gen_t = tape.transpose(r_gen)?;
    let gen_gram = tape.matmul(r_gen, gen_t)?;
    let gen_log = tape.log_softmax_rows(gen_gram);
    let weighted = tape.mul(target, gen_log)?;
    let cross = tape.sum(weighted);
    let neg_cross = tape.neg(cross);
    let kl = tape.offset(neg_cross, neg_entropy);
    Ok(tape.scale(kl, 1.0 / b as f64))
}

/// Norm terms entering the objective; `None` marks a term that is switched off.
#[derive(Clone, Copy, Debug, Default)]
pub struct NormTerms {
    pub san: Option<Var>,
    pub scn: Option<Var>,
    pub sdn: Option<Var>,
}

/// `elbo_plus - lambda * (san + scn + sdn)`, the quantity to maximize.
/// With `lambda == 0` the norms are left off the record entirely.
pub fn total_loss(tape: &mut Tape, elbo_plus: Var, norms: NormTerms, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda {lambda} outside [0, 1]")));
    }
    let active: Vec<Var> = [norms.san, norms.scn, norms.sdn].into_iter().flatten().collect();
    if lambda == 0.0 || active.is_empty() {
        return Ok(elbo_plus);
    }
    let sum = tape.add_all(&active)?;
    let weighted = tape.scale(sum, lambda);
    tape.sub(elbo_plus, weighted)
}
