use crate::autodiff::{Rng, Tape, Tensor};
use crate::corpus::{Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{Bound, SegCvae};

/// Responses generated for one context.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    /// PAD-filled context ids.
    pub context: Vec<usize>,
    /// Generated word ids, framing removed.
    pub responses: Vec<Vec<usize>>,
    /// Ground-truth responses as word ids; may be empty.
    pub references: Vec<Vec<usize>>,
    pub branches: Vec<usize>,
    pub z_samples: Vec<Vec<f64>>,
}

impl GenerationRecord {
    /// `context \t response_k` per generated response, in words.
    pub fn dump_lines(&self, vocab: &Vocabulary) -> Vec<String> {
        let ctx = vocab.decode(&self.context).join(" ");
        self.responses
            .iter()
            .map(|r| format!("{ctx}\t{}", vocab.decode(r).join(" ")))
            .collect()
    }
}

fn decode_from(model: &SegCvae, tape: &mut Tape, b: &Bound, x: crate::autodiff::Var, z: &Tensor) -> Result<Vec<usize>> {
    let d = model.config().latent_dim;
    if z.len() != d {
        return Err(Error::Shape(format!("z has {} entries, latent dim is {d}", z.len())));
    }
    let z = tape.constant(z.reshaped(&[1, d])?);
    let mut state = model.decoder_init(tape, b, z, x)?;
    let mut token = BOS;
    let mut out = Vec::new();
    while out.len() < model.config().max_clen {
        let (logits, next) = model.decode_step(tape, b, state, token)?;
        state = next;
        let row = tape.value(logits).data();
        token = row
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
        if token == EOS {
            break;
        }
        out.push(token);
    }
    Ok(out)
}

/// Argmax decoding from BOS under branch `branch` and latent `z`; stops at
/// EOS or after `max_clen` tokens.
pub fn greedy_decode(model: &SegCvae, context: &[usize], branch: usize, z: &Tensor) -> Result<Vec<usize>> {
    let m = model.config().num_semantics;
    if branch >= m {
        return Err(Error::Domain(format!("branch {branch} out of range for M={m}")));
    }
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, false);
    let enc = model.encode_context(&mut tape, &b, context, None)?;
    decode_from(model, &mut tape, &b, enc.semantics[branch], z)
}

/// `n` responses; response `k` uses branch `k mod M` and a fresh draw
/// from that branch's prior.
pub fn generate_n(model: &SegCvae, context: &[usize], n: usize, rng: &mut Rng) -> Result<GenerationRecord> {
    if n == 0 {
        return Err(Error::Domain("generate_n needs n >= 1".into()));
    }
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, false);
    let enc = model.encode_context(&mut tape, &b, context, None)?;
    let m = enc.semantics.len();
    let d = model.config().latent_dim;
    let mut record = GenerationRecord {
        context: context.to_vec(),
        responses: Vec::with_capacity(n),
        references: Vec::new(),
        branches: Vec::with_capacity(n),
        z_samples: Vec::with_capacity(n),
    };
    for k in 0..n {
        let branch = k % m;
        let x = enc.semantics[branch];
        let (mu, lv) = model.prior(&mut tape, &b, x)?;
        let (mu, lv) = (tape.value(mu).data().to_vec(), tape.value(lv).data().to_vec());
        let z: Vec<f64> = (0..d).map(|i| mu[i] + (0.5 * lv[i]).exp() * rng.normal()).collect();
        let response = decode_from(model, &mut tape, &b, x, &Tensor::new(&[d], z.clone())?)?;
        record.responses.push(response);
        record.branches.push(branch);
        record.z_samples.push(z);
    }
    Ok(record)
}
