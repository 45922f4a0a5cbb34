use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::adam::Adam;
use super::schedule::{kl_anneal, lambda_schedule, LambdaSchedule, TrainingConfig};
use crate::autodiff::{Checkpoint, Rng, RngState, Tape};
use crate::corpus::EncodedPair;
use crate::error::{Error, Result};
use crate::model::SegCvae;

const PARAM_PREFIX: &str = "param.";
/// Offset separating the trainer's random stream from initialization.
const STREAM_OFFSET: u64 = 0x5eed;

/// Per-step diagnostics. Disabled norms report 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainStats {
    pub step: u64,
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    pub san: f64,
    pub scn: f64,
    pub sdn: f64,
    pub loss: f64,
    pub lambda: f64,
    pub kl_weight: f64,
    pub grad_norm: f64,
}

impl TrainStats {
    pub fn log_line(&self) -> String {
        format!(
            "step={} elbo={:.6} recon={:.6} kl={:.6} san={:.6} scn={:.6} sdn={:.6} loss={:.6}",
            self.step, self.elbo, self.recon, self.kl, self.san, self.scn, self.sdn, self.loss
        )
    }
}

/// Model, optimizer and random state of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: SegCvae,
    cfg: TrainingConfig,
    adam: Adam,
    rng: Rng,
    step: u64,
    best_ppl: Option<f64>,
}

impl Trainer {
    pub fn new(model: SegCvae, cfg: TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(model.params(), cfg.learning_rate, cfg.grad_clip);
        let rng = Rng::new(cfg.seed.wrapping_add(STREAM_OFFSET));
        Ok(Self {
            model,
            cfg,
            adam,
            rng,
            step: 0,
            best_ppl: None,
        })
    }

    pub fn model(&self) -> &SegCvae {
        &self.model
    }

    pub fn into_model(self) -> SegCvae {
        self.model
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.cfg
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn best_ppl(&self) -> Option<f64> {
        self.best_ppl
    }

    pub fn rng_state(&self) -> RngState {
        self.rng.state()
    }

    /// One gradient update on `batch` at the current schedule weights.
    pub fn train_step(&mut self, batch: &[EncodedPair]) -> Result<TrainStats> {
        let kl_weight = kl_anneal(self.step, &self.cfg);
        let lambda = lambda_schedule(self.step, &self.cfg);
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, true);
        let obj = self
            .model
            .batch_objective(&mut tape, &bound, batch, kl_weight, lambda, &mut self.rng, true)?;
        let loss = tape.neg(obj.objective);
        let loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { batch: self.step as usize });
        }
        let grads = tape.backward(loss)?;
        let per_param: Vec<Option<&[f64]>> = bound.vars().iter().map(|v| grads.get(*v)).collect();
        let grad_norm = self.adam.step(self.model.params_mut(), &per_param)?;
        let norm = |v: Option<crate::autodiff::Var>| v.map_or(0.0, |v| tape.scalar(v));
        let stats = TrainStats {
            step: self.step,
            elbo: tape.scalar(obj.elbo),
            recon: obj.recon,
            kl: obj.kl,
            san: norm(obj.norms.san),
            scn: norm(obj.norms.scn),
            sdn: norm(obj.norms.sdn),
            loss: loss_value,
            lambda,
            kl_weight,
            grad_norm,
        };
        self.step += 1;
        Ok(stats)
    }

    /// One shuffled pass over `data` in batches of `batch_size`; the final
    /// batch may be short.
    pub fn run_epoch(&mut self, data: &[EncodedPair], mut on_step: impl FnMut(&TrainStats)) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyCorpus("training split is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        self.rng.shuffle(&mut order);
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<EncodedPair> = chunk.iter().map(|&i| data[i].clone()).collect();
            let stats = self.train_step(&batch)?;
            on_step(&stats);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        self.model.write_checkpoint(&mut ck, PARAM_PREFIX)?;
        self.adam.write_checkpoint(&mut ck, self.model.params())?;
        let rs = self.rng.state();
        ck.set_meta("train.step", self.step)?;
        ck.set_meta("train.rng_seed", rs.seed)?;
        ck.set_meta("train.rng_word_pos", rs.word_pos)?;
        ck.set_meta("train.best_ppl", self.best_ppl.map_or("none".to_string(), |p| p.to_string()))?;
        let c = &self.cfg;
        ck.set_meta("train.learning_rate", c.learning_rate)?;
        ck.set_meta("train.batch_size", c.batch_size)?;
        ck.set_meta("train.epochs", c.epochs)?;
        ck.set_meta("train.kl_anneal_steps", c.kl_anneal_steps)?;
        ck.set_meta("train.seed", c.seed)?;
        ck.set_meta("train.grad_clip", c.grad_clip)?;
        match c.lambda {
            LambdaSchedule::Linear { snorm_step } => ck.set_meta("train.snorm_step", snorm_step)?,
            LambdaSchedule::Constant(v) => ck.set_meta("train.lambda_constant", v)?,
        }
        Ok(ck)
    }

    /// Restores a run saved by [`Self::to_checkpoint`]; `cfg` supplies the
    /// schedule and optimizer settings.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let model = load_model(ck)?;
        let adam = Adam::read_checkpoint(ck, model.params(), cfg.learning_rate, cfg.grad_clip)?;
        let rng = Rng::from_state(RngState {
            seed: ck.meta_parse("train.rng_seed")?,
            word_pos: ck.meta_parse("train.rng_word_pos")?,
        });
        let best_ppl = match ck.meta("train.best_ppl") {
            None | Some("none") => None,
            Some(_) => Some(ck.meta_parse("train.best_ppl")?),
        };
        Ok(Self {
            model,
            cfg,
            adam,
            rng,
            step: ck.meta_parse("train.step")?,
            best_ppl,
        })
    }
}

/// Model parameters stored in a trainer checkpoint.
pub fn load_model(ck: &Checkpoint) -> Result<SegCvae> {
    SegCvae::read_checkpoint(ck, PARAM_PREFIX)
}

/// Negative log-likelihood of one response and the number of scored
/// tokens (words plus EOS). Noise is off, `z` is the prior mean, and the
/// branch is the one whose prior-side bound `log p(r | z, x_i)` is largest.
pub fn score_response(model: &SegCvae, tape: &mut Tape, bound: &crate::model::Bound, pair: &EncodedPair) -> Result<(f64, usize)> {
    let enc = model.encode_context(tape, bound, &pair.context, None)?;
    let mut best: Option<(f64, usize)> = None;
    for &x in &enc.semantics {
        let (mu, _) = model.prior(tape, bound, x)?;
        let h0 = model.decoder_init(tape, bound, mu, x)?;
        let (logits, targets) = model.teacher_forced_logits(tape, bound, h0, &pair.response)?;
        let recon = model.reconstruction(tape, logits, &targets)?;
        let ll = tape.scalar(recon);
        if best.is_none_or(|(b, _)| ll > b) {
            best = Some((ll, targets.len()));
        }
    }
    let (ll, n) = best.expect("at least one branch");
    Ok((-ll, n))
}

/// `exp` of the mean per-token negative log-likelihood over `data`.
/// Examples are scored in parallel and summed in input order.
pub fn perplexity(model: &SegCvae, data: &[EncodedPair]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus("perplexity needs at least one pair".into()));
    }
    let parts: Vec<Result<Vec<(f64, usize)>>> = data
        .par_chunks(16)
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len());
            for pair in chunk {
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape, false);
                out.push(score_response(model, &mut tape, &bound, pair)?);
            }
            Ok(out)
        })
        .collect();
    let (mut nll, mut tokens) = (0.0, 0usize);
    for part in parts {
        for (l, n) in part? {
            nll += l;
            tokens += n;
        }
    }
    Ok((nll / tokens as f64).exp())
}

/// Remembers the epoch with the lowest validation perplexity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BestTracker {
    best: Option<(usize, f64)>,
}

impl BestTracker {
    /// Returns true when `ppl` is a new minimum.
    pub fn observe(&mut self, epoch: usize, ppl: f64) -> bool {
        match self.best {
            Some((_, b)) if ppl >= b => false,
            _ => {
                self.best = Some((epoch, ppl));
                true
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub log: Vec<String>,
    pub valid_ppl: Vec<f64>,
    pub best_epoch: usize,
    pub best_ppl: f64,
    /// Where the best state was written, when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

pub const TRAIN_LOG: &str = "train.log";
pub const VALID_LOG: &str = "valid.log";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

fn append(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

/// Trains for `epochs`, scoring `valid` after each epoch (numbered from 1)
/// and saving the full state whenever validation perplexity reaches a new
/// minimum. With `out_dir` set the step log goes to `train.log`, epoch
/// perplexities to `valid.log`, and the final state to `last.ckpt`.
pub fn fit(trainer: &mut Trainer, train: &[EncodedPair], valid: &[EncodedPair], out_dir: Option<&Path>) -> Result<FitReport> {
    if trainer.cfg.epochs == 0 {
        return Err(Error::Domain("epochs must be positive".into()));
    }
    if train.is_empty() || valid.is_empty() {
        return Err(Error::EmptyCorpus("training and validation splits must be nonempty".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut tracker = BestTracker::default();
    let mut log = Vec::new();
    let mut valid_ppl = Vec::new();
    let mut checkpoint = None;
    for epoch in 1..=trainer.cfg.epochs {
        let mut lines = Vec::new();
        trainer.run_epoch(train, |s| lines.push(s.log_line()))?;
        let ppl = perplexity(&trainer.model, valid)?;
        valid_ppl.push(ppl);
        if let Some(dir) = out_dir {
            append(&dir.join(TRAIN_LOG), &lines)?;
            append(&dir.join(VALID_LOG), &[format!("epoch={epoch} ppl={ppl:.6}")])?;
        }
        log.extend(lines);
        if tracker.observe(epoch, ppl) {
            trainer.best_ppl = Some(ppl);
            if let Some(dir) = out_dir {
                let path = dir.join(BEST_CHECKPOINT);
                trainer.to_checkpoint()?.save(&path)?;
                checkpoint = Some(path);
            }
        }
    }
    if let Some(dir) = out_dir {
        trainer.to_checkpoint()?.save(&dir.join(LAST_CHECKPOINT))?;
    }
    let (best_epoch, best_ppl) = tracker.best().expect("at least one epoch");
    Ok(FitReport {
        log,
        valid_ppl,
        best_epoch,
        best_ppl,
        checkpoint,
    })
}
