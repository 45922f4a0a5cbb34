//! The segmentation-guided CVAE: trigger networks, prominent semantics,
//! latent heads and the gradient-blocked training objective.

use super::config::{Ablation, ModelConfig};
use super::norms::{san, scn, sdn, select_positive, total_loss, NormTerms};
use super::params::{uniform, xavier, Bound, ParamId, ParamStore};
use crate::autodiff::{
    gaussian_kl, gru_decode_step, Checkpoint, DType, gru_encode, gru_scan, reparameterize, GruVars, ProjectionVars, Rng, Tape, Tensor,
    Var,
};
use crate::corpus::{EncodedPair, Vocabulary, EOS, PAD, SPECIAL_TOKENS};
use crate::error::{Error, Result};

/// Log-variances from the latent heads are clamped to this range.
pub const LOGVAR_LIMIT: f64 = 10.0;

#[derive(Clone, Copy, Debug)]
pub struct GruIds {
    pub w_r: ParamId,
    pub w_u: ParamId,
    pub w_n: ParamId,
    pub u_r: ParamId,
    pub u_u: ParamId,
    pub u_n: ParamId,
    pub b_r: ParamId,
    pub b_u: ParamId,
    pub b_n: ParamId,
}

impl GruIds {
    pub fn bind(&self, b: &Bound) -> GruVars {
        GruVars {
            w_r: b[self.w_r],
            w_u: b[self.w_u],
            w_n: b[self.w_n],
            u_r: b[self.u_r],
            u_u: b[self.u_u],
            u_n: b[self.u_n],
            b_r: b[self.b_r],
            b_u: b[self.b_u],
            b_n: b[self.b_n],
        }
    }

    pub fn all(&self) -> [ParamId; 9] {
        [self.w_r, self.w_u, self.w_n, self.u_r, self.u_u, self.u_n, self.b_r, self.b_u, self.b_n]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriggerMode {
    /// Attends over context positions.
    Internal,
    /// Attends over the vocabulary.
    External,
}

/// Convolution + dense projection + Gumbel-Softmax word selector.
#[derive(Clone, Copy, Debug)]
pub struct TriggerNetwork {
    pub mode: TriggerMode,
    /// `[m, emb_dim, 1, chan]`
    pub kernel: ParamId,
    /// `[max_clen - m + 1, max_clen]` or `[max_clen - m + 1, vocab_size]`
    pub dense: ParamId,
}

impl TriggerNetwork {
    /// Pre-softmax scores `F_c · W`, shape `[chan, width]`, before masking.
    pub fn scores(&self, tape: &mut Tape, b: &Bound, context: Var) -> Result<Var> {
        let features = tape.conv_seq(context, b[self.kernel])?;
        tape.matmul(features, b[self.dense])
    }

    /// Soft selection `GS(F_c · W)` with `masked` columns excluded.
    pub fn select(
        &self,
        tape: &mut Tape,
        b: &Bound,
        context: Var,
        masked: &[bool],
        tau: f64,
        noise: Option<&mut Rng>,
    ) -> Result<Var> {
        let scores = self.scores(tape, b, context)?;
        let scores = tape.mask_cols(scores, masked)?;
        tape.gumbel_softmax(scores, tau, noise)
    }
}

#[derive(Clone, Debug)]
struct Layout {
    embedding: ParamId,
    enc: GruIds,
    dec: GruIds,
    out_w: ParamId,
    out_b: ParamId,
    init_w: ParamId,
    init_b: ParamId,
    recog_w: ParamId,
    recog_b: ParamId,
    prior_w: ParamId,
    prior_b: ParamId,
    is: Vec<TriggerNetwork>,
    eg: Vec<TriggerNetwork>,
}

enum Init {
    Xavier,
    Zeros,
    Uniform(f64),
}

impl Layout {
    fn build(
        cfg: &ModelConfig,
        store: &mut ParamStore,
        mut make: impl FnMut(&str, &[usize], Init) -> Result<Tensor>,
    ) -> Result<Self> {
        let (n, h, z, v) = (cfg.emb_dim, cfg.hidden_dim, cfg.latent_dim, cfg.vocab_size);
        let mut add = |store: &mut ParamStore, name: &str, shape: &[usize], init: Init| -> Result<ParamId> {
            let t = make(name, shape, init)?;
            if t.shape() != shape {
                return Err(Error::Shape(format!("{name}: expected {shape:?}, got {:?}", t.shape())));
            }
            Ok(store.add(name, t))
        };
        let gru = |add: &mut dyn FnMut(&mut ParamStore, &str, &[usize], Init) -> Result<ParamId>,
                   store: &mut ParamStore,
                   prefix: &str,
                   input: usize|
         -> Result<GruIds> {
            Ok(GruIds {
                w_r: add(store, &format!("{prefix}.w_r"), &[input, h], Init::Xavier)?,
                w_u: add(store, &format!("{prefix}.w_u"), &[input, h], Init::Xavier)?,
                w_n: add(store, &format!("{prefix}.w_n"), &[input, h], Init::Xavier)?,
                u_r: add(store, &format!("{prefix}.u_r"), &[h, h], Init::Xavier)?,
                u_u: add(store, &format!("{prefix}.u_u"), &[h, h], Init::Xavier)?,
                u_n: add(store, &format!("{prefix}.u_n"), &[h, h], Init::Xavier)?,
                b_r: add(store, &format!("{prefix}.b_r"), &[1, h], Init::Zeros)?,
                b_u: add(store, &format!("{prefix}.b_u"), &[1, h], Init::Zeros)?,
                b_n: add(store, &format!("{prefix}.b_n"), &[1, h], Init::Zeros)?,
            })
        };
        let embedding = add(store, "embedding", &[v, n], Init::Uniform(0.1))?;
        let enc = gru(&mut add, store, "enc", n)?;
        let dec = gru(&mut add, store, "dec", n)?;
        let out_w = add(store, "dec.out.w", &[h, v], Init::Xavier)?;
        let out_b = add(store, "dec.out.b", &[1, v], Init::Zeros)?;
        let init_w = add(store, "dec.init.w", &[z + h, h], Init::Xavier)?;
        let init_b = add(store, "dec.init.b", &[1, h], Init::Zeros)?;
        let recog_w = add(store, "recog.w", &[2 * h, 2 * z], Init::Xavier)?;
        let recog_b = add(store, "recog.b", &[1, 2 * z], Init::Zeros)?;
        let prior_w = add(store, "prior.w", &[h, 2 * z], Init::Xavier)?;
        let prior_b = add(store, "prior.b", &[1, 2 * z], Init::Zeros)?;
        let kscale = 1.0 / ((cfg.kernel_width * n) as f64).sqrt();
        let mut triggers = |mode: TriggerMode, store: &mut ParamStore| -> Result<Vec<TriggerNetwork>> {
            let (prefix, width) = match mode {
                TriggerMode::Internal => ("is", cfg.max_clen),
                TriggerMode::External => ("eg", v),
            };
            (0..cfg.num_semantics)
                .map(|i| {
                    Ok(TriggerNetwork {
                        mode,
                        kernel: add(
                            store,
                            &format!("{prefix}.{i}.kernel"),
                            &[cfg.kernel_width, n, 1, cfg.channels],
                            Init::Uniform(kscale),
                        )?,
                        dense: add(store, &format!("{prefix}.{i}.dense"), &[cfg.conv_len(), width], Init::Xavier)?,
                    })
                })
                .collect()
        };
        let is = triggers(TriggerMode::Internal, store)?;
        let eg = triggers(TriggerMode::External, store)?;
        Ok(Layout {
            embedding,
            enc,
            dec,
            out_w,
            out_b,
            init_w,
            init_b,
            recog_w,
            recog_b,
            prior_w,
            prior_b,
            is,
            eg,
        })
    }
}

/// Per-context outputs of the segmentation stage.
#[derive(Clone, Debug)]
pub struct ContextEncoding {
    /// Embedded padded context `[max_clen, emb_dim]`.
    pub embedded: Var,
    /// `enc(C)` `[1, hidden]`.
    pub enc_context: Var,
    /// `C_IS^i`, `[chan, emb_dim]` each; empty when IS is ablated.
    pub internal: Vec<Var>,
    /// `V_EG^i`, `[chan, emb_dim]` each; empty when EG is ablated.
    pub external: Vec<Var>,
    /// Prominent semantics `x_i`, `[1, hidden]` each.
    pub semantics: Vec<Var>,
    /// The `x_i` stacked into `[M, hidden]`.
    pub stacked: Var,
}

/// One branch's variational bound and its parts.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub elbo: Var,
    pub recon: Var,
    pub kl: Var,
    /// Teacher-forced decoder logits `[steps, vocab]`.
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct ExampleForward {
    pub context: ContextEncoding,
    pub response_enc: Var,
    pub branches: Vec<ElboTerms>,
    pub positive: usize,
}

/// Selections held fixed across evaluations of the batch objective.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Frozen {
    /// Positive branch per example.
    pub positives: Option<Vec<usize>>,
    /// SDN ground-truth rows.
    pub targets: Option<Tensor>,
}

impl Frozen {
    /// Everything `obj` selected.
    pub fn of(tape: &Tape, obj: &BatchObjective) -> Self {
        Self {
            positives: Some(obj.positives.clone()),
            targets: obj.targets.map(|v| tape.value(v).clone()),
        }
    }
}

/// Record of one batch objective evaluation.
#[derive(Clone, Debug)]
pub struct BatchObjective {
    /// `L_all`, to be maximized.
    pub objective: Var,
    /// Batch-mean positive-branch bound.
    pub elbo: Var,
    pub recon: f64,
    pub kl: f64,
    pub norms: NormTerms,
    pub positives: Vec<usize>,
    /// Ground-truth response representations `[B, hidden]` fed to SDN.
    pub targets: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct SegCvae {
    cfg: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl SegCvae {
    /// Fresh model; the embedding matrix is copied from `embedding`
    /// (`[vocab_size, emb_dim]`), everything else is randomly initialized.
    pub fn new(cfg: ModelConfig, embedding: &Tensor, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if embedding.shape() != [cfg.vocab_size, cfg.emb_dim] {
            return Err(Error::Shape(format!(
                "embedding {:?}, config wants [{}, {}]",
                embedding.shape(),
                cfg.vocab_size,
                cfg.emb_dim
            )));
        }
        let mut params = ParamStore::new();
        let layout = Layout::build(&cfg, &mut params, |name, shape, init| {
            Ok(match (name, init) {
                ("embedding", _) => embedding.clone(),
                (_, Init::Xavier) => xavier(shape[0], shape[1], rng),
                (_, Init::Zeros) => Tensor::zeros(shape),
                (_, Init::Uniform(a)) => uniform(shape, a, rng),
            })
        })?;
        Ok(Self { cfg, params, layout })
    }

    /// Model from a vocabulary built with the same `emb_dim`.
    pub fn for_vocab(cfg: ModelConfig, vocab: &Vocabulary, rng: &mut Rng) -> Result<Self> {
        Self::new(cfg, vocab.embedding(), rng)
    }

    /// Rebuilds a model from named tensors, e.g. a checkpoint.
    pub fn from_named(cfg: ModelConfig, mut lookup: impl FnMut(&str) -> Option<Tensor>) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::build(&cfg, &mut params, |name, _, _| {
            lookup(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        })?;
        Ok(Self { cfg, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn embedding_id(&self) -> ParamId {
        self.layout.embedding
    }

    pub fn internal_triggers(&self) -> &[TriggerNetwork] {
        &self.layout.is
    }

    pub fn external_triggers(&self) -> &[TriggerNetwork] {
        &self.layout.eg
    }

    /// Parameters used only by the IS and EG triggers of branch `i`.
    pub fn branch_params(&self, i: usize) -> Vec<ParamId> {
        let (a, b) = (self.layout.is[i], self.layout.eg[i]);
        vec![a.kernel, a.dense, b.kernel, b.dense]
    }

    /// Every trigger parameter across all branches.
    pub fn trigger_params(&self) -> Vec<ParamId> {
        (0..self.cfg.num_semantics).flat_map(|i| self.branch_params(i)).collect()
    }

    /// Latent heads, decoder and output projection.
    pub fn head_params(&self) -> Vec<ParamId> {
        let l = &self.layout;
        let mut ids = vec![l.out_w, l.out_b, l.init_w, l.init_b, l.recog_w, l.recog_b, l.prior_w, l.prior_b];
        ids.extend(l.dec.all());
        ids
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.layout.enc.all().to_vec()
    }

    /// Identifiers needed to rebuild the same architecture.
    pub fn recognition_ids(&self) -> (ParamId, ParamId) {
        (self.layout.recog_w, self.layout.recog_b)
    }

    pub fn prior_ids(&self) -> (ParamId, ParamId) {
        (self.layout.prior_w, self.layout.prior_b)
    }

    pub fn output_ids(&self) -> (ParamId, ParamId) {
        (self.layout.out_w, self.layout.out_b)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    pub fn encoder(&self, b: &Bound) -> GruVars {
        self.layout.enc.bind(b)
    }

    pub fn decoder(&self, b: &Bound) -> (GruVars, ProjectionVars) {
        (
            self.layout.dec.bind(b),
            ProjectionVars {
                weight: b[self.layout.out_w],
                bias: b[self.layout.out_b],
            },
        )
    }

    pub fn embed(&self, tape: &mut Tape, b: &Bound, ids: &[usize]) -> Result<Var> {
        tape.gather_rows(b[self.layout.embedding], ids)
    }

    /// `enc` over the embeddings of `ids` (no padding expected).
    pub fn encode_ids(&self, tape: &mut Tape, b: &Bound, ids: &[usize]) -> Result<Var> {
        let seq = self.embed(tape, b, ids)?;
        gru_encode(tape, &self.encoder(b), seq, None)
    }

    /// `C_IS^i = GS(F_c · W) · C` for every IS trigger. PAD positions
    /// (`keep == false`) are excluded from selection.
    pub fn internal_separation(
        &self,
        tape: &mut Tape,
        b: &Bound,
        context: Var,
        keep: &[bool],
        mut noise: Option<&mut Rng>,
    ) -> Result<Vec<Var>> {
        let masked: Vec<bool> = keep.iter().map(|k| !k).collect();
        self.layout
            .is
            .iter()
            .map(|t| {
                let probs = t.select(tape, b, context, &masked, self.cfg.tau, noise.as_deref_mut())?;
                tape.matmul(probs, context)
            })
            .collect()
    }

    /// Column mask hiding the special tokens from vocabulary selection.
    pub fn special_mask(&self) -> Vec<bool> {
        (0..self.cfg.vocab_size).map(|i| i < SPECIAL_TOKENS.len()).collect()
    }

    /// `V_EG^i = GS(F_c · W') · W_emb` for every EG trigger.
    pub fn external_guidance(
        &self,
        tape: &mut Tape,
        b: &Bound,
        context: Var,
        mut noise: Option<&mut Rng>,
    ) -> Result<Vec<Var>> {
        let masked = self.special_mask();
        let table = b[self.layout.embedding];
        self.layout
            .eg
            .iter()
            .map(|t| {
                let probs = t.select(tape, b, context, &masked, self.cfg.tau, noise.as_deref_mut())?;
                tape.matmul(probs, table)
            })
            .collect()
    }

    /// Segments a padded context into `M` prominent semantics
    /// `x_i = enc([C_IS^i ; V_EG^i])`. With both halves ablated every
    /// `x_i` is `enc(C)`.
    pub fn encode_context(
        &self,
        tape: &mut Tape,
        b: &Bound,
        context_ids: &[usize],
        mut noise: Option<&mut Rng>,
    ) -> Result<ContextEncoding> {
        if context_ids.len() != self.cfg.max_clen {
            return Err(Error::Shape(format!(
                "context has {} ids, max_clen is {}",
                context_ids.len(),
                self.cfg.max_clen
            )));
        }
        let keep: Vec<bool> = context_ids.iter().map(|&i| i != PAD).collect();
        let embedded = self.embed(tape, b, context_ids)?;
        let enc = self.encoder(b);
        let enc_context = gru_encode(tape, &enc, embedded, Some(&keep))?;
        let ab = self.cfg.ablation;
        let internal = if ab.no_is {
            Vec::new()
        } else {
            self.internal_separation(tape, b, embedded, &keep, noise.as_deref_mut())?
        };
        let external = if ab.no_eg {
            Vec::new()
        } else {
            self.external_guidance(tape, b, embedded, noise)?
        };
        let mut semantics = Vec::with_capacity(self.cfg.num_semantics);
        for i in 0..self.cfg.num_semantics {
            let parts: Vec<Var> = internal.get(i).into_iter().chain(external.get(i)).copied().collect();
            let x = if parts.is_empty() {
                enc_context
            } else {
                let seq = tape.concat_rows(&parts)?;
                gru_encode(tape, &enc, seq, None)?
            };
            semantics.push(x);
        }
        let stacked = tape.concat_rows(&semantics)?;
        Ok(ContextEncoding {
            embedded,
            enc_context,
            internal,
            external,
            semantics,
            stacked,
        })
    }

    fn gaussian_head(&self, tape: &mut Tape, input: Var, w: ParamId, bias: ParamId, b: &Bound) -> Result<(Var, Var)> {
        let d = self.cfg.latent_dim;
        let out = tape.matmul(input, b[w])?;
        let out = tape.add_row(out, b[bias])?;
        let mu = tape.slice_cols(out, 0, d)?;
        let lv = tape.slice_cols(out, d, 2 * d)?;
        let lv = tape.clamp(lv, -LOGVAR_LIMIT, LOGVAR_LIMIT);
        Ok((mu, lv))
    }

    /// `q(z | r_e, x)`: mean and log-variance, each `[1, latent]`.
    pub fn recognition(&self, tape: &mut Tape, b: &Bound, response_enc: Var, x: Var) -> Result<(Var, Var)> {
        let input = tape.concat_cols(&[response_enc, x])?;
        self.gaussian_head(tape, input, self.layout.recog_w, self.layout.recog_b, b)
    }

    /// `p(z | x)`.
    pub fn prior(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<(Var, Var)> {
        self.gaussian_head(tape, x, self.layout.prior_w, self.layout.prior_b, b)
    }

    /// Initial decoder state, an affine map of `z ⊕ x`.
    pub fn decoder_init(&self, tape: &mut Tape, b: &Bound, z: Var, x: Var) -> Result<Var> {
        let zx = tape.concat_cols(&[z, x])?;
        let h = tape.matmul(zx, b[self.layout.init_w])?;
        tape.add_row(h, b[self.layout.init_b])
    }

    /// Decoder logits `[steps, vocab]` under teacher forcing on a framed
    /// response (`BOS w.. EOS PAD..`), plus the target ids (`w.. EOS`).
    pub fn teacher_forced_logits(&self, tape: &mut Tape, b: &Bound, h0: Var, response: &[usize]) -> Result<(Var, Vec<usize>)> {
        let end = response
            .iter()
            .position(|&i| i == EOS)
            .ok_or_else(|| Error::Domain("response is not EOS-terminated".into()))?;
        if end == 0 {
            return Err(Error::Domain("response must start with BOS".into()));
        }
        let inputs = &response[..end];
        let targets = response[1..=end].to_vec();
        let (dec, out) = self.decoder(b);
        let seq = self.embed(tape, b, inputs)?;
        let states = gru_scan(tape, &dec, seq, Some(h0), None)?;
        let stacked = tape.concat_rows(&states)?;
        let logits = tape.matmul(stacked, out.weight)?;
        let logits = tape.add_row(logits, out.bias)?;
        Ok((logits, targets))
    }

    /// `Σ_t log p(target_t)` over the teacher-forced steps.
    pub fn reconstruction(&self, tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
        let v = tape.value(logits).cols();
        let logp = tape.log_softmax_rows(logits);
        let flat: Vec<usize> = targets.iter().enumerate().map(|(t, &id)| t * v + id).collect();
        let picked = tape.select(logp, &flat)?;
        Ok(tape.sum(picked))
    }

    /// `L(r, x) = recon - kl_weight * KL(q || p)` with `z` drawn from the
    /// recognition network.
    #[allow(clippy::too_many_arguments)]
    pub fn elbo(
        &self,
        tape: &mut Tape,
        b: &Bound,
        response: &[usize],
        response_enc: Var,
        x: Var,
        kl_weight: f64,
        rng: &mut Rng,
    ) -> Result<ElboTerms> {
        if !(0.0..=1.0).contains(&kl_weight) {
            return Err(Error::Domain(format!("kl weight {kl_weight} outside [0, 1]")));
        }
        let (mu_q, lv_q) = self.recognition(tape, b, response_enc, x)?;
        let (mu_p, lv_p) = self.prior(tape, b, x)?;
        let kl = gaussian_kl(tape, mu_q, lv_q, mu_p, lv_p)?;
        let z = reparameterize(tape, mu_q, lv_q, rng)?;
        let h0 = self.decoder_init(tape, b, z, x)?;
        let (logits, targets) = self.teacher_forced_logits(tape, b, h0, response)?;
        let recon = self.reconstruction(tape, logits, &targets)?;
        let elbo = if kl_weight == 0.0 {
            recon
        } else {
            let weighted = tape.scale(kl, kl_weight);
            tape.sub(recon, weighted)?
        };
        Ok(ElboTerms {
            elbo,
            recon,
            kl,
            logits,
        })
    }

    /// Encodes the probability-weighted embedding sequence implied by
    /// teacher-forced logits; differentiable stand-in for re-encoding a
    /// generated response.
    pub fn encode_expected(&self, tape: &mut Tape, b: &Bound, logits: Var) -> Result<Var> {
        let probs = tape.softmax_rows(logits);
        let soft = tape.matmul(probs, b[self.layout.embedding])?;
        gru_encode(tape, &self.encoder(b), soft, None)
    }

    /// Full forward pass for one pair: every branch's bound and the
    /// positive branch. When `gumbel` is set the trigger selections are
    /// perturbed with Gumbel noise from `rng`.
    pub fn forward_example(
        &self,
        tape: &mut Tape,
        b: &Bound,
        pair: &EncodedPair,
        kl_weight: f64,
        rng: &mut Rng,
        gumbel: bool,
    ) -> Result<ExampleForward> {
        let context = self.encode_context(tape, b, &pair.context, gumbel.then_some(&mut *rng))?;
        let words = pair.response_words();
        if words.is_empty() {
            return Err(Error::Domain("response has no words".into()));
        }
        let response_enc = self.encode_ids(tape, b, words)?;
        let branches = context
            .semantics
            .iter()
            .map(|&x| self.elbo(tape, b, &pair.response, response_enc, x, kl_weight, rng))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<f64> = branches.iter().map(|t| tape.scalar(t.elbo)).collect();
        let positive = select_positive(&values)?;
        Ok(ExampleForward {
            context,
            response_enc,
            branches,
            positive,
        })
    }

    /// `L_all` over a batch: mean positive-branch bound minus `lambda` times
    /// the enabled norms. Only the positive branch of each pair enters.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_objective(
        &self,
        tape: &mut Tape,
        b: &Bound,
        batch: &[EncodedPair],
        kl_weight: f64,
        lambda: f64,
        rng: &mut Rng,
        gumbel: bool,
    ) -> Result<BatchObjective> {
        self.batch_objective_frozen(tape, b, batch, kl_weight, lambda, rng, gumbel, &Frozen::default())
    }

    /// [`Self::batch_objective`] with the branch selection and the SDN
    /// ground-truth side taken from `frozen` where given. Neither carries
    /// gradient, so with both fixed this is the function whose derivative
    /// the tape reports.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_objective_frozen(
        &self,
        tape: &mut Tape,
        b: &Bound,
        batch: &[EncodedPair],
        kl_weight: f64,
        lambda: f64,
        rng: &mut Rng,
        gumbel: bool,
        frozen: &Frozen,
    ) -> Result<BatchObjective> {
        if let Some(p) = &frozen.positives {
            if p.len() != batch.len() || p.iter().any(|&i| i >= self.cfg.num_semantics) {
                return Err(Error::Domain(format!("frozen positives {p:?} do not fit the batch")));
            }
        }
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let ab = self.cfg.ablation;
        let mut elbos = Vec::with_capacity(batch.len());
        let mut sans = Vec::new();
        let mut scns = Vec::new();
        let mut gts = Vec::new();
        let mut gens = Vec::new();
        let (mut recon, mut kl) = (0.0, 0.0);
        let mut positives = Vec::with_capacity(batch.len());
        for (k, pair) in batch.iter().enumerate() {
            let mut fwd = self.forward_example(tape, b, pair, kl_weight, rng, gumbel)?;
            if let Some(p) = &frozen.positives {
                fwd.positive = p[k];
            }
            let best = fwd.branches[fwd.positive];
            elbos.push(best.elbo);
            recon += tape.scalar(best.recon);
            kl += tape.scalar(best.kl);
            positives.push(fwd.positive);
            if !ab.no_san {
                sans.push(san(tape, fwd.context.stacked)?);
            }
            if !ab.no_scn {
                match scn(tape, fwd.context.enc_context, &fwd.context.semantics) {
                    Ok(v) => scns.push(v),
                    Err(Error::DegenerateVector(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            if !ab.no_sdn && batch.len() >= 2 {
                gts.push(fwd.response_enc);
                gens.push(self.encode_expected(tape, b, best.logits)?);
            }
        }
        let n = batch.len() as f64;
        let mean_of = |tape: &mut Tape, parts: &[Var]| -> Result<Option<Var>> {
            if parts.is_empty() {
                return Ok(None);
            }
            let s = tape.add_all(parts)?;
            Ok(Some(tape.scale(s, 1.0 / parts.len() as f64)))
        };
        let elbo = mean_of(tape, &elbos)?.expect("non-empty batch");
        let mut norms = NormTerms {
            san: mean_of(tape, &sans)?,
            scn: mean_of(tape, &scns)?,
            sdn: None,
        };
        let mut r_gt = None;
        if !gens.is_empty() {
            let gt = match &frozen.targets {
                Some(t) => tape.constant(t.clone()),
                None => tape.concat_rows(&gts)?,
            };
            let r_gen = tape.concat_rows(&gens)?;
            norms.sdn = Some(sdn(tape, gt, r_gen)?);
            r_gt = Some(gt);
        }
        let objective = total_loss(tape, elbo, norms, lambda)?;
        Ok(BatchObjective {
            objective,
            elbo,
            recon: recon / n,
            kl: kl / n,
            norms,
            positives,
            targets: r_gt,
        })
    }

    /// Writes the architecture into `ckpt` meta and every parameter as an
    /// `f64` array under `prefix`.
    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint, prefix: &str) -> Result<()> {
        let c = &self.cfg;
        ckpt.set_meta("model.max_clen", c.max_clen)?;
        ckpt.set_meta("model.emb_dim", c.emb_dim)?;
        ckpt.set_meta("model.hidden_dim", c.hidden_dim)?;
        ckpt.set_meta("model.latent_dim", c.latent_dim)?;
        ckpt.set_meta("model.kernel_width", c.kernel_width)?;
        ckpt.set_meta("model.channels", c.channels)?;
        ckpt.set_meta("model.num_semantics", c.num_semantics)?;
        ckpt.set_meta("model.tau", c.tau)?;
        ckpt.set_meta("model.vocab_size", c.vocab_size)?;
        ckpt.set_meta("model.ablation", c.ablation.label())?;
        for (_, name, t) in self.params.iter() {
            ckpt.push(&format!("{prefix}{name}"), DType::F64, t.clone())?;
        }
        Ok(())
    }

    pub fn read_config(ckpt: &Checkpoint) -> Result<ModelConfig> {
        Ok(ModelConfig {
            max_clen: ckpt.meta_parse("model.max_clen")?,
            emb_dim: ckpt.meta_parse("model.emb_dim")?,
            hidden_dim: ckpt.meta_parse("model.hidden_dim")?,
            latent_dim: ckpt.meta_parse("model.latent_dim")?,
            kernel_width: ckpt.meta_parse("model.kernel_width")?,
            channels: ckpt.meta_parse("model.channels")?,
            num_semantics: ckpt.meta_parse("model.num_semantics")?,
            tau: ckpt.meta_parse("model.tau")?,
            vocab_size: ckpt.meta_parse("model.vocab_size")?,
            ablation: Ablation::from_label(ckpt.meta("model.ablation").unwrap_or("none"))?,
        })
    }

    pub fn read_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let cfg = Self::read_config(ckpt)?;
        Self::from_named(cfg, |name| ckpt.get(&format!("{prefix}{name}")).cloned())
    }

    /// Advances the decoder one token; returns `(logits [1, vocab], state)`.
    pub fn decode_step(&self, tape: &mut Tape, b: &Bound, state: Var, token: usize) -> Result<(Var, Var)> {
        let (dec, out) = self.decoder(b);
        let input = self.embed(tape, b, &[token])?;
        gru_decode_step(tape, &dec, &out, state, input)
    }
}
