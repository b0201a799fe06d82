//! Forward graph construction: every method appends ops to a caller-owned
//! tape, so the same code path serves training (with gradients), gradient
//! checking and inference (parameters bound as constants).

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Sample;
use crate::retrieval::Doc;
use crate::tensor::{Tape, Var};
use crate::text::{
    assemble_input, assemble_pair, segment_review, substitute_placeholders, tokenize,
    SubstituteDirection, TokenSeq, Vocab, BOS, EOS, UNK,
};

use super::{ModelConfig, ModelError, Parameters};

/// Additive mask value for disallowed attention positions. A large finite
/// constant rather than -inf so every tape value stays finite.
const MASK: f64 = -1e9;

/// The knowledge sources feeding one encoder pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    pub review: TokenSeq,
    pub title: TokenSeq,
    pub store: TokenSeq,
    /// Assembled property pairs (key ++ [PAIR] ++ value), already capped.
    pub properties: Vec<TokenSeq>,
    /// Assembled recalled pairs (review ++ [PAIR] ++ response), already capped.
    pub recalled: Vec<TokenSeq>,
}

/// A sample converted to model inputs plus its teacher-forcing target.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub sources: SourceSet,
    /// Target response tokens, placeholder-encoded, without [BOS]/[EOS].
    pub target: TokenSeq,
}

/// Convert a raw sample plus its recalled docs into model inputs.
pub fn prepare_sample(
    sample: &Sample,
    recalled_docs: &[&Doc],
    vocab: &Vocab,
    cfg: &ModelConfig,
) -> Result<PreparedSample, ModelError> {
    let review = vocab.encode(&tokenize(&sample.review));
    let title = vocab.encode(&tokenize(&sample.title));
    let store = vocab.encode(&tokenize(&sample.store_name));
    let properties = sample
        .properties
        .iter()
        .take(cfg.max_properties)
        .map(|(k, v)| {
            assemble_pair(&vocab.encode(&tokenize(k)), &vocab.encode(&tokenize(v)))
                .truncated(cfg.pair_cap)
        })
        .collect();
    let recalled = recalled_docs
        .iter()
        .take(cfg.recalled)
        .map(|d| {
            assemble_pair(&vocab.encode(&d.review_tokens), &vocab.encode(&d.response_tokens))
                .truncated(cfg.pair_cap)
        })
        .collect();
    let response = vocab.encode(&tokenize(&sample.response));
    let target = substitute_placeholders(&response, &title, &store, SubstituteDirection::Encode)?
        .truncated(cfg.max_gen - 1);
    Ok(PreparedSample {
        sources: SourceSet {
            review,
            title,
            store,
            properties,
            recalled,
        },
        target,
    })
}

/// Training-time source dropout: each optional source is removed
/// independently with its configured probability. The review never drops.
/// Exactly four rng draws are consumed regardless of outcome.
pub fn source_dropout(sources: &SourceSet, probs: [f64; 4], rng: &mut ChaCha8Rng) -> SourceSet {
    let mut out = sources.clone();
    let draws: [f64; 4] = [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
    if draws[0] < probs[0] {
        out.properties.clear();
    }
    if draws[1] < probs[1] {
        out.recalled.clear();
    }
    if draws[2] < probs[2] {
        out.title = TokenSeq::empty();
    }
    if draws[3] < probs[3] {
        out.store = TokenSeq::empty();
    }
    out
}

/// Encoder memory plus everything the copy mechanism needs.
pub struct EncoderOutput {
    /// Fused memory, `[l_x + kept_properties + kept_pairs, D]`.
    pub mem: Var,
    /// Rows of `mem` covered by the copy mechanism (the text block).
    pub l_x: usize,
    /// [SENT] marker rows within the text block.
    pub sent_indices: Vec<usize>,
    /// Extended-vocab id of each copy position.
    pub copy_ids: Vec<usize>,
    pub copy_surfaces: Vec<String>,
    /// Out-of-vocabulary surfaces; surface i has id `vocab_size + i`.
    pub ext_vocab: Vec<String>,
    ext_lookup: HashMap<String, usize>,
    vocab_size: usize,
}

impl EncoderOutput {
    /// Width of the extended-vocabulary distribution.
    pub fn ext_size(&self) -> usize {
        self.vocab_size + self.ext_vocab.len()
    }

    /// Extended id for an OOV surface copiable from the text block.
    pub fn ext_id(&self, surface: &str) -> Option<usize> {
        self.ext_lookup.get(surface).copied()
    }

    /// Map a (base id, surface) gold token to its loss target id.
    pub fn gold_id(&self, base_id: usize, surface: &str) -> usize {
        if base_id != UNK {
            base_id
        } else {
            self.ext_id(surface).unwrap_or(UNK)
        }
    }

    /// Resolve a generated id back to a printable surface.
    pub fn surface_of<'a>(&'a self, id: usize, vocab: &'a Vocab) -> Option<&'a str> {
        if id < self.vocab_size {
            vocab.token(id)
        } else {
            self.ext_vocab.get(id - self.vocab_size).map(|s| s.as_str())
        }
    }
}

/// Per-step distributions produced by one decoder forward pass. All are
/// `[T, ·]` matrices; row t describes step t.
pub struct StepOutputs {
    /// Mixture distribution over the extended vocabulary.
    pub p: Var,
    pub p_v: Var,
    pub p_c: Var,
    /// Aspect attention weights over the [SENT] rows.
    pub lambda: Var,
    /// Copy attention weights over the text block.
    pub beta: Var,
    /// Generation gate, `[T, 1]`.
    pub eps: Var,
}

/// Parameters bound onto a tape.
pub struct Net {
    cfg: ModelConfig,
    vars: BTreeMap<String, Var>,
    dropout_rng: RefCell<Option<ChaCha8Rng>>,
}

impl Net {
    /// Bind every parameter group. With `trainable` the tape tracks
    /// gradients for them; otherwise they are recorded as constants.
    pub fn bind(tape: &mut Tape, params: &Parameters, trainable: bool) -> Net {
        let mut vars = BTreeMap::new();
        for (name, tensor) in params.groups() {
            let var = if trainable {
                tape.leaf(tensor)
            } else {
                tape.constant(tensor.shape.clone(), tensor.data.clone())
            };
            vars.insert(name.clone(), var);
        }
        Net {
            cfg: params.config.clone(),
            vars,
            dropout_rng: RefCell::new(None),
        }
    }

    /// Enable regular dropout (training mode); no-op when the configured
    /// rate is zero.
    pub fn with_dropout(self, rng: ChaCha8Rng) -> Net {
        *self.dropout_rng.borrow_mut() = Some(rng);
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter group {name}"))
    }

    /// Inverted-dropout mask applied in training mode; identity otherwise.
    fn dropout(&self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let rate = self.cfg.dropout;
        if rate <= 0.0 {
            return Ok(x);
        }
        let mut borrow = self.dropout_rng.borrow_mut();
        let Some(rng) = borrow.as_mut() else {
            return Ok(x);
        };
        let shape = tape.shape(x).to_vec();
        let numel: usize = shape.iter().product();
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..numel)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = tape.constant(shape, mask);
        Ok(tape.mul(x, mask)?)
    }

    /// Token + (optional) position embeddings for a run of base-vocab ids.
    fn embed(&self, tape: &mut Tape, ids: &[usize], positions: bool) -> Result<Var, ModelError> {
        let tok = self.var("embed.tok");
        let mut x = tape.gather_rows(tok, ids)?;
        if positions {
            let pos_ids: Vec<usize> = (0..ids.len()).collect();
            let pos = tape.gather_rows(self.var("embed.pos"), &pos_ids)?;
            x = tape.add(x, pos)?;
        }
        self.dropout(tape, x)
    }

    /// Multi-head scaled dot-product attention; `prefix` selects the
    /// projection weights, `causal` masks future key positions.
    fn attention(
        &self,
        tape: &mut Tape,
        queries_in: Var,
        keys_in: Var,
        prefix: &str,
        causal: bool,
    ) -> Result<Var, ModelError> {
        let d = self.cfg.hidden;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let q = tape.matmul(queries_in, self.var(&format!("{prefix}.wq")))?;
        let k = tape.matmul(keys_in, self.var(&format!("{prefix}.wk")))?;
        let v = tape.matmul(keys_in, self.var(&format!("{prefix}.wv")))?;
        let t_n = tape.shape(q)[0];
        let s_n = tape.shape(k)[0];
        let mask = if causal {
            let mut m = vec![0.0; t_n * s_n];
            for t in 0..t_n {
                for s in 0..s_n {
                    if s > t {
                        m[t * s_n + s] = MASK;
                    }
                }
            }
            Some(tape.constant(vec![t_n, s_n], m))
        } else {
            None
        };
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, (h + 1) * dh)?;
            let kh = tape.slice_cols(k, h * dh, (h + 1) * dh)?;
            let vh = tape.slice_cols(v, h * dh, (h + 1) * dh)?;
            let kt = tape.transpose(kh)?;
            let mut scores = tape.matmul(qh, kt)?;
            scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
            if let Some(m) = mask {
                scores = tape.add(scores, m)?;
            }
            let weights = tape.softmax_rows(scores)?;
            head_outs.push(tape.matmul(weights, vh)?);
        }
        let cat = tape.concat_cols(&head_outs)?;
        Ok(tape.matmul(cat, self.var(&format!("{prefix}.wo")))?)
    }

    fn feed_forward(&self, tape: &mut Tape, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let mut h = tape.matmul(x, self.var(&format!("{prefix}.ff.w1")))?;
        h = tape.add_row(h, self.var(&format!("{prefix}.ff.b1")))?;
        h = tape.relu(h)?;
        h = self.dropout(tape, h)?;
        h = tape.matmul(h, self.var(&format!("{prefix}.ff.w2")))?;
        Ok(tape.add_row(h, self.var(&format!("{prefix}.ff.b2")))?)
    }

    fn norm(&self, tape: &mut Tape, x: Var, key: &str) -> Result<Var, ModelError> {
        Ok(tape.layer_norm(x, self.var(&format!("{key}.g")), self.var(&format!("{key}.b")))?)
    }

    /// Pre-norm encoder layer: x + attn(ln(x)); x + ff(ln(x)).
    fn encoder_layer(&self, tape: &mut Tape, x: Var, i: usize) -> Result<Var, ModelError> {
        let p = format!("enc{i}");
        let n1 = self.norm(tape, x, &format!("{p}.ln1"))?;
        let a = self.attention(tape, n1, n1, &format!("{p}.attn"), false)?;
        let x = tape.add(x, a)?;
        let n2 = self.norm(tape, x, &format!("{p}.ln2"))?;
        let f = self.feed_forward(tape, n2, &p)?;
        Ok(tape.add(x, f)?)
    }

    /// Pre-norm decoder layer: causal self-attention, cross-attention over
    /// the encoder memory, feed-forward; all residual.
    fn decoder_layer(&self, tape: &mut Tape, x: Var, mem: Var, i: usize) -> Result<Var, ModelError> {
        let p = format!("dec{i}");
        let n1 = self.norm(tape, x, &format!("{p}.ln1"))?;
        let a = self.attention(tape, n1, n1, &format!("{p}.self"), true)?;
        let x = tape.add(x, a)?;
        let n2 = self.norm(tape, x, &format!("{p}.ln2"))?;
        let c = self.attention(tape, n2, mem, &format!("{p}.cross"), false)?;
        let x = tape.add(x, c)?;
        let n3 = self.norm(tape, x, &format!("{p}.ln3"))?;
        let f = self.feed_forward(tape, n3, &p)?;
        Ok(tape.add(x, f)?)
    }

    /// Embed the concatenated text block and run the first encoder layer.
    pub fn encode_text(&self, tape: &mut Tape, x_hat: &TokenSeq) -> Result<Var, ModelError> {
        let max = self.cfg.max_input_len();
        if x_hat.len() > max {
            return Err(ModelError::OverLength {
                len: x_hat.len(),
                max,
            });
        }
        let x = self.embed(tape, &x_hat.ids, true)?;
        self.encoder_layer(tape, x, 0)
    }

    /// Pool each knowledge pair to one row: embedding only (no positions —
    /// pairs form a set), column-wise max. Returns the stacked rows and the
    /// number of empty pairs skipped.
    pub fn encode_pairs(
        &self,
        tape: &mut Tape,
        pairs: &[TokenSeq],
    ) -> Result<(Option<Var>, usize), ModelError> {
        let mut rows = Vec::new();
        let mut skipped = 0;
        for pair in pairs {
            let pair = pair.truncated(self.cfg.pair_cap);
            if pair.is_empty() {
                skipped += 1;
                continue;
            }
            let e = self.embed(tape, &pair.ids, false)?;
            rows.push(tape.maxpool_rows(e)?);
        }
        if rows.is_empty() {
            Ok((None, skipped))
        } else {
            Ok((Some(tape.concat_rows(&rows)?), skipped))
        }
    }

    /// Add type embeddings, concatenate the blocks and run the remaining
    /// encoder layers. `x_hat` provides copy surfaces and marker positions.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        x_block: Var,
        p_block: Option<Var>,
        r_block: Option<Var>,
        x_hat: &TokenSeq,
        sent_indices: &[usize],
    ) -> Result<EncoderOutput, ModelError> {
        let l_x = tape.shape(x_block)[0];
        debug_assert_eq!(l_x, x_hat.len());
        let mut blocks = Vec::new();
        let xb = tape.add_row(x_block, self.var("type.0"))?;
        blocks.push(xb);
        if let Some(p) = p_block {
            blocks.push(tape.add_row(p, self.var("type.1"))?);
        }
        if let Some(r) = r_block {
            blocks.push(tape.add_row(r, self.var("type.2"))?);
        }
        let mut m = tape.concat_rows(&blocks)?;
        for i in 1..self.cfg.enc_layers {
            m = self.encoder_layer(tape, m, i)?;
        }
        let mem = self.norm(tape, m, "enc.out")?;

        let vocab_size = self.cfg.vocab_size;
        let mut ext_vocab = Vec::new();
        let mut ext_lookup = HashMap::new();
        let mut copy_ids = Vec::with_capacity(l_x);
        for i in 0..l_x {
            let (id, surface) = (x_hat.ids[i], &x_hat.surfaces[i]);
            if id != UNK {
                copy_ids.push(id);
            } else {
                let next = vocab_size + ext_vocab.len();
                let ext = *ext_lookup.entry(surface.clone()).or_insert_with(|| {
                    ext_vocab.push(surface.clone());
                    next
                });
                copy_ids.push(ext);
            }
        }
        Ok(EncoderOutput {
            mem,
            l_x,
            sent_indices: sent_indices.to_vec(),
            copy_ids,
            copy_surfaces: x_hat.surfaces.clone(),
            ext_vocab,
            ext_lookup,
            vocab_size,
        })
    }

    /// Full encoder pass over a source set.
    pub fn encode_sources(
        &self,
        tape: &mut Tape,
        sources: &SourceSet,
    ) -> Result<EncoderOutput, ModelError> {
        let seg = segment_review(&sources.review);
        let (x_hat, sent_indices) = assemble_input(
            &seg,
            &sources.title,
            &sources.store,
            (self.cfg.max_review, self.cfg.max_title, self.cfg.max_store),
        );
        let x_block = self.encode_text(tape, &x_hat)?;
        let (p_block, _) = self.encode_pairs(tape, &sources.properties)?;
        let (r_block, _) = self.encode_pairs(tape, &sources.recalled)?;
        self.fuse(tape, x_block, p_block, r_block, &x_hat, &sent_indices)
    }

    /// Run the decoder stack over a teacher-forced prefix of base-vocab ids
    /// (extended ids must be mapped to [UNK] by the caller). Returns the
    /// `[T, D]` hidden states.
    pub fn decode_hidden(
        &self,
        tape: &mut Tape,
        enc: &EncoderOutput,
        input_ids: &[usize],
    ) -> Result<Var, ModelError> {
        let max = self.cfg.max_gen + 1;
        if input_ids.len() > max {
            return Err(ModelError::PrefixTooLong {
                len: input_ids.len(),
                max,
            });
        }
        let mut x = self.embed(tape, input_ids, true)?;
        for i in 0..self.cfg.dec_layers {
            x = self.decoder_layer(tape, x, enc.mem, i)?;
        }
        self.norm(tape, x, "dec.out")
    }

    /// Aspect attention over the [SENT] rows: additive energies, softmax,
    /// convex combination. Returns (contexts `[T, D]`, weights `[T, S]`).
    pub fn aspect_attend(
        &self,
        tape: &mut Tape,
        h: Var,
        enc: &EncoderOutput,
    ) -> Result<(Var, Var), ModelError> {
        if enc.sent_indices.is_empty() {
            return Err(ModelError::NoAspects);
        }
        let aspect_rows = tape.gather_rows(enc.mem, &enc.sent_indices)?;
        let keys = tape.matmul(aspect_rows, self.var("aspect.w1"))?;
        let queries = tape.matmul(h, self.var("aspect.w2"))?;
        let e = tape.additive_scores(keys, queries, self.var("aspect.b1"), self.var("aspect.v"))?;
        let lambda = tape.softmax_rows(e)?;
        let ctx = tape.matmul(lambda, aspect_rows)?;
        Ok((ctx, lambda))
    }

    /// Generation distribution over the base vocabulary.
    pub fn vocab_dist(&self, tape: &mut Tape, h: Var, ctx: Var) -> Result<Var, ModelError> {
        let a = tape.matmul(h, self.var("head.w3"))?;
        let b = tape.matmul(ctx, self.var("head.w4"))?;
        let mut z = tape.add(a, b)?;
        z = tape.add_row(z, self.var("head.b2"))?;
        let mut logits = tape.matmul(z, self.var("head.w5"))?;
        logits = tape.add_row(logits, self.var("head.b3"))?;
        Ok(tape.softmax_rows(logits)?)
    }

    /// Copy distribution over the extended vocabulary plus the raw copy
    /// attention weights over the text block.
    pub fn copy_dist(
        &self,
        tape: &mut Tape,
        h: Var,
        enc: &EncoderOutput,
    ) -> Result<(Var, Var), ModelError> {
        let copy_rows = tape.slice_rows(enc.mem, 0, enc.l_x)?;
        let keys = tape.matmul(copy_rows, self.var("copy.w6"))?;
        let queries = tape.matmul(h, self.var("copy.w7"))?;
        let e = tape.additive_scores(keys, queries, self.var("copy.b6"), self.var("copy.v"))?;
        let beta = tape.softmax_rows(e)?;
        let p_c = tape.scatter_cols(beta, &enc.copy_ids, enc.ext_size())?;
        Ok((p_c, beta))
    }

    /// Generation gate, `[T, 1]`, strictly inside (0, 1).
    pub fn gate(&self, tape: &mut Tape, h: Var) -> Result<Var, ModelError> {
        let z = tape.matmul(h, self.var("gate.w"))?;
        let z = tape.add_row(z, self.var("gate.b"))?;
        Ok(tape.sigmoid(z)?)
    }

    /// Convex mixture of generation and copy distributions over the
    /// extended vocabulary: P = eps * P_v + (1 - eps) * P_c.
    pub fn mix(&self, tape: &mut Tape, p_v: Var, p_c: Var, eps: Var) -> Result<Var, ModelError> {
        let width = tape.shape(p_c)[1];
        let padded = tape.pad_cols(p_v, width)?;
        let gen_term = tape.mul_col(padded, eps)?;
        let neg = tape.scale(eps, -1.0)?;
        let inv = tape.add_scalar(neg, 1.0)?;
        let copy_term = tape.mul_col(p_c, inv)?;
        Ok(tape.add(gen_term, copy_term)?)
    }

    /// One teacher-forced pass: decoder stack, aspect attention, output
    /// head, copy mechanism and mixture, for every prefix position at once.
    pub fn forward(
        &self,
        tape: &mut Tape,
        enc: &EncoderOutput,
        input_ids: &[usize],
    ) -> Result<StepOutputs, ModelError> {
        let h = self.decode_hidden(tape, enc, input_ids)?;
        let (ctx, lambda) = self.aspect_attend(tape, h, enc)?;
        let p_v = self.vocab_dist(tape, h, ctx)?;
        let (p_c, beta) = self.copy_dist(tape, h, enc)?;
        let eps = self.gate(tape, h)?;
        let p = self.mix(tape, p_v, p_c, eps)?;
        Ok(StepOutputs {
            p,
            p_v,
            p_c,
            lambda,
            beta,
            eps,
        })
    }

    /// Summed negative log-likelihood of the gold continuation under
    /// teacher forcing, and the number of target tokens. Gold tokens
    /// outside the base vocabulary use their extended id when copiable
    /// from the text block, else [UNK].
    pub fn token_loss_sum(
        &self,
        tape: &mut Tape,
        enc: &EncoderOutput,
        target: &TokenSeq,
    ) -> Result<(Var, usize), ModelError> {
        let (input_ids, gold_ids) = teacher_io(enc, target);
        let out = self.forward(tape, enc, &input_ids)?;
        let picked = tape.gather_per_row(out.p, &gold_ids)?;
        let lp = tape.log(picked)?;
        let s = tape.sum(lp)?;
        let nll = tape.scale(s, -1.0)?;
        Ok((nll, gold_ids.len()))
    }
}

/// Teacher-forcing io: decoder input `[BOS] ++ y` (base ids, ext -> [UNK])
/// and gold ids `y ++ [EOS]` (extended where copiable).
pub(super) fn teacher_io(enc: &EncoderOutput, target: &TokenSeq) -> (Vec<usize>, Vec<usize>) {
    let mut input_ids = Vec::with_capacity(target.len() + 1);
    input_ids.push(BOS);
    input_ids.extend_from_slice(&target.ids);
    let mut gold_ids = Vec::with_capacity(target.len() + 1);
    for i in 0..target.len() {
        gold_ids.push(enc.gold_id(target.ids[i], &target.surfaces[i]));
    }
    gold_ids.push(EOS);
    (input_ids, gold_ids)
}
