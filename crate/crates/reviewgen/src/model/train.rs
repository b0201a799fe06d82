//! Teacher-forced training, accuracy measurement and the finite-difference
//! gradient checker.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::dataset::Sample;
use crate::retrieval::{Doc, InvertedIndex, Query};
use crate::tensor::{finite_diff_grad, group_relative_error, AdamState, Tape, Tensor, TensorError};
use crate::text::{tokenize, Vocab};
use crate::util::stream_rng;

use super::net::{prepare_sample, source_dropout, teacher_io, Net, PreparedSample};
use super::{ModelConfig, ModelError, Parameters, TrainConfig};

/// Optional knobs for a training run.
#[derive(Debug, Default)]
pub struct TrainOptions {
    /// Continue from previously trained parameters (step counter resumes).
    pub start: Option<Parameters>,
    /// Disable source dropout (ablation runs).
    pub no_source_dropout: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: Parameters,
    /// Mean batch loss per completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Optimizer steps taken in this run.
    pub steps: u64,
}

/// Retrieve the recalled docs for one sample. Leakage is prevented by the
/// index's identical-review exclusion, which also removes the sample itself
/// when it is part of the pool.
fn recall_docs<'a>(
    sample: &Sample,
    index: &'a InvertedIndex,
    m: usize,
) -> Vec<&'a Doc> {
    let query = Query::new(
        tokenize(&sample.review),
        tokenize(&sample.title),
        sample.store_id.clone(),
        sample.subcategory_id.clone(),
        m,
    );
    index.retrieve(&query)
}

/// Prepare every sample: retrieval (when an index is given and m > 0)
/// followed by tokenization and assembly.
pub fn prepare_all(
    samples: &[Sample],
    index: Option<&InvertedIndex>,
    vocab: &Vocab,
    cfg: &ModelConfig,
) -> Result<Vec<PreparedSample>, ModelError> {
    samples
        .iter()
        .map(|s| {
            let docs = match index {
                Some(index) if cfg.recalled > 0 => recall_docs(s, index, cfg.recalled),
                _ => Vec::new(),
            };
            prepare_sample(s, &docs, vocab, cfg)
        })
        .collect()
}

/// Train on one split. Deterministic for a fixed (config, seed): sample
/// order, source dropout and initialization all come from named sub-streams
/// of the model seed.
pub fn train(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    samples: &[Sample],
    index: &InvertedIndex,
    vocab: &Vocab,
    opts: TrainOptions,
) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    tcfg.validate()?;
    if samples.is_empty() {
        return Err(ModelError::NoTrainingData);
    }
    let mut params = match opts.start {
        Some(p) => {
            if p.config != *cfg {
                return Err(ModelError::ParamMismatch(
                    "resume parameters were trained under a different config".to_string(),
                ));
            }
            p
        }
        None => Parameters::init(cfg, &mut stream_rng(cfg.seed, "init"))?,
    };

    let prepared = prepare_all(samples, Some(index), vocab, cfg)?;
    let n_batches = samples.len().div_ceil(tcfg.batch) as u64;
    let mut planned = tcfg.epochs as u64 * n_batches;
    if tcfg.max_steps > 0 {
        planned = planned.min(tcfg.max_steps);
    }
    // Warmup ramps over the whole schedule, including already-taken steps
    // when resuming.
    let schedule_total = params.step + planned;
    let mut adam: BTreeMap<String, AdamState> = params
        .groups()
        .map(|(name, t)| {
            let mut st = AdamState::new(t.data.len(), tcfg.lr, tcfg.warmup, schedule_total);
            st.step = params.step;
            (name.clone(), st)
        })
        .collect();

    let sd_probs = if opts.no_source_dropout {
        [0.0; 4]
    } else {
        cfg.sd_probs
    };
    let mut sd_rng = stream_rng(cfg.seed, "sd");
    let mut order_rng = stream_rng(cfg.seed, "order");
    let group_names = params.group_names();
    let mut epoch_losses = Vec::new();
    let mut steps_taken = 0u64;

    'epochs: for _epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut order_rng);
        let mut batch_losses = Vec::new();
        for chunk in order.chunks(tcfg.batch) {
            let mut tape = Tape::new();
            let mut net = Net::bind(&mut tape, &params, true);
            if cfg.dropout > 0.0 {
                net = net.with_dropout(stream_rng(cfg.seed, &format!("dropout{}", params.step)));
            }
            let mut total: Option<crate::tensor::Var> = None;
            let mut token_count = 0usize;
            for &i in chunk {
                let sources = source_dropout(&prepared[i].sources, sd_probs, &mut sd_rng);
                let enc = net.encode_sources(&mut tape, &sources)?;
                let (nll, cnt) = net.token_loss_sum(&mut tape, &enc, &prepared[i].target)?;
                token_count += cnt;
                total = Some(match total {
                    Some(t) => tape.add(t, nll)?,
                    None => nll,
                });
            }
            let total = total.expect("non-empty batch");
            let loss = tape.scale(total, 1.0 / token_count as f64)?;
            tape.backward(loss)?;

            let mut grads: Vec<(String, Vec<f64>)> = Vec::with_capacity(group_names.len());
            let mut sq_norm = 0.0;
            for name in &group_names {
                let g = match tape.grad(net.var(name)) {
                    Some(g) => g.to_vec(),
                    // Groups untouched this batch (e.g. a type embedding
                    // whose block was fully dropped) get zero gradients.
                    None => vec![0.0; params.get(name).data.len()],
                };
                sq_norm += g.iter().map(|x| x * x).sum::<f64>();
                grads.push((name.clone(), g));
            }
            let norm = sq_norm.sqrt();
            if tcfg.clip > 0.0 && norm > tcfg.clip {
                let s = tcfg.clip / norm;
                for (_, g) in grads.iter_mut() {
                    for x in g.iter_mut() {
                        *x *= s;
                    }
                }
            }
            for (name, g) in &grads {
                adam.get_mut(name)
                    .expect("adam state per group")
                    .step(params.get_mut(name), g)?;
            }
            params.step += 1;
            steps_taken += 1;
            batch_losses.push(tape.data(loss)[0]);
            if tcfg.max_steps > 0 && steps_taken >= tcfg.max_steps {
                let mean = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
                epoch_losses.push(mean);
                break 'epochs;
            }
        }
        let mean = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        epoch_losses.push(mean);
        if tcfg.target_loss > 0.0 && mean <= tcfg.target_loss {
            break;
        }
    }
    Ok(TrainOutcome {
        params,
        epoch_losses,
        steps: steps_taken,
    })
}

/// Fraction of teacher-forced steps whose argmax over the mixture
/// distribution equals the gold token (extended ids included).
pub fn teacher_forced_accuracy(
    params: &Parameters,
    prepared: &[PreparedSample],
) -> Result<f64, ModelError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for prep in prepared {
        let mut tape = Tape::new();
        let net = Net::bind(&mut tape, params, false);
        let enc = net.encode_sources(&mut tape, &prep.sources)?;
        let (input_ids, gold_ids) = teacher_io(&enc, &prep.target);
        let out = net.forward(&mut tape, &enc, &input_ids)?;
        let p = tape.data(out.p);
        let width = enc.ext_size();
        for (t, &gold) in gold_ids.iter().enumerate() {
            let row = &p[t * width..(t + 1) * width];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            if argmax == gold {
                hits += 1;
            }
            total += 1;
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}

/// Per-group result of the gradient check.
#[derive(Debug)]
pub struct GradCheckReport {
    /// (group name, max relative error) in stable group order.
    pub groups: Vec<(String, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.groups.iter().all(|(_, e)| e.is_finite() && *e <= self.tolerance)
    }
}

/// Fixed two-sample fixture exercising every model path: multi-fragment
/// reviews, properties, recalled pairs and out-of-vocabulary surfaces.
fn gradcheck_fixture(cfg: &ModelConfig) -> Result<(Vocab, Vec<PreparedSample>), ModelError> {
    let samples = [
        Sample {
            review: "honestly the strap broke fast , and it smells weird .".to_string(),
            response: "dear buyer , we replace straps free .".to_string(),
            title: "sturdy satchel".to_string(),
            store_name: "quorvex outlet".to_string(),
            properties: vec![("strap".to_string(), "steel".to_string())],
            store_id: "s0".to_string(),
            subcategory_id: "c0".to_string(),
        },
        Sample {
            review: "sadly the color fades fast .".to_string(),
            response: "our dye is certified , truly .".to_string(),
            title: "bright scarf".to_string(),
            store_name: "quorvex outlet".to_string(),
            properties: vec![("dye".to_string(), "fixed".to_string())],
            store_id: "s0".to_string(),
            subcategory_id: "c0".to_string(),
        },
    ];
    let pool = vec![
        Doc {
            doc_id: 0,
            review_tokens: tokenize("the strap snapped"),
            response_tokens: tokenize("straps are replaced free"),
            title_tokens: tokenize("satchel"),
            store_id: "s0".to_string(),
            subcategory_id: "c0".to_string(),
        },
        Doc {
            doc_id: 1,
            review_tokens: tokenize("color washed out"),
            response_tokens: tokenize("certified dye holds color"),
            title_tokens: tokenize("scarf"),
            store_id: "s0".to_string(),
            subcategory_id: "c0".to_string(),
        },
    ];
    let corpus: Vec<String> = samples
        .iter()
        .flat_map(|s| [s.review.clone(), s.response.clone(), s.title.clone()])
        .collect();
    // A capped vocabulary leaves rarer tokens out-of-vocabulary, so the
    // extended-vocab copy path carries gradient too.
    let vocab = Vocab::build(corpus, cfg.vocab_size)?;
    let docs: Vec<&Doc> = pool.iter().collect();
    let prepared = samples
        .iter()
        .map(|s| prepare_sample(s, &docs[..cfg.recalled.min(docs.len())], &vocab, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((vocab, prepared))
}

/// Batch loss value under fixed inputs; used as the scalar function the
/// finite-difference oracle probes.
fn loss_value(params: &Parameters, prepared: &[PreparedSample]) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let net = Net::bind(&mut tape, params, false);
    let mut sum = 0.0;
    let mut count = 0usize;
    for prep in prepared {
        let enc = net.encode_sources(&mut tape, &prep.sources)?;
        let (nll, cnt) = net.token_loss_sum(&mut tape, &enc, &prep.target)?;
        sum += tape.data(nll)[0];
        count += cnt;
    }
    Ok(sum / count as f64)
}

/// Finite-difference steps tried when checking a parameter group.
///
/// The quotient's accuracy is step-dependent in opposite directions, and no
/// single step serves every coordinate. Groups with tiny gradient norms
/// (some attention-score projections sit near 1e-7 while the loss is around
/// ln(vocab)) need a large step or f64 roundoff (~ eps * |loss| / h) swamps
/// the signal. Coordinates feeding a ReLU whose preactivation lies within
/// the perturbation of zero need a small step, or the quotient straddles
/// the kink and measures a mixture of the two slopes. So each coordinate is
/// scored against the closest quotient among these steps: where quotients
/// at different steps disagree with each other the difference oracle itself
/// is unreliable, while a wrong analytic gradient disagrees at every step.
const GRADCHECK_STEPS: [f64; 4] = [1e-5, 1e-6, 1e-4, 1e-3];

/// Compare analytical gradients of the batch loss against central finite
/// differences, group by group (see [`GRADCHECK_STEPS`]).
pub fn gradcheck(cfg: &ModelConfig, tolerance: f64) -> Result<GradCheckReport, ModelError> {
    gradcheck_groups(cfg, tolerance, None)
}

/// As [`gradcheck`], optionally restricted to a subset of group names.
pub fn gradcheck_groups(
    cfg: &ModelConfig,
    tolerance: f64,
    only: Option<&[&str]>,
) -> Result<GradCheckReport, ModelError> {
    cfg.validate()?;
    let (_vocab, prepared) = gradcheck_fixture(cfg)?;
    let params = Parameters::init(cfg, &mut stream_rng(cfg.seed, "init"))?;

    // Analytic pass: one tape over the whole batch.
    let mut tape = Tape::new();
    let net = Net::bind(&mut tape, &params, true);
    let mut total: Option<crate::tensor::Var> = None;
    let mut count = 0usize;
    for prep in &prepared {
        let enc = net.encode_sources(&mut tape, &prep.sources)?;
        let (nll, cnt) = net.token_loss_sum(&mut tape, &enc, &prep.target)?;
        count += cnt;
        total = Some(match total {
            Some(t) => tape.add(t, nll)?,
            None => nll,
        });
    }
    let loss = tape.scale(total.expect("fixture is non-empty"), 1.0 / count as f64)?;
    tape.backward(loss)?;

    let mut groups = Vec::new();
    for name in params.group_names() {
        if let Some(only) = only {
            if !only.contains(&name.as_str()) {
                continue;
            }
        }
        let analytic = tape
            .grad(net.var(&name))
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; params.get(&name).data.len()]);
        let mut probe_params = params.clone();
        // Per-coordinate closest quotient over the step ladder; stop early
        // once the group already meets the tolerance (the common case after
        // the first, smallest step).
        let mut best: Option<Vec<f64>> = None;
        for h in GRADCHECK_STEPS {
            let numeric = finite_diff_grad(
                |t: &Tensor| {
                    probe_params.set(&name, t.clone());
                    loss_value(&probe_params, &prepared)
                        .map_err(|_| TensorError::NonFinite { op: "gradcheck" })
                },
                params.get(&name),
                h,
            )?;
            best = Some(match best {
                None => numeric.data,
                Some(prev) => prev
                    .iter()
                    .zip(&numeric.data)
                    .zip(&analytic)
                    .map(|((&p, &n), &a)| if (n - a).abs() < (p - a).abs() { n } else { p })
                    .collect(),
            });
            if group_relative_error(&analytic, best.as_ref().unwrap()) <= tolerance {
                break;
            }
        }
        let numeric = best.expect("at least one step");
        groups.push((name, group_relative_error(&analytic, &numeric)));
    }
    Ok(GradCheckReport { groups, tolerance })
}


