//! Acceptance suite: one test per acceptance criterion, each printing a
//! single `criterion N (...): PASS|FAIL` verdict line (visible with
//! `cargo test --test acceptance -- --nocapture`).
//!
//! The heavier criteria (3 and 7) train real models and together take a few
//! minutes on one CPU core; their runtime bounds are asserted alongside the
//! quality gates.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::time::Instant;

use rand::Rng;

use reviewgen::dataset::{split, synth_corpus, to_docs, Sample};
use reviewgen::metrics::{bleu, distinct_n, rouge_l, rouge_n};
use reviewgen::model::{
    generate_greedy, gradcheck, prepare_all, teacher_forced_accuracy, train, ModelConfig, Net,
    Parameters, SourceSet, TrainConfig, TrainOptions,
};
use reviewgen::retrieval::{Doc, InvertedIndex, Query};
use reviewgen::tensor::Tape;
use reviewgen::text::{segment_review, tokenize, Vocab};
use reviewgen::util::stream_rng;

/// Print the per-criterion verdict line, then enforce it.
fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n} ({name}): {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn fixture_vocab() -> Vocab {
    let corpus = vec![
        "the strap broke fast and it smells weird good thing".to_string(),
        "dear buyer we replace straps free color fades dye certified".to_string(),
        "sturdy satchel bright scarf honestly sadly truly , . our is".to_string(),
    ];
    Vocab::build(corpus, 64).unwrap()
}

fn fixture_sources(vocab: &Vocab) -> SourceSet {
    SourceSet {
        review: vocab.encode_str("the strap broke fast , and it smells weird ."),
        title: vocab.encode_str("sturdy satchel"),
        store: vocab.encode_str("good thing"),
        properties: vec![vocab.encode_str("strap [PAIR] steel")],
        recalled: vec![
            vocab.encode_str("strap broke [PAIR] we replace straps free"),
            vocab.encode_str("color fades [PAIR] dye certified"),
        ],
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient fidelity on the micro configuration.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_fidelity() {
    let start = Instant::now();
    let report = gradcheck(&ModelConfig::micro(), 1e-4).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    for (group, err) in &report.groups {
        println!("  {group:<24} rel_err {err:.3e}");
    }
    let ok = report.pass() && elapsed < 120.0;
    verdict(
        1,
        "gradient fidelity",
        ok,
        &format!(
            "max relative error {:.3e} over {} parameter groups (tolerance 1e-4), {:.1}s (< 120s)",
            report.max_rel_err(),
            report.groups.len(),
            elapsed
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: distribution invariants over 1,000 random decode steps.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_distribution_invariants() {
    let vocab = fixture_vocab();
    let cfg = ModelConfig {
        vocab_size: vocab.size(),
        ..ModelConfig::micro()
    };
    let params = Parameters::init(&cfg, &mut stream_rng(2, "acceptance-init")).unwrap();
    let mut rng = stream_rng(2, "acceptance-decode");

    let mut rows_checked = 0usize;
    while rows_checked < 1000 {
        let mut tape = Tape::new();
        let net = Net::bind(&mut tape, &params, false);
        let enc = net.encode_sources(&mut tape, &fixture_sources(&vocab)).unwrap();
        let len = rng.gen_range(1..=8usize);
        let mut ids = vec![reviewgen::text::BOS];
        for _ in 1..len {
            ids.push(rng.gen_range(0..cfg.vocab_size));
        }
        let out = net.forward(&mut tape, &enc, &ids).unwrap();
        for (var, width) in [
            (out.lambda, enc.sent_indices.len()),
            (out.beta, enc.l_x),
            (out.p_v, cfg.vocab_size),
            (out.p_c, enc.ext_size()),
            (out.p, enc.ext_size()),
        ] {
            for row in tape.data(var).chunks(width) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-9, "row sums to {sum}");
                assert!(row.iter().all(|&x| x >= 0.0), "negative probability entry");
            }
        }
        for &e in tape.data(out.eps) {
            assert!(e > 0.0 && e < 1.0, "gate value {e} outside (0,1)");
        }
        rows_checked += ids.len();
    }
    verdict(
        2,
        "distribution invariants",
        true,
        &format!(
            "{rows_checked} decode steps: lambda/beta/P_v/P_c/P sum to 1 ± 1e-9, \
             no negative entries, gate in (0,1)"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: overfit a 32-sample corpus at the desk configuration.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_overfit_reproduction() {
    let start = Instant::now();
    let samples = synth_corpus(5, 32, 3, 2);
    let vocab = Vocab::build(
        samples.iter().flat_map(|s| {
            [
                s.review.clone(),
                s.response.clone(),
                s.title.clone(),
                s.store_name.clone(),
            ]
        }),
        512,
    )
    .unwrap();
    let index = InvertedIndex::build(to_docs(&samples)).unwrap();
    let cfg = ModelConfig {
        vocab_size: vocab.size(),
        seed: 5,
        ..ModelConfig::desk()
    };
    // Source dropout is an anti-memorization regularizer; this criterion
    // demands memorization, so it is disabled for the overfit run.
    let tcfg = TrainConfig {
        lr: 1e-3,
        batch: 8,
        epochs: 500,
        max_steps: 2000,
        target_loss: 0.01,
        ..TrainConfig::default()
    };
    let outcome = train(
        &cfg,
        &tcfg,
        &samples,
        &index,
        &vocab,
        TrainOptions {
            no_source_dropout: true,
            ..TrainOptions::default()
        },
    )
    .unwrap();

    let prepared = prepare_all(&samples, Some(&index), &vocab, &cfg).unwrap();
    let tf_acc = teacher_forced_accuracy(&outcome.params, &prepared).unwrap();
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for (s, p) in samples.iter().zip(&prepared) {
        cands.push(
            generate_greedy(&outcome.params, &p.sources, &vocab)
                .unwrap()
                .surfaces,
        );
        refs.push(tokenize(&s.response));
    }
    let corpus_bleu = bleu(&cands, &refs).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let ok = outcome.steps <= 2000
        && tf_acc >= 0.95
        && corpus_bleu >= 90.0
        && elapsed < 900.0;
    verdict(
        3,
        "overfit reproduction",
        ok,
        &format!(
            "{} steps (≤ 2000), teacher-forced accuracy {:.4} (≥ 0.95), \
             greedy corpus BLEU {corpus_bleu:.2} (≥ 90.0), {:.0}s (< 900s)",
            outcome.steps, tf_acc, elapsed
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: metric oracles and a brute-force LCS cross-check.
// ---------------------------------------------------------------------------

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Exponential-time LCS, written independently of the metrics module.
fn brute_lcs(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        0
    } else if a[a.len() - 1] == b[b.len() - 1] {
        1 + brute_lcs(&a[..a.len() - 1], &b[..b.len() - 1])
    } else {
        brute_lcs(&a[..a.len() - 1], b).max(brute_lcs(a, &b[..b.len() - 1]))
    }
}

#[test]
fn criterion_4_metric_oracles() {
    let tol = 1e-9;

    // BLEU: perfect match, disjoint, clipped counting, hand-computed values.
    let c = vec![toks("a b c d")];
    assert!((bleu(&c, &c).unwrap() - 100.0).abs() <= tol);
    assert_eq!(bleu(&[toks("x y z w")], &[toks("a b c d")]).unwrap(), 0.0);
    // "the the the" vs "the cat": clipped unigram overlap is 1 of 3, and
    // full BLEU is 0 because no bigram matches (no smoothing).
    assert_eq!(bleu(&[toks("the the the")], &[toks("the cat")]).unwrap(), 0.0);
    let hand = 100.0
        * (0.25 * (4f64 / 5.0).ln()
            + 0.25 * (3f64 / 4.0).ln()
            + 0.25 * (2f64 / 3.0).ln()
            + 0.25 * 0.5f64.ln())
        .exp();
    assert!((bleu(&[toks("a b c d e")], &[toks("a b c d f")]).unwrap() - hand).abs() <= tol);
    let bp = (1.0 - 5.0 / 4.0f64).exp();
    assert!((bleu(&[toks("a b c d")], &[toks("a b c d e")]).unwrap() - 100.0 * bp).abs() <= tol);

    // ROUGE-1: recall / precision / F1 on a hand-derived pair.
    let (r, p, f) = rouge_n(&toks("a b c"), &toks("a c"), 1);
    assert!((r - 1.0).abs() <= tol && (p - 2.0 / 3.0).abs() <= tol && (f - 0.8).abs() <= tol);
    assert_eq!(rouge_n(&toks("x y"), &toks("a b"), 1), (0.0, 0.0, 0.0));
    assert_eq!(rouge_n(&toks("a b c"), &toks("a b c"), 2), (1.0, 1.0, 1.0));

    // ROUGE-L: LCS("the cat", "the cat sat") = 2.
    let (r, p, f) = rouge_l(&toks("the cat"), &toks("the cat sat"));
    assert!((r - 2.0 / 3.0).abs() <= tol && (p - 1.0).abs() <= tol && (f - 0.8).abs() <= tol);

    // Distinct-n.
    assert!((distinct_n(&toks("a a b"), 1) - 2.0 / 3.0).abs() <= tol);
    assert!((distinct_n(&toks("a b c"), 1) - 1.0).abs() <= tol);
    assert_eq!(distinct_n(&toks("a b"), 3), 0.0);

    // ROUGE-L vs a brute-force LCS oracle on 200 random instances: the
    // reported recall and precision must equal lcs/len exactly (same
    // division, so bitwise equality is required).
    let alphabet = ["a", "b", "c", "d", "e"];
    let mut rng = stream_rng(4, "acceptance-lcs");
    for _ in 0..200 {
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<String> {
            (0..n)
                .map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string())
                .collect()
        };
        let cand_len = rng.gen_range(0..=10);
        let cand = draw(&mut rng, cand_len);
        let ref_len = rng.gen_range(0..=10);
        let reference = draw(&mut rng, ref_len);
        let lcs = brute_lcs(&cand, &reference);
        let (r, p, _) = rouge_l(&cand, &reference);
        if cand.is_empty() || reference.is_empty() {
            assert_eq!((r, p), (0.0, 0.0));
        } else {
            assert_eq!(r, lcs as f64 / reference.len() as f64);
            assert_eq!(p, lcs as f64 / cand.len() as f64);
        }
    }
    verdict(
        4,
        "metric oracles",
        true,
        "BLEU/ROUGE-1/2/L/distinct-n match hand-derived values to 1e-9; \
         ROUGE-L matches brute-force LCS on 200 random instances exactly",
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: segmentation reproduces the reference sentence exactly.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_segmentation_fidelity() {
    let sentence = "It’s oily after putting it on for at most two hours, and it smells weird.";
    let vocab = Vocab::build([sentence.to_string()], 64).unwrap();
    let seg = segment_review(&vocab.encode(&tokenize(sentence)));
    let got: Vec<&str> = seg.tokens.surfaces.iter().map(String::as_str).collect();
    let want = vec![
        "[SENT]", "It", "’", "s", "oily", "after", "putting", "it", "on", "for", "at", "most",
        "two", "hours", ",", "[SENT]", "and", "it", "smells", "weird", ".",
    ];
    let ok = got == want && seg.sent_indices == vec![0, 15];
    verdict(
        5,
        "segmentation fidelity",
        ok,
        &format!(
            "marked sequence {:?} with fragment markers at {:?}",
            got.join(" "),
            seg.sent_indices
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: retrieval equals brute-force score-and-sort.
// ---------------------------------------------------------------------------

/// Independent weighted-field BM25 over a raw doc pool, mirroring the
/// published formula rather than the index internals.
struct BruteScorer {
    docs: Vec<Doc>,
    review_avg: f64,
    title_avg: f64,
}

impl BruteScorer {
    fn new(docs: Vec<Doc>) -> Self {
        let n = docs.len().max(1) as f64;
        let review_avg = docs.iter().map(|d| d.review_tokens.len() as f64).sum::<f64>() / n;
        let title_avg = docs.iter().map(|d| d.title_tokens.len() as f64).sum::<f64>() / n;
        BruteScorer {
            docs,
            review_avg,
            title_avg,
        }
    }

    fn field(&self, query: &[String], field: impl Fn(&Doc) -> &[String], avg: f64, doc: &Doc) -> f64 {
        const K1: f64 = 1.2;
        const B: f64 = 0.75;
        let n = self.docs.len() as f64;
        let len = field(doc).len() as f64;
        let norm = if avg > 0.0 {
            K1 * (1.0 - B + B * len / avg)
        } else {
            K1
        };
        let unique: BTreeSet<&str> = query.iter().map(String::as_str).collect();
        let mut score = 0.0;
        for term in unique {
            let tf = field(doc).iter().filter(|t| t.as_str() == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = self
                .docs
                .iter()
                .filter(|d| field(d).iter().any(|t| t == term))
                .count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (K1 + 1.0) / (tf + norm);
        }
        score
    }

    fn score(&self, query: &Query, doc: &Doc) -> f64 {
        query.review_boost
            * self.field(&query.review_tokens, |d| &d.review_tokens, self.review_avg, doc)
            + query.title_boost
                * self.field(&query.title_tokens, |d| &d.title_tokens, self.title_avg, doc)
    }

    fn retrieve(&self, query: &Query) -> Vec<u64> {
        let mut scored: Vec<(u64, f64)> = self
            .docs
            .iter()
            .filter(|d| d.store_id == query.store_id)
            .filter(|d| d.subcategory_id == query.subcategory_id)
            .filter(|d| Some(d.doc_id) != query.exclude_doc_id)
            .filter(|d| d.review_tokens != query.review_tokens)
            .map(|d| (d.doc_id, self.score(query, d)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.into_iter().take(query.m).map(|(id, _)| id).collect()
    }
}

#[test]
fn criterion_6_retrieval_equivalence() {
    let words = [
        "strap", "broke", "color", "fades", "zipper", "stuck", "smells", "weird", "size", "small",
        "fast", "slow", "cheap", "soft", "torn", "bright", "dull", "loose", "tight", "new",
    ];
    let mut rng = stream_rng(6, "acceptance-retrieval");
    let mut queries_run = 0usize;
    for pool_size in [3usize, 17, 48, 150, 400, 1000] {
        let docs: Vec<Doc> = (0..pool_size)
            .map(|i| {
                let draw = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<String> {
                    (0..n)
                        .map(|_| words[rng.gen_range(0..words.len())].to_string())
                        .collect()
                };
                let review_len = rng.gen_range(1..=10);
                let review = draw(&mut rng, review_len);
                let response_len = rng.gen_range(1..=8);
                let response = draw(&mut rng, response_len);
                let title_len = rng.gen_range(1..=4);
                let title = draw(&mut rng, title_len);
                Doc {
                    doc_id: i as u64,
                    review_tokens: review,
                    response_tokens: response,
                    title_tokens: title,
                    store_id: format!("s{}", rng.gen_range(0..4)),
                    subcategory_id: format!("c{}", rng.gen_range(0..3)),
                }
            })
            .collect();
        let brute = BruteScorer::new(docs.clone());
        let index = InvertedIndex::build(docs.clone()).unwrap();

        for _ in 0..17 {
            // Half the queries reuse an existing review verbatim so the
            // identical-review leakage exclusion is actually exercised.
            let review = if rng.gen_bool(0.5) {
                docs[rng.gen_range(0..docs.len())].review_tokens.clone()
            } else {
                (0..rng.gen_range(1..=6))
                    .map(|_| words[rng.gen_range(0..words.len())].to_string())
                    .collect()
            };
            let title = (0..rng.gen_range(1..=3))
                .map(|_| words[rng.gen_range(0..words.len())].to_string())
                .collect();
            let mut query = Query::new(
                review,
                title,
                format!("s{}", rng.gen_range(0..4)),
                format!("c{}", rng.gen_range(0..3)),
                rng.gen_range(1..=10),
            );
            if rng.gen_bool(0.3) {
                query.exclude_doc_id = Some(rng.gen_range(0..pool_size) as u64);
            }

            let got: Vec<u64> = index.retrieve(&query).iter().map(|d| d.doc_id).collect();
            let want = brute.retrieve(&query);
            assert_eq!(got, want, "ordering diverges on pool of {pool_size}");

            for d in index.retrieve(&query) {
                assert_eq!(d.store_id, query.store_id);
                assert_eq!(d.subcategory_id, query.subcategory_id);
                assert_ne!(Some(d.doc_id), query.exclude_doc_id);
                assert_ne!(d.review_tokens, query.review_tokens, "leaked identical review");
            }
            queries_run += 1;
        }
    }
    verdict(
        6,
        "retrieval equivalence",
        queries_run >= 100,
        &format!(
            "{queries_run} random queries over pools of 3..1000 docs match an \
             independent BM25 score-and-sort exactly; filters and leakage \
             exclusion hold on every returned doc"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: ablation trend on a corpus where store boilerplate is only
// recoverable through recalled pairs.
// ---------------------------------------------------------------------------

const ASPECTS: [(&str, &str); 8] = [
    ("the color fades fast", "we use certified dye that keeps its color"),
    ("the strap broke quickly", "every strap is tested and broken ones are replaced free"),
    ("it smells weird", "the smell disperses after one day of airing"),
    ("shipping was very slow", "we have upgraded to faster couriers this month"),
    ("the size runs small", "please check our size chart for a better fit"),
    ("the zipper got stuck", "apply the included wax stick to keep the zipper smooth"),
    ("the fabric feels cheap", "the cloth is woven cotton sourced from top mills"),
    ("the print looks blurry", "our new presses print each pattern in high resolution"),
];
const MODIFIERS: [&str; 12] = [
    "honestly", "sadly", "truly", "frankly", "really", "basically", "genuinely", "clearly",
    "admittedly", "surely", "definitely", "obviously",
];

/// Reviews are store-neutral (random modifier, shared order-code pool); each
/// store's gold response carries a private helpline code. The only way a
/// model can produce the right code for a held-out review is to read it from
/// recalled same-store pairs.
fn ablation_corpus(seed: u64, n_stores: usize) -> Vec<Sample> {
    let mut rng = stream_rng(seed, "ablation");
    let codes: Vec<String> = (0..n_stores)
        .map(|_| {
            (0..3)
                .map(|_| {
                    let a = (b'a' + rng.gen_range(0..26u8)) as char;
                    let b = (b'a' + rng.gen_range(0..26u8)) as char;
                    format!("{a}{b}{}", rng.gen_range(10..100))
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let pool: Vec<String> = (0..40)
        .map(|_| {
            let a = (b'a' + rng.gen_range(0..26u8)) as char;
            let b = (b'a' + rng.gen_range(0..26u8)) as char;
            format!("{a}{b}{}", rng.gen_range(100..1000))
        })
        .collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (complaint, reply) in ASPECTS.iter() {
        for s in 0..n_stores {
            for _ in 0..3 {
                let review = loop {
                    let m = MODIFIERS[rng.gen_range(0..MODIFIERS.len())];
                    let order = &pool[rng.gen_range(0..pool.len())];
                    let r = format!("{m} {complaint} , order {order} .");
                    if seen.insert(r.clone()) {
                        break r;
                    }
                };
                out.push(Sample {
                    review,
                    response: format!("dear customer , {reply} , our helpline is {} .", codes[s]),
                    title: "woven jacket".to_string(),
                    store_name: "shop".to_string(),
                    properties: vec![("fabric".to_string(), "cotton".to_string())],
                    store_id: format!("s{s}"),
                    subcategory_id: format!("c{}", s % 2),
                });
            }
        }
    }
    out
}

fn greedy_corpus_bleu(
    params: &Parameters,
    samples: &[Sample],
    index: Option<&InvertedIndex>,
    vocab: &Vocab,
) -> f64 {
    let prepared = prepare_all(samples, index, vocab, &params.config).unwrap();
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for (s, p) in samples.iter().zip(&prepared) {
        cands.push(generate_greedy(params, &p.sources, vocab).unwrap().surfaces);
        refs.push(tokenize(&s.response));
    }
    bleu(&cands, &refs).unwrap()
}

#[test]
fn criterion_7_ablation_trend() {
    let seed = 13u64;
    let all = ablation_corpus(seed, 4);
    let spec = split(&all, [0.8, 0.1, 0.1], seed).unwrap();
    let vocab = Vocab::build(
        spec.train.iter().flat_map(|s| {
            [
                s.review.clone(),
                s.response.clone(),
                s.title.clone(),
                s.store_name.clone(),
            ]
        }),
        512,
    )
    .unwrap();
    let index = InvertedIndex::build(to_docs(&spec.train)).unwrap();
    let base = ModelConfig {
        vocab_size: vocab.size(),
        recalled: 3,
        pair_cap: 48,
        max_gen: 32,
        seed,
        ..ModelConfig::desk()
    };
    let tcfg = TrainConfig {
        lr: 1e-3,
        batch: 10,
        epochs: 250,
        target_loss: 0.02,
        ..TrainConfig::default()
    };

    // A: full model. B: same seed, recalled pairs removed entirely.
    // C: full sources but no source dropout during training.
    let a = train(&base, &tcfg, &spec.train, &index, &vocab, TrainOptions::default()).unwrap();
    let cfg_b = ModelConfig {
        recalled: 0,
        ..base.clone()
    };
    let b = train(&cfg_b, &tcfg, &spec.train, &index, &vocab, TrainOptions::default()).unwrap();
    let c = train(
        &base,
        &tcfg,
        &spec.train,
        &index,
        &vocab,
        TrainOptions {
            no_source_dropout: true,
            ..TrainOptions::default()
        },
    )
    .unwrap();

    // Evaluate on the held-out test split; the train split would let the
    // no-pairs model score by memorizing per-review order codes.
    let a_with = greedy_corpus_bleu(&a.params, &spec.test, Some(&index), &vocab);
    let a_wo = greedy_corpus_bleu(&a.params, &spec.test, None, &vocab);
    let b_bleu = greedy_corpus_bleu(&b.params, &spec.test, None, &vocab);
    let c_with = greedy_corpus_bleu(&c.params, &spec.test, Some(&index), &vocab);
    let c_wo = greedy_corpus_bleu(&c.params, &spec.test, None, &vocab);

    let gap = a_with - b_bleu;
    let drop_a = a_with - a_wo;
    let drop_c = c_with - c_wo;
    let ok = gap >= 5.0 && drop_c > drop_a;
    verdict(
        7,
        "ablation trend",
        ok,
        &format!(
            "test BLEU with pairs {a_with:.2} vs no-pairs model {b_bleu:.2} \
             (gap {gap:.2}, ≥ 5 required); removing pairs at test time costs \
             the no-dropout model {drop_c:.2} vs {drop_a:.2} with source dropout"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: copy path emits OOV surfaces; generation never leaks
// placeholder markers.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_copy_and_placeholders() {
    // Part 1: force the gate to 0 and copy attention onto an OOV store
    // name; the mixture argmax must be that surface's extended id.
    let vocab = fixture_vocab();
    let cfg = ModelConfig {
        vocab_size: vocab.size(),
        ..ModelConfig::micro()
    };
    let params = Parameters::init(&cfg, &mut stream_rng(8, "acceptance-init")).unwrap();
    let mut tape = Tape::new();
    let net = Net::bind(&mut tape, &params, false);
    let mut src = fixture_sources(&vocab);
    src.store = vocab.encode_str("zanthrope");
    assert_eq!(src.store.ids[0], reviewgen::text::UNK);
    let enc = net.encode_sources(&mut tape, &src).unwrap();
    let pos = enc
        .copy_surfaces
        .iter()
        .position(|s| s == "zanthrope")
        .expect("OOV store name present in the copy block");
    let ext = enc.ext_id("zanthrope").expect("extended id assigned");

    let mut onehot = vec![0.0; enc.l_x];
    onehot[pos] = 1.0;
    let beta = tape.constant(vec![1, enc.l_x], onehot);
    let p_c = tape.scatter_cols(beta, &enc.copy_ids, enc.ext_size()).unwrap();
    let h = tape.constant(vec![1, cfg.hidden], vec![0.2; cfg.hidden]);
    let (ctx, _) = net.aspect_attend(&mut tape, h, &enc).unwrap();
    let p_v = net.vocab_dist(&mut tape, h, ctx).unwrap();
    let zero = tape.constant(vec![1, 1], vec![0.0]);
    let p = net.mix(&mut tape, p_v, p_c, zero).unwrap();
    let row = tape.data(p);
    let argmax = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let copied = argmax == ext && enc.surface_of(argmax, &vocab) == Some("zanthrope");
    assert!(copied, "forced copy did not surface the OOV store name");

    // Part 2: run synth -> index -> train -> generate through the CLI and
    // confirm no literal [TITLE]/[STORE] marker reaches the output.
    use reviewgen::cli::{run, Cli, Command};
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let sets = vec![
        format!("corpus={}", path("corpus.jsonl")),
        format!("index={}", path("index.json")),
        format!("params={}", path("params.json")),
        format!("vocab={}", path("vocab.txt")),
        format!("generated={}", path("generated.jsonl")),
        format!("output={}", path("out.txt")),
        "samples=40".into(),
        "stores=2".into(),
        "hidden=16".into(),
        "enc_layers=1".into(),
        "dec_layers=1".into(),
        "heads=2".into(),
        "ff=32".into(),
        "vocab_size=256".into(),
        "recalled=2".into(),
        "max_gen=32".into(),
        "beam=2".into(),
        "epochs=2".into(),
        "batch=8".into(),
        "lr=3e-3".into(),
        "seed=8".into(),
        "split=test".into(),
    ];
    for command in [Command::Synth, Command::Index, Command::Train, Command::Generate] {
        run(&Cli {
            config: None,
            sets: sets.clone(),
            force: false,
            dry_run: false,
            command,
        })
        .unwrap();
    }
    let generated = std::fs::read_to_string(dir.path().join("generated.jsonl")).unwrap();
    let mut lines = 0usize;
    for line in generated.lines() {
        let v: HashMap<String, String> = serde_json::from_str(line).unwrap();
        let text = &v["generated_response"];
        assert!(
            !text.contains("[TITLE]") && !text.contains("[STORE]"),
            "literal placeholder marker in output: {text}"
        );
        lines += 1;
    }
    verdict(
        8,
        "copy/OOV property",
        copied && lines > 0,
        &format!(
            "forced gate 0 + one-hot copy attention yields the OOV store name \
             as argmax of P; {lines} generated responses contain no literal \
             [TITLE]/[STORE] marker"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: scale disclosure.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_scale_disclosure() {
    verdict(
        9,
        "scale disclosure",
        true,
        "the originally published absolute scores (corpus BLEU in the 24-40 \
         range and the human persuasiveness study) require proprietary \
         corpora of 100k+ review-response pairs and a pre-trained \
         768-dimensional 6-layer encoder, none of which fit desk scale; \
         criteria 1-8 verify the mechanisms property-by-property instead of \
         reproducing those numbers",
    );
}
