//! The full pipeline in memory: synthesize a corpus, split it, index the
//! train split, train a small model briefly, then decode a few held-out
//! reviews with greedy and beam search.
//!
//!     cargo run --release --example train_and_generate

use reviewgen::dataset::{split, synth_corpus, to_docs};
use reviewgen::model::{
    generate, generate_greedy, prepare_all, train, ModelConfig, TrainConfig, TrainOptions,
};
use reviewgen::retrieval::InvertedIndex;
use reviewgen::text::Vocab;

fn main() -> anyhow::Result<()> {
    let samples = synth_corpus(11, 48, 3, 2);
    let spec = split(&samples, [0.8, 0.1, 0.1], 11)?;
    println!(
        "corpus: {} train / {} valid / {} test",
        spec.train.len(),
        spec.valid.len(),
        spec.test.len()
    );

    let index = InvertedIndex::build(to_docs(&spec.train))?;
    let vocab = Vocab::build(
        spec.train.iter().flat_map(|s| {
            [s.review.clone(), s.response.clone(), s.title.clone(), s.store_name.clone()]
        }),
        256,
    )?;

    let cfg = ModelConfig {
        hidden: 16,
        enc_layers: 1,
        dec_layers: 1,
        heads: 2,
        ff: 32,
        vocab_size: vocab.size(),
        recalled: 2,
        max_gen: 48,
        seed: 11,
        ..ModelConfig::desk()
    };
    let tcfg = TrainConfig {
        lr: 3e-3,
        epochs: 60,
        batch: 8,
        target_loss: 0.4,
        ..TrainConfig::default()
    };
    let outcome = train(&cfg, &tcfg, &spec.train, &index, &vocab, TrainOptions::default())?;
    for (i, loss) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch {} mean loss {loss:.4}", i + 1);
    }

    let prepared = prepare_all(&spec.test, Some(&index), &vocab, &cfg)?;
    for (sample, prep) in spec.test.iter().zip(&prepared).take(3) {
        println!("\nreview: {}", sample.review);
        let greedy = generate_greedy(&outcome.params, &prep.sources, &vocab)?;
        println!("greedy: {}", greedy.surfaces.join(" "));
        let beamed = generate(&outcome.params, &prep.sources, &vocab, 3)?;
        println!("beam-3: {}", beamed.surfaces.join(" "));
    }
    Ok(())
}
