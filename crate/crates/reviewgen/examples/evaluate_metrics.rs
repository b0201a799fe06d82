//! Corpus-level BLEU, ROUGE-1/2/L and distinct-n on a toy batch.
//!
//!     cargo run --example evaluate_metrics

use reviewgen::metrics::{distinct_n, evaluate, rouge_l};
use reviewgen::text::tokenize;

fn main() -> anyhow::Result<()> {
    let candidates = vec![
        tokenize("dear customer , we will replace the strap free of charge ."),
        tokenize("please wash the scarf cold , the dye is certified ."),
    ];
    let references = vec![
        tokenize("dear customer , we replace broken straps free of charge ."),
        tokenize("our dye is certified , please wash it cold ."),
    ];

    let report = evaluate(&candidates, &references)?;
    print!("{}", report.to_lines());

    let (r, p, f1) = rouge_l(&candidates[0], &references[0]);
    println!("\nper-sentence ROUGE-L of the first pair: r={r:.3} p={p:.3} f1={f1:.3}");
    println!(
        "distinct-2 of the first candidate: {:.3}",
        distinct_n(&candidates[0], 2)
    );
    Ok(())
}
