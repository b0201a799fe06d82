//! Tokenization, review segmentation and placeholder substitution.
//!
//!     cargo run --example segmentation

use reviewgen::text::{
    segment_review, substitute_placeholders, tokenize, SubstituteDirection, Vocab,
};

fn main() -> anyhow::Result<()> {
    let review = "The strap broke after two days, and honestly it smells weird. Do better!";
    let tokens = tokenize(review);
    println!("review: {review}");
    println!("tokens: {tokens:?}");

    let vocab = Vocab::build([review.to_string()], 64)?;
    let seg = segment_review(&vocab.encode(&tokens));
    println!("\nmarked:  {}", seg.tokens.surfaces.join(" "));
    println!("fragment markers sit at positions {:?}:", seg.sent_indices);
    for (i, window) in seg.sent_indices.windows(2).enumerate() {
        let words = &seg.tokens.surfaces[window[0] + 1..window[1]];
        println!("  fragment {i}: {}", words.join(" "));
    }
    let last = *seg.sent_indices.last().unwrap();
    println!(
        "  fragment {}: {}",
        seg.sent_indices.len() - 1,
        seg.tokens.surfaces[last + 1..].join(" ")
    );

    // Gold responses mention the product and shop literally; encoding folds
    // those spans into [TITLE]/[STORE] so one surface form serves every
    // store, and decoding expands them back after generation.
    let response = "dear customer , your leather satchel is covered , regards northwind bags .";
    let title = vocab.encode_str("leather satchel");
    let store = vocab.encode_str("northwind bags");
    let folded = substitute_placeholders(
        &vocab.encode_str(response),
        &title,
        &store,
        SubstituteDirection::Encode,
    )?;
    let expanded =
        substitute_placeholders(&folded, &title, &store, SubstituteDirection::Decode)?;
    println!("\ngold:     {response}");
    println!("folded:   {}", folded.surfaces.join(" "));
    println!("expanded: {}", expanded.surfaces.join(" "));
    Ok(())
}
