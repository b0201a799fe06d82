//! Build a weighted-field BM25 index over historical review-response pairs
//! and retrieve the closest prior cases for a new complaint.
//!
//!     cargo run --example retrieval_search

use reviewgen::retrieval::{Doc, InvertedIndex, Query};
use reviewgen::text::tokenize;

fn doc(id: u64, review: &str, response: &str, title: &str, store: &str) -> Doc {
    Doc {
        doc_id: id,
        review_tokens: tokenize(review),
        response_tokens: tokenize(response),
        title_tokens: tokenize(title),
        store_id: store.to_string(),
        subcategory_id: "bags".to_string(),
    }
}

fn main() -> anyhow::Result<()> {
    let docs = vec![
        doc(0, "the strap snapped on day two", "we will ship a new strap free of charge", "canvas satchel", "s1"),
        doc(1, "zipper jams constantly", "a drop of wax frees the zipper , or we replace it", "canvas satchel", "s1"),
        doc(2, "color faded after one wash", "our dye is certified , please wash cold", "silk scarf", "s1"),
        doc(3, "the strap smells awful", "air it out for a day ; the smell fades", "leather tote", "s1"),
        doc(4, "strap broke immediately", "that batch had a flaw , refunds are out", "canvas satchel", "s2"),
    ];
    let index = InvertedIndex::build(docs)?;

    let query = Query::new(
        tokenize("my strap broke and it smells strange"),
        tokenize("canvas satchel"),
        "s1".to_string(),
        "bags".to_string(),
        3,
    );
    println!("query review: my strap broke and it smells strange   (store s1)");
    println!("top {} prior cases:", query.m);
    for d in index.retrieve(&query) {
        println!(
            "  #{} [{:.3}] {:?} -> {:?}",
            d.doc_id,
            index.score(&query, d.doc_id)?,
            d.review_tokens.join(" "),
            d.response_tokens.join(" "),
        );
    }
    println!("(doc 4 is filtered out: different store id)");
    Ok(())
}
