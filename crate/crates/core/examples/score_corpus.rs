//! Corpus BLEU and RIBES.
//!
//! `cargo run --example score_corpus [hyp_file ref_file]`

use lcnmt::data::tokenize;
use lcnmt::metrics::{ribes_sentence, score_report, NGramStats};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (hyps, refs): (Vec<String>, Vec<String>) = if let [h, r] = args.as_slice() {
        let lines = |p: &str| -> std::io::Result<Vec<String>> {
            Ok(std::fs::read_to_string(p)?.lines().map(String::from).collect())
        };
        (lines(h)?, lines(r)?)
    } else {
        (
            vec![
                "the cat sat on a mat today".into(),
                "a brown quick fox jumps over the dog".into(),
            ],
            vec![
                "the cat sat on the mat today".into(),
                "a quick brown fox jumps over the lazy dog".into(),
            ],
        )
    };
    let hyps: Vec<_> = hyps.iter().map(|s| tokenize(s)).collect();
    let refs: Vec<_> = refs.iter().map(|s| tokenize(s)).collect();

    for (h, r) in hyps.iter().zip(&refs) {
        let stats = NGramStats::sentence(h, r);
        println!("{:<45} matches {:?} ribes {:.4}", h.join(" "), stats.matches, ribes_sentence(h, r));
    }
    println!("{}", score_report(&hyps, &refs)?);
    Ok(())
}
