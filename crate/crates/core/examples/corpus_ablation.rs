//! Subsample the training corpus at each ablation fraction. Every kept
//! example carries the context it had in the full corpus.

use lcnmt::data::{examples_from_documents, generate_synthetic, SyntheticTask, Vocabulary};
use lcnmt::training::{subsample_corpus, subsample_size, ABLATION_FRACTIONS};

fn main() -> lcnmt::Result<()> {
    let docs = generate_synthetic(SyntheticTask::ContextPronoun, 500, 20, 1)?;
    let sents: Vec<_> = docs.iter().flat_map(|d| d.pairs.iter().map(|p| p.source.clone())).collect();
    let vocab = Vocabulary::build(&sents, 1000, 1)?;
    let examples = examples_from_documents(&docs, &vocab, &vocab);

    for f in ABLATION_FRACTIONS {
        let sub = subsample_corpus(&examples, f, 1234)?;
        let firsts = sub.iter().filter(|e| e.position == 0).count();
        println!(
            "fraction {f:<4} keeps {:>4} of {} examples ({firsts} document openers)",
            sub.len(),
            examples.len()
        );
    }
    // at full scale the smallest fraction of the English-German corpus
    println!("0.05 of 2441410 = {}", subsample_size(2_441_410, 0.05));
    Ok(())
}
