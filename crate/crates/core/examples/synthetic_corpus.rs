//! Generate a synthetic document corpus, write it as parallel files with a
//! boundary file, reload it, and show the context each sentence sees.

use lcnmt::data::{examples_from_documents, generate_synthetic, load_parallel, write_parallel, SyntheticTask, Vocabulary};

fn main() -> lcnmt::Result<()> {
    let docs = generate_synthetic(SyntheticTask::ContextPronoun, 3, 8, 42)?;
    let dir = std::env::temp_dir().join("lcnmt-synthetic-example");
    std::fs::create_dir_all(&dir).ok();
    write_parallel(&docs, &dir, "toy")?;
    let back = load_parallel(&dir.join("toy.src"), &dir.join("toy.tgt"), Some(&dir.join("toy.docs")))?;
    assert_eq!(back, docs);

    let sents: Vec<_> = back.iter().flat_map(|d| d.pairs.iter().map(|p| p.source.clone())).collect();
    let vocab = Vocabulary::build(&sents, 100, 1)?;
    for ex in examples_from_documents(&back, &vocab, &vocab) {
        println!(
            "doc {} sent {} | ctx: {:<28} | src: {}",
            ex.doc,
            ex.position,
            vocab.decode(&ex.context).join(" "),
            vocab.decode(&ex.source).join(" ")
        );
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
