//! The context-pronoun task: the class token in a second sentence is
//! decided by a marker that only the previous source sentence contains.
//! Trains LC-NMT and NMT on identical data and compares macro recall.
//!
//! `cargo run --release --example context_pronoun [epochs] [seed]`

use std::time::Instant;

use lcnmt::data::{examples_from_documents, generate_synthetic, SyntheticTask, Vocabulary};
use lcnmt::pronoun::{evaluate, instances, mask_pronouns, predict, PronounSet, DEFAULT_CAP, OTHER};
use lcnmt::training::{train, TrainingConfig};
use lcnmt::{Mode, Model, ModelConfig, SeededRng};
use rand::SeedableRng;

fn main() -> lcnmt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);

    let docs = generate_synthetic(SyntheticTask::ContextPronoun, 1000, 20, seed)?;
    let test_docs = generate_synthetic(SyntheticTask::ContextPronoun, 200, 20, seed + 1000)?;
    let mut sents: Vec<_> = docs.iter().flat_map(|d| d.pairs.iter().map(|p| p.source.clone())).collect();
    sents.extend(docs.iter().flat_map(|d| d.pairs.iter().map(|p| p.target.clone())));
    let mut vocab = Vocabulary::build(&sents, 1000, 1)?;
    vocab.ensure(OTHER);
    let examples = examples_from_documents(&docs, &vocab, &vocab);

    let set = PronounSet::synthetic();
    let records: Vec<_> = test_docs.iter().map(|d| mask_pronouns(d, &set)).collect();
    let tests = instances(&records, &vocab, &vocab, &set)?;

    for mode in [Mode::LcNmt, Mode::Nmt] {
        let mut config = ModelConfig::desk_scale(mode, vocab.len(), vocab.len());
        config.dropout_rate = 0.0;
        let mut model = Model::new(config, &mut SeededRng::seed_from_u64(seed))?;
        let tc = TrainingConfig {
            batch_size: 8,
            max_epochs: epochs,
            patience: usize::MAX,
            valid_interval: usize::MAX,
            valid_max_len: 10,
            seed,
            ..TrainingConfig::default()
        };
        let start = Instant::now();
        let out = train(&mut model, &examples, &examples[..20], &tc, &mut std::io::sink())?;

        let (mut preds, mut golds) = (Vec::new(), Vec::new());
        for inst in &tests {
            if let Some(g) = &inst.gold {
                preds.extend(predict(&model, inst, &set, &vocab, DEFAULT_CAP)?.classes);
                golds.extend(g.iter().copied());
            }
        }
        let report = evaluate(&preds, &golds, &set)?;
        println!(
            "== {mode:?}: {} steps, final loss {:.4}, {:.1}s",
            out.steps,
            out.last_loss,
            start.elapsed().as_secs_f64()
        );
        print!("{report}");
    }
    Ok(())
}
