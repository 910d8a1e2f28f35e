//! Overfit a copy corpus: 200 sentences over 20 words, plain NMT.
//!
//! `cargo run --release --example copy_task [epochs]`

use std::time::Instant;

use lcnmt::data::{examples_from_documents, generate_synthetic, SyntheticTask, Vocabulary};
use lcnmt::training::{greedy_bleu, per_token_nll, train, TrainingConfig};
use lcnmt::{Mode, Model, ModelConfig, SeededRng};
use rand::SeedableRng;

fn main() -> lcnmt::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let docs = generate_synthetic(SyntheticTask::Copy, 200, 20, 7)?;
    let sents: Vec<_> = docs.iter().flat_map(|d| d.pairs.iter().map(|p| p.source.clone())).collect();
    let vocab = Vocabulary::build(&sents, 100, 1)?;
    let examples = examples_from_documents(&docs, &vocab, &vocab);

    let mut config = ModelConfig::desk_scale(Mode::Nmt, vocab.len(), vocab.len());
    config.dropout_rate = 0.0;
    let mut model = Model::new(config, &mut SeededRng::seed_from_u64(1))?;
    let tc = TrainingConfig {
        batch_size: 10,
        max_epochs: epochs,
        patience: usize::MAX,
        valid_interval: 2000,
        valid_max_len: 12,
        ..TrainingConfig::default()
    };
    let start = Instant::now();
    let out = train(&mut model, &examples, &examples[..50], &tc, &mut std::io::stdout())?;
    println!("{} steps in {:.1}s", out.steps, start.elapsed().as_secs_f64());
    println!("per-token nll {:.4}", per_token_nll(&model, &examples)?);
    println!("greedy bleu   {:.4}", greedy_bleu(&model, &examples, 12)?);

    let ex = &examples[0];
    let hyp = lcnmt::decoding::greedy_decode(&model, ex, 12)?;
    println!("src {}", vocab.decode(&ex.source).join(" "));
    println!("hyp {}", vocab.decode(&hyp.tokens).join(" "));
    Ok(())
}
