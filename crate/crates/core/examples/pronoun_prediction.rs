//! Cross-lingual pronoun prediction with a tiny model. Each REPLACE slot
//! in the target is filled from the class set; the model picks the filling
//! with the highest log-probability.

use lcnmt::data::{examples_from_documents, generate_synthetic, SyntheticTask, Vocabulary};
use lcnmt::pronoun::{evaluate, format_task, instances, mask_pronouns, predict, PronounSet, DEFAULT_CAP, OTHER};
use lcnmt::training::{train, TrainingConfig};
use lcnmt::{Mode, Model, ModelConfig, SeededRng};
use rand::SeedableRng;

fn main() -> lcnmt::Result<()> {
    let docs = generate_synthetic(SyntheticTask::ContextPronoun, 300, 10, 3)?;
    let mut sents: Vec<_> = docs.iter().flat_map(|d| d.pairs.iter().map(|p| p.source.clone())).collect();
    sents.extend(docs.iter().flat_map(|d| d.pairs.iter().map(|p| p.target.clone())));
    let mut vocab = Vocabulary::build(&sents, 1000, 1)?;
    vocab.ensure(OTHER);

    let set = PronounSet::synthetic();
    let records: Vec<_> = docs[..20].iter().map(|d| mask_pronouns(d, &set)).collect();
    print!("{}", format_task(&records[..2]));

    let mut config = ModelConfig::desk_scale(Mode::LcNmt, vocab.len(), vocab.len());
    config.dropout_rate = 0.0;
    let mut model = Model::new(config, &mut SeededRng::seed_from_u64(3))?;
    let tc = TrainingConfig {
        batch_size: 8,
        max_epochs: 30,
        valid_interval: usize::MAX,
        ..TrainingConfig::default()
    };
    let examples = examples_from_documents(&docs[20..], &vocab, &vocab);
    train(&mut model, &examples, &examples[..10], &tc, &mut std::io::sink())?;

    let (mut preds, mut golds) = (Vec::new(), Vec::new());
    for (i, inst) in instances(&records, &vocab, &vocab, &set)?.iter().enumerate() {
        let Some(gold) = &inst.gold else { continue };
        let r = predict(&model, inst, &set, &vocab, DEFAULT_CAP)?;
        if i < 5 {
            let names: Vec<&str> = r.classes.iter().map(|&c| set.classes()[c].as_str()).collect();
            println!("{} candidates, picked {names:?}, log p {:.3}", r.candidates, r.log_prob);
        }
        preds.extend(r.classes);
        golds.extend(gold.iter().copied());
    }
    print!("{}", evaluate(&preds, &golds, &set)?);
    Ok(())
}
