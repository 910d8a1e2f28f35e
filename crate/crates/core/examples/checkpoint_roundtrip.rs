//! Save a model with its vocabularies, load it back, and check the
//! parameters survive bit for bit.

use lcnmt::checkpoint::Checkpoint;
use lcnmt::data::Vocabulary;
use lcnmt::{Mode, Model, ModelConfig, SeededRng};
use rand::SeedableRng;

fn main() -> lcnmt::Result<()> {
    let mut vocab = Vocabulary::reserved_only();
    for w in ["the", "house", "is", "small"] {
        vocab.ensure(w);
    }
    let config = ModelConfig::desk_scale(Mode::LcNmt, vocab.len(), vocab.len());
    let ckpt = Checkpoint {
        model: Model::new(config, &mut SeededRng::seed_from_u64(9))?,
        source_vocab: vocab.clone(),
        target_vocab: vocab,
        run_config: serde_json::json!({ "note": "example" }),
    };
    let path = std::env::temp_dir().join("lcnmt-example.ckpt");
    ckpt.save(&path)?;
    let back = Checkpoint::load(&path)?;
    let same = ckpt
        .model
        .params
        .iter()
        .zip(back.model.params.iter())
        .all(|((_, n1, a), (_, n2, b))| n1 == n2 && a.values() == b.values());
    println!("{} parameters, {} values", back.model.params.len(), back.model.params.num_values());
    println!("{} bytes on disk, identical = {same}", std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
    std::fs::remove_file(&path).ok();
    Ok(())
}
