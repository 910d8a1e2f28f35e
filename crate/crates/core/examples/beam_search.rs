//! Greedy, beam and exhaustive decoding on a small random model. With a
//! beam wide enough to keep every prefix, beam search is exact.

use lcnmt::data::ContextualExample;
use lcnmt::decoding::{beam_search, exhaustive_decode, greedy_decode, sequence_count, BeamConfig, EXHAUSTIVE_CAP};
use lcnmt::{Mode, Model, ModelConfig, SeededRng};
use rand::{Rng, SeedableRng};

fn main() -> lcnmt::Result<()> {
    let (vocab, max_len) = (6, 4);
    let config = ModelConfig {
        mode: Mode::LcNmt,
        word_dim: 4,
        enc_hidden: 5,
        dec_hidden: 6,
        ctx_enc_hidden: Some(3),
        attn_hidden: 4,
        dropout_rate: 0.0,
        src_vocab: 9,
        tgt_vocab: vocab,
    };
    let mut rng = SeededRng::seed_from_u64(5);
    let mut model = Model::new(config, &mut rng)?;
    let ids: Vec<_> = model.params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for v in model.params.get_mut(id).values_mut() {
            *v = rng.random_range(-1.5..1.5);
        }
    }
    let ex = ContextualExample::new(vec![6, 7], vec![8, 6, 7], vec![]);

    let greedy = greedy_decode(&model, &ex, max_len)?;
    println!("greedy      {:?} {:.4}", greedy.tokens, greedy.log_prob);
    for b in [1, 2, 4, 8] {
        let cfg = BeamConfig {
            beam_size: b,
            max_len,
            length_norm: false,
        };
        let best = &beam_search(&model, &ex, &cfg)?[0];
        println!("beam {b:<6} {:?} {:.4}", best.tokens, best.log_prob);
    }
    println!("searching {} sequences exhaustively", sequence_count(vocab, max_len));
    let opt = exhaustive_decode(&model, &ex, max_len, EXHAUSTIVE_CAP)?;
    println!("exhaustive  {:?} {:.4}", opt.tokens, opt.log_prob);

    // the n-best list, length-normalised
    let cfg = BeamConfig {
        beam_size: 4,
        max_len,
        length_norm: true,
    };
    for h in beam_search(&model, &ex, &cfg)? {
        println!("  {:?} total {:.4} per token {:.4}", h.tokens, h.log_prob, h.normalized());
    }
    Ok(())
}
