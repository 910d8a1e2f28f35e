//! Central finite differences against the tape's reverse pass, for both
//! model variants on a two-sentence corpus.

use lcnmt::data::{ContextualExample, EMPTY_CONTEXT, EOS};
use lcnmt::gradcheck::finite_difference_check;
use lcnmt::{Mode, Model, ModelConfig, SeededRng, Tape};
use rand::{Rng, SeedableRng};

fn main() -> lcnmt::Result<()> {
    let corpus = vec![
        ContextualExample::new(vec![EMPTY_CONTEXT], vec![6, 7, 8], vec![6, 7, EOS]),
        ContextualExample::new(vec![6, 7, 8], vec![9, 6], vec![8, 6, 7, EOS]),
    ];
    for mode in [Mode::Nmt, Mode::LcNmt] {
        let config = ModelConfig {
            mode,
            word_dim: 8,
            enc_hidden: 16,
            dec_hidden: 16,
            ctx_enc_hidden: (mode == Mode::LcNmt).then_some(16),
            attn_hidden: 16,
            dropout_rate: 0.0,
            src_vocab: 10,
            tgt_vocab: 9,
        };
        let mut rng = SeededRng::seed_from_u64(11);
        let mut model = Model::new(config, &mut rng)?;
        // push weights away from the tiny init so every path carries signal
        let ids: Vec<_> = model.params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            for v in model.params.get_mut(id).values_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let report = finite_difference_check(
            |tape: &mut Tape<'_>| model.nll_on_tape(tape, &corpus, None),
            &model.params,
            1e-5,
            1e-4,
        )?;
        println!("{mode:?}: {} entries, passed = {}", report.entries_checked, report.passed());
        for p in &report.params {
            println!("  {:<20} rel err {:.2e}", p.name, p.max_relative_error);
        }
    }
    Ok(())
}
