use ngram_lab::lm::{well_formed_histories, Alphabet, History};
use ngram_lab::neural::{gradcheck, GradcheckKind, LogLinearModel, NeuralNGramModel, NeuralShape};
use ngram_lab::seeding;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forwards_normalize_in_both_modes(sigma in 1usize..5, order in 1usize..4, seed in any::<u64>()) {
        let a = Alphabet::new(sigma).unwrap();
        let ll = LogLinearModel::random(a, order, 3.0, seed).unwrap();
        let shape = NeuralShape { embed_dim: 4, hidden: 8, dropout: 0.5, bias: true };
        let nn = NeuralNGramModel::init(a, order, shape, seed).unwrap();
        let mut rng = seeding::rng(seed);
        for h in well_formed_histories(a, order - 1) {
            let hist = History::new(a, order, &h).unwrap();
            prop_assert!((ll.forward(hist).unwrap().sum() - 1.0).abs() < 1e-7);
            prop_assert!((nn.forward(hist, None).unwrap().sum() - 1.0).abs() < 1e-7);
            prop_assert!((nn.forward(hist, Some(&mut rng)).unwrap().sum() - 1.0).abs() < 1e-7);
        }
    }
}

#[test]
fn gradients_agree_with_central_differences() {
    for seed in 10..13 {
        assert!(gradcheck(GradcheckKind::LogLinear, seed).unwrap() < 1e-4);
        assert!(gradcheck(GradcheckKind::Neural, seed).unwrap() < 1e-4);
    }
}
