mod common;

use nalgebra::DMatrix;
use ngram_lab::corpus::sample_strings;
use ngram_lab::gen::{generate_general, generate_representation, sample_dirichlet, GeneralLmSpec, RepLmSpec};
use ngram_lab::lm::{history_at, string_logprob, well_formed_histories, Backend, History, LanguageModel, NGramLm, SymbolString};
use ngram_lab::seeding;
use proptest::prelude::*;

fn lm_strategy() -> impl Strategy<Value = NGramLm> {
    (0u8..3, 2usize..4, 1usize..5, any::<u64>()).prop_map(|(kind, order, sigma, seed)| match kind {
        0 => generate_general(&GeneralLmSpec::new(order, sigma, seed)).unwrap(),
        1 => generate_representation(&RepLmSpec::sparse(order, sigma, seed)).unwrap(),
        _ => generate_representation(&RepLmSpec::dense(order, sigma, 1 + (seed as usize) % sigma, seed)).unwrap(),
    })
}

fn representation(lm: &NGramLm) -> &ngram_lab::gen::RepresentationLm {
    match &lm.backend {
        Backend::Representation(r) => r,
        Backend::Tabular(_) => panic!("expected a representation LM"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_conditional_normalizes_with_fixed_eos(lm in lm_strategy()) {
        let a = lm.alphabet();
        for h in well_formed_histories(a, lm.order() - 1) {
            let d = lm.conditional(History::new(a, lm.order(), &h).unwrap()).unwrap().unwrap();
            prop_assert!((d.sum() - 1.0).abs() < 1e-9);
            prop_assert_eq!(d.prob(a.eos_outcome()), 1.0 / 40.0);
        }
    }

    #[test]
    fn string_logprob_is_the_sum_of_step_logprobs(
        lm in lm_strategy(),
        raw in prop::collection::vec(0u32..64, 0..12),
    ) {
        let a = lm.alphabet();
        let ids: Vec<u32> = raw.iter().map(|&s| s % a.size() as u32).collect();
        let y = SymbolString::new(a, ids.clone()).unwrap();
        let mut total = 0.0;
        for t in 1..=ids.len() + 1 {
            let h = history_at(a, &y, t, lm.order()).unwrap();
            let outcome = if t <= ids.len() { ids[t - 1] as usize } else { a.eos_outcome() };
            total += lm.next_prob(History::new(a, lm.order(), &h).unwrap(), outcome).unwrap().ln();
        }
        let got = string_logprob(&lm, &y).unwrap();
        prop_assert!((got - total).abs() <= 1e-12 * total.abs().max(1.0));
    }
}

fn all_strings(sigma: u32, max_len: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..sigma {
                let mut t: Vec<u32> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn probability_of_all_short_strings_matches_the_length_law() {
    // With p(EOS) = 1/40 at every step, P(|y| ≤ L) = 1 − (39/40)^(L+1).
    let max_len = 12;
    for lm in [
        generate_general(&GeneralLmSpec::new(3, 2, 9)).unwrap(),
        generate_representation(&RepLmSpec::dense(3, 2, 2, 9)).unwrap(),
    ] {
        let a = lm.alphabet();
        let total: f64 = all_strings(2, max_len)
            .into_iter()
            .map(|s| string_logprob(&lm, &SymbolString::new(a, s).unwrap()).unwrap().exp())
            .sum();
        let expect = 1.0 - (39.0f64 / 40.0).powi(max_len as i32 + 1);
        assert!(total <= 1.0);
        assert!((total - expect).abs() < 1e-12, "{total} vs {expect}");
    }
}

#[test]
fn mean_length_is_expected_length_minus_one() {
    let lm = generate_general(&GeneralLmSpec::new(2, 4, 21)).unwrap();
    let lens: Vec<f64> = sample_strings(&lm, 100_000, 5, 10_000).unwrap().iter().map(|y| y.len() as f64).collect();
    let (mean, se) = common::mean_and_stderr(&lens);
    assert!((mean - 39.0).abs() < 3.0 * se, "mean {mean} ± {se}");
}

#[test]
fn concentration_monotonicity() {
    let mean_max = |alpha: f64| {
        let mut rng = seeding::rng(17);
        (0..1000)
            .map(|_| sample_dirichlet(&mut rng, alpha, 8).unwrap().into_iter().fold(0.0, f64::max))
            .sum::<f64>()
            / 1000.0
    };
    assert!(mean_max(0.1) > mean_max(10.0));
}

#[test]
fn dense_output_matrix_has_numerical_rank_r() {
    for (sigma, rank, seed) in [(16, 8, 1), (64, 2, 2), (64, 16, 3), (8, 8, 4)] {
        let spec = RepLmSpec::dense(4, sigma, rank, seed);
        assert_eq!(spec.representation_dim(), 48);
        let lm = generate_representation(&spec).unwrap();
        let e = representation(&lm).output_matrix();
        assert_eq!((e.len(), e[0].len()), (sigma, 48));
        let m = DMatrix::from_fn(sigma, 48, |i, j| e[i][j]);
        let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[rank - 1] > 1e-8 * sv[0]);
        if rank < sv.len() {
            assert!(sv[rank] < 1e-8 * sv[0], "σ_(R+1) = {} vs σ₁ = {}", sv[rank], sv[0]);
        }
    }
}

#[test]
fn sparse_representation_is_three_one_hot_blocks() {
    let spec = RepLmSpec::sparse(4, 64, 0);
    assert_eq!(spec.representation_dim(), 195);
    let lm = generate_representation(&spec).unwrap();
    let r = representation(&lm);
    let h = r.representation(&[64, 3, 17]);
    assert_eq!(h.len(), 195);
    assert_eq!(h.iter().filter(|&&x| x == 1.0).count(), 3);
    assert_eq!(h.iter().filter(|&&x| x != 0.0).count(), 3);
}

#[test]
fn full_rank_product_has_gaussian_entry_moments() {
    // At R = min(|Σ|, D) each entry of E1·E2 is a sum of R unit-variance
    // products: mean 0, variance R, like an unfactored N(0, R) matrix.
    let (sigma, rank) = (4, 4);
    let samples: Vec<f64> = (0..10_000u64)
        .map(|seed| {
            let lm = generate_representation(&RepLmSpec::dense(2, sigma, rank, seed)).unwrap();
            representation(&lm).output_matrix()[(seed % 4) as usize][(seed % 16) as usize] / (rank as f64).sqrt()
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let second = samples.iter().map(|x| x * x).sum::<f64>() / n;
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((second - 1.0).abs() < 0.05, "second moment {second}");
}
