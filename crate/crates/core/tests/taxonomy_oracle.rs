use std::collections::BTreeSet;
use std::time::Instant;

use atl_core::taxonomy::{MultiHot, Taxonomy};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_taxonomy(rng: &mut ChaCha8Rng) -> Taxonomy {
    let n_v = rng.random_range(1..=12);
    let n_o = rng.random_range(1..=12);
    let mut all: Vec<(usize, usize)> = (0..n_v)
        .flat_map(|v| (0..n_o).map(move |o| (v, o)))
        .collect();
    all.shuffle(rng);
    let n = rng.random_range(1..=all.len());
    all.truncate(n);
    Taxonomy::from_pairs(n_v, n_o, all).unwrap()
}

fn random_multi_hot(rng: &mut ChaCha8Rng, len: usize, p: f64) -> MultiHot {
    MultiHot((0..len).map(|_| rng.random_bool(p)).collect())
}

/// Category c is in the composite iff its verb is active and its object is active.
fn oracle(tax: &Taxonomy, obj: &MultiHot, verb: &MultiHot) -> BTreeSet<usize> {
    tax.pairs()
        .iter()
        .enumerate()
        .filter(|(_, &(v, o))| verb.get(v) && obj.get(o))
        .map(|(c, _)| c)
        .collect()
}

#[test]
fn compose_matches_set_oracle_on_random_taxonomies() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    for _ in 0..50 {
        let tax = random_taxonomy(&mut rng);
        for v in 0..tax.n_verbs() {
            for o in 0..tax.n_objects() {
                let got = tax
                    .compose_label(
                        &MultiHot::one_hot(tax.n_objects(), o).unwrap(),
                        &MultiHot::one_hot(tax.n_verbs(), v).unwrap(),
                    )
                    .unwrap();
                let want = oracle(
                    &tax,
                    &MultiHot::one_hot(tax.n_objects(), o).unwrap(),
                    &MultiHot::one_hot(tax.n_verbs(), v).unwrap(),
                );
                assert_eq!(got.indices().into_iter().collect::<BTreeSet<_>>(), want);
                assert_eq!(got.is_zero(), !tax.is_valid_pair(v, o).unwrap());
                checked += 1;
            }
        }
        for _ in 0..20 {
            let obj = random_multi_hot(&mut rng, tax.n_objects(), 0.3);
            let verb = random_multi_hot(&mut rng, tax.n_verbs(), 0.3);
            let got = tax.compose_label(&obj, &verb).unwrap();
            assert_eq!(
                got.indices().into_iter().collect::<BTreeSet<_>>(),
                oracle(&tax, &obj, &verb)
            );
            checked += 1;
        }
    }
    assert!(checked > 1000);
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn decouple_is_union_of_verbs_and_objects() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let tax = random_taxonomy(&mut rng);
        let y = random_multi_hot(&mut rng, tax.n_hoi(), 0.2);
        let verbs: BTreeSet<usize> = y.ones().map(|c| tax.pair(c).0).collect();
        let objects: BTreeSet<usize> = y.ones().map(|c| tax.pair(c).1).collect();
        assert_eq!(
            tax.decouple_verb(&y)
                .unwrap()
                .indices()
                .into_iter()
                .collect::<BTreeSet<_>>(),
            verbs
        );
        assert_eq!(
            tax.decouple_object(&y)
                .unwrap()
                .indices()
                .into_iter()
                .collect::<BTreeSet<_>>(),
            objects
        );
    }
}

#[test]
fn wrong_lengths_are_rejected() {
    let tax = Taxonomy::from_pairs(2, 2, vec![(0, 0), (1, 1)]).unwrap();
    assert!(tax
        .compose_label(&MultiHot::zeros(3), &MultiHot::zeros(2))
        .is_err());
    assert!(tax.decouple_verb(&MultiHot::zeros(1)).is_err());
}

proptest! {
    #[test]
    fn one_hot_composition_recovers_the_category(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tax = random_taxonomy(&mut rng);
        for (c, &(v, o)) in tax.pairs().iter().enumerate() {
            let y = tax.compose_label(&MultiHot::one_hot(tax.n_objects(), o).unwrap(), &MultiHot::one_hot(tax.n_verbs(), v).unwrap()).unwrap();
            prop_assert_eq!(y.indices(), vec![c]);
            prop_assert_eq!(tax.decouple_verb(&y).unwrap().indices(), vec![v]);
            prop_assert_eq!(tax.decouple_object(&y).unwrap().indices(), vec![o]);
        }
    }

    #[test]
    fn composition_is_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tax = random_taxonomy(&mut rng);
        let obj = random_multi_hot(&mut rng, tax.n_objects(), 0.4);
        let verb = random_multi_hot(&mut rng, tax.n_verbs(), 0.4);
        let mut bigger = verb.clone();
        bigger.set(rng.random_range(0..tax.n_verbs()));
        let small = tax.compose_label(&obj, &verb).unwrap();
        let large = tax.compose_label(&obj, &bigger).unwrap();
        for c in small.ones() {
            prop_assert!(large.get(c));
        }
    }

    #[test]
    fn file_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tax = random_taxonomy(&mut rng);
        let back = Taxonomy::from_file(tax.to_file()).unwrap();
        prop_assert_eq!(back.pairs(), tax.pairs());
    }
}
