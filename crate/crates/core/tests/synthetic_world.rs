use atl_core::eval::SplitSpec;
use atl_core::rng;
use atl_core::synth::{self, WorldConfig};

fn world(noise: f64, shift: f64, seed: u64) -> WorldConfig {
    WorldConfig {
        noise_sigma: noise,
        domain_shift: shift,
        seed,
        ..WorldConfig::default()
    }
}

#[test]
fn object_features_identify_their_prototype() {
    let (_, w) = synth::gen_world(&world(0.3, 0.0, 4)).unwrap();
    let mut r = rng::stream(4, "probe");
    let n = 10_000;
    let mut correct = 0;
    for k in 0..n {
        let o = k % w.object_prototypes.len();
        let inst = synth::sample_object_instance(&w, o, &mut r).unwrap();
        correct +=
            usize::from(synth::nearest_prototype(&inst.object_feat, &w.object_prototypes) == o);
    }
    assert!(correct as f64 / n as f64 >= 0.99, "{correct}/{n}");
}

#[test]
fn domain_shift_moves_external_features() {
    let (_, plain) = synth::gen_world(&world(0.3, 0.0, 8)).unwrap();
    let (_, shifted) = synth::gen_world(&world(0.3, 3.0, 8)).unwrap();
    let mean_dist = |w: &synth::WorldSpec| {
        let mut r = rng::stream(8, "probe");
        let mut total = 0.0;
        for k in 0..2000 {
            let o = k % w.object_prototypes.len();
            let f = synth::sample_object_instance(w, o, &mut r)
                .unwrap()
                .object_feat;
            total += f
                .iter()
                .zip(&w.object_prototypes[o])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        }
        total / 2000.0
    };
    assert!(mean_dist(&shifted) > mean_dist(&plain) + 1.0);
    let norm: f64 = shifted
        .object_domain_shift
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    assert!((norm - 3.0).abs() < 1e-9);
}

#[test]
fn generation_is_deterministic_per_seed() {
    let cfg = WorldConfig {
        seed: 21,
        ..WorldConfig::default()
    };
    let (mut t1, w1) = synth::gen_world(&cfg).unwrap();
    let (mut t2, w2) = synth::gen_world(&cfg).unwrap();
    assert_eq!(w1, w2);
    assert_eq!(t1.pairs(), t2.pairs());
    let s1 = SplitSpec::none(&t1);
    let d1 = synth::gen_dataset(&w1, &mut t1, &s1, 300, 50, 40, 5).unwrap();
    let d2 = synth::gen_dataset(&w2, &mut t2, &s1, 300, 50, 40, 5).unwrap();
    assert_eq!(
        serde_json::to_string(&d1.train).unwrap(),
        serde_json::to_string(&d2.train).unwrap()
    );
    assert_eq!(t1.train_counts(), t2.train_counts());
    let (t3, _) = synth::gen_world(&WorldConfig { seed: 22, ..cfg }).unwrap();
    assert_ne!(t1.pairs(), t3.pairs());
}

#[test]
fn training_counts_are_long_tailed() {
    let (mut tax, w) = synth::gen_world(&WorldConfig {
        seed: 2,
        ..WorldConfig::default()
    })
    .unwrap();
    let split = SplitSpec::none(&tax);
    synth::gen_dataset(&w, &mut tax, &split, 4000, 10, 10, 2).unwrap();
    let mut counts = tax.train_counts().to_vec();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let rare = counts.iter().filter(|&&c| c < 10).count();
    assert!(
        counts[0] > 20 * counts[counts.len() - 1].max(1),
        "{counts:?}"
    );
    assert!(
        rare > 0 && rare < counts.len() / 2,
        "{rare} rare of {}",
        counts.len()
    );
}
