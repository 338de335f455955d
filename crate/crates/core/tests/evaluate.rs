use rand::Rng;
use sdn_core::data::{Dataset, FactorSpec};
use sdn_core::layers::Direction;
use sdn_core::params::ParamStore;
use sdn_core::rng::{derived, seeded};
use sdn_core::vae::{bpd_mean_se, evaluate, DecoderKind, EvalOptions, ObservationModel, VaeConfig, VaeModel};
use sdn_core::Float;

fn model() -> (VaeModel, ParamStore) {
    let m = VaeModel::new(VaeConfig {
        image_size: 8,
        channels: 3,
        bits: 5,
        latent_dim: 3,
        encoder_channels: vec![4],
        encoder_hidden: 8,
        decoder_hidden: 8,
        decoder_base_channels: 4,
        decoder_channels: vec![3],
        decoder: DecoderKind::Sdn,
        sdn_channels: 3,
        sdn_directions: vec![Direction::BottomToTop],
        observation: ObservationModel::Logistic,
    })
    .unwrap();
    let p = m.init(&mut seeded(4)).unwrap();
    (m, p)
}

/// Unlabeled 8x8 images with random pixels.
fn noise_dataset(n: usize) -> Dataset {
    let spec = FactorSpec { factors: vec![], ..FactorSpec::scenes(8).unwrap() };
    let mut rng = derived(8, 0);
    let pixels = (0..n * spec.pixels_per_image()).map(|_| rng.random::<u8>()).collect();
    Dataset::new(spec, [0; 32], pixels, vec![]).unwrap()
}

#[test]
fn single_importance_sample_matches_the_elbo() {
    let (m, p) = model();
    let d = noise_dataset(20);
    let idx: Vec<usize> = (0..20).collect();
    let r = evaluate(&m, &p, &d, &idx, &EvalOptions { iwae_samples: Some(1), batch: 7, ..Default::default() }).unwrap();
    let (k, iwae, _) = r.iwae_bpd().unwrap();
    assert_eq!(k, 1);
    assert!((iwae - r.elbo_bpd().0).abs() < 1e-12, "{} vs {}", iwae, r.elbo_bpd().0);
    let plain = evaluate(&m, &p, &d, &idx, &EvalOptions { batch: 7, ..Default::default() }).unwrap();
    assert_eq!(plain.elbo, r.elbo);
    assert!(plain.iwae.is_none());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (m, p) = model();
    let d = noise_dataset(30);
    let idx: Vec<usize> = (0..30).rev().collect();
    let base = EvalOptions { iwae_samples: Some(3), batch: 4, ..Default::default() };
    let one = evaluate(&m, &p, &d, &idx, &base).unwrap();
    for threads in [2, 3, 16] {
        assert_eq!(evaluate(&m, &p, &d, &idx, &EvalOptions { threads, ..base.clone() }).unwrap(), one);
    }
}

#[test]
fn per_image_noise_follows_the_image() {
    let (m, p) = model();
    let d = noise_dataset(10);
    let all = evaluate(&m, &p, &d, &(0..10).collect::<Vec<_>>(), &EvalOptions { batch: 3, ..Default::default() }).unwrap();
    let some = evaluate(&m, &p, &d, &[7, 2], &EvalOptions::default()).unwrap();
    assert!((some.elbo[0] - all.elbo[7]).abs() < 1e-9);
    assert!((some.elbo[1] - all.elbo[2]).abs() < 1e-9);
}

#[test]
fn bpd_summary_matches_hand_values() {
    let ln2 = std::f64::consts::LN_2 as Float;
    let (m, se) = bpd_mean_se(&[-2.0 * ln2, -4.0 * ln2], 1);
    assert!((m - 3.0).abs() < 1e-12);
    // sample std sqrt(2), divided by sqrt(2)
    assert!((se - 1.0).abs() < 1e-12);
}

#[test]
fn bad_options_are_rejected() {
    let (m, p) = model();
    let d = noise_dataset(2);
    assert!(evaluate(&m, &p, &d, &[], &EvalOptions::default()).is_err());
    assert!(evaluate(&m, &p, &d, &[0], &EvalOptions { iwae_samples: Some(0), ..Default::default() }).is_err());
    assert!(evaluate(&m, &p, &d, &[0], &EvalOptions { threads: 0, ..Default::default() }).is_err());
}
