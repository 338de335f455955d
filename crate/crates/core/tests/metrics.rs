use rand::seq::SliceRandom;
use sdn_core::data::{Dataset, FactorSpec};
use sdn_core::layers::Direction;
use sdn_core::metrics::{
    beta_vae_metric, bits_per_dim, factor_vae_metric, rank_normalize, runtime_bench, BenchLayer, DisentangleOptions, LatentCode,
    MetricReport, BENCH_CSV_HEADER, METRICS_CSV_HEADER,
};
use sdn_core::rng::{derived, normal, seeded};
use sdn_core::{Error, Float, Result};

/// Every factor combination in index order with blank 8x8 pixels.
fn labeled_dataset() -> Dataset {
    let spec = FactorSpec::scenes(8).unwrap();
    let n = spec.num_images();
    let labels: Vec<u16> = (0..n).flat_map(|i| spec.factors_of(i)).map(|v| v as u16).collect();
    let pixels = vec![0u8; n * spec.pixels_per_image()];
    Dataset::new(spec, [0; 32], pixels, labels).unwrap()
}

/// Code built from the factor tuple of each image plus seeded per-image noise.
struct FactorCode<'a> {
    dataset: &'a Dataset,
    noise: Float,
    scale: Vec<Float>,
    /// Images are looked up through this permutation when set.
    shuffle: Option<Vec<usize>>,
}

impl LatentCode for FactorCode<'_> {
    fn dim(&self) -> usize {
        6
    }

    fn encode(&mut self, indices: &[usize]) -> Result<Vec<Vec<Float>>> {
        Ok(indices
            .iter()
            .map(|&i| {
                let src = self.shuffle.as_ref().map_or(i, |p| p[i]);
                let mut rng = derived(77, src as u64);
                self.dataset
                    .labels(src)
                    .iter()
                    .zip(&self.scale)
                    .map(|(v, s)| s * (*v as Float + self.noise * normal(&mut rng)))
                    .collect()
            })
            .collect())
    }
}

struct NoiseCode;

impl LatentCode for NoiseCode {
    fn dim(&self) -> usize {
        6
    }

    fn encode(&mut self, indices: &[usize]) -> Result<Vec<Vec<Float>>> {
        Ok(indices.iter().map(|&i| (0..6).map(|_| normal(&mut derived(i as u64, 5))).collect()).collect())
    }
}

struct ConstantCode;

impl LatentCode for ConstantCode {
    fn dim(&self) -> usize {
        4
    }

    fn encode(&mut self, indices: &[usize]) -> Result<Vec<Vec<Float>>> {
        Ok(vec![vec![1.5; 4]; indices.len()])
    }
}

fn opts() -> DisentangleOptions {
    DisentangleOptions { train_votes: 300, eval_votes: 600, pairs: 16, batch: 32, classifier_iters: 300, classifier_lr: 1.0, std_samples: 2000 }
}

fn chance_band(acc: Float, votes: usize) -> bool {
    let p = 1.0 / 6.0;
    (acc - p).abs() < 3.0 * (p * (1.0 - p) / votes as Float).sqrt()
}

#[test]
fn bits_per_dim_examples() {
    assert!((bits_per_dim(std::f64::consts::LN_2, 1) - 1.0).abs() < 1e-15);
    let d = 3 * 32 * 32;
    assert!((bits_per_dim(d as Float * (256.0 as Float).ln(), d) - 8.0).abs() < 1e-12);
    // two pixels with -log p of 3.0 and 1.5 nats
    let hand = (3.0 + 1.5) / (2.0 * 0.693_147_180_559_945_3);
    assert!((bits_per_dim(4.5, 2) - hand).abs() < 1e-15);
    assert!(bits_per_dim(4.5 + 1e-9, 2) > bits_per_dim(4.5, 2));
}

#[test]
fn beta_vae_scores_a_factor_copy_perfectly() {
    let d = labeled_dataset();
    let mut code = FactorCode { dataset: &d, noise: 0.0, scale: vec![1.0; 6], shuffle: None };
    let o = DisentangleOptions { classifier_iters: DisentangleOptions::default().classifier_iters, ..opts() };
    assert_eq!(beta_vae_metric(&mut code, &d, &o, 1).unwrap(), 1.0);
}

#[test]
fn beta_vae_on_noise_is_chance() {
    let d = labeled_dataset();
    let o = opts();
    let acc = beta_vae_metric(&mut NoiseCode, &d, &o, 2).unwrap();
    assert!(chance_band(acc, o.eval_votes), "accuracy {}", acc);
}

#[test]
fn beta_vae_ignores_per_dimension_rescaling() {
    let d = labeled_dataset();
    let mut plain = FactorCode { dataset: &d, noise: 1.5, scale: vec![1.0; 6], shuffle: None };
    let mut scaled = FactorCode { dataset: &d, noise: 1.5, scale: vec![0.01, 300.0, 2.0, 1e-3, 7.0, 50.0], shuffle: None };
    let a = beta_vae_metric(&mut plain, &d, &opts(), 3).unwrap();
    let b = beta_vae_metric(&mut scaled, &d, &opts(), 3).unwrap();
    assert_eq!(a, b);
    assert!(a > 0.3 && a < 1.0, "noisy code should be informative but imperfect: {}", a);
}

#[test]
fn metrics_are_deterministic_given_seed() {
    let d = labeled_dataset();
    let mk = || FactorCode { dataset: &d, noise: 1.0, scale: vec![1.0; 6], shuffle: None };
    assert_eq!(beta_vae_metric(&mut mk(), &d, &opts(), 9).unwrap(), beta_vae_metric(&mut mk(), &d, &opts(), 9).unwrap());
    assert_eq!(factor_vae_metric(&mut mk(), &d, &opts(), 9).unwrap(), factor_vae_metric(&mut mk(), &d, &opts(), 9).unwrap());
}

#[test]
fn factor_vae_scores_an_axis_aligned_code_perfectly() {
    let d = labeled_dataset();
    let mut code = FactorCode { dataset: &d, noise: 0.0, scale: vec![3.0, 0.1, 1.0, 2.0, 5.0, 0.5], shuffle: None };
    assert_eq!(factor_vae_metric(&mut code, &d, &opts(), 4).unwrap(), 1.0);
}

#[test]
fn factor_vae_reports_constant_codes_as_degenerate() {
    let d = labeled_dataset();
    assert!(matches!(factor_vae_metric(&mut ConstantCode, &d, &opts(), 5), Err(Error::Degenerate(_))));
}

#[test]
fn factor_vae_on_shuffled_codes_is_chance() {
    let d = labeled_dataset();
    let mut perm: Vec<usize> = (0..d.len()).collect();
    perm.shuffle(&mut seeded(6));
    let mut code = FactorCode { dataset: &d, noise: 0.0, scale: vec![1.0; 6], shuffle: Some(perm) };
    let o = opts();
    let acc = factor_vae_metric(&mut code, &d, &o, 6).unwrap();
    assert!(chance_band(acc, o.eval_votes), "accuracy {}", acc);
}

#[test]
fn metrics_need_labels_and_complete_datasets() {
    let spec = FactorSpec { factors: vec![], ..FactorSpec::scenes(8).unwrap() };
    let unlabeled = Dataset::new(spec, [0; 32], vec![0; 192 * 3], vec![]).unwrap();
    assert!(beta_vae_metric(&mut NoiseCode, &unlabeled, &opts(), 0).is_err());
    let spec = FactorSpec::scenes(8).unwrap();
    let partial = Dataset::new(spec, [0; 32], vec![0; 192], vec![0; 6]).unwrap();
    assert!(factor_vae_metric(&mut NoiseCode, &partial, &opts(), 0).is_err());
}

#[test]
fn rank_normalization_uses_midranks() {
    let train = vec![vec![1.0], vec![2.0], vec![2.0], vec![5.0]];
    let out = rank_normalize(&train, &[vec![0.0], vec![2.0], vec![9.0], vec![1.0]]);
    assert_eq!(out, vec![vec![0.0], vec![0.5], vec![1.0], vec![0.125]]);
}

#[test]
fn reports_aggregate_over_seeds() {
    let r = MetricReport::over_seeds("factorvae", "sdn_beta8", &[0.5, 0.7, 0.9], 3, "abc").unwrap();
    assert!((r.value - 0.7).abs() < 1e-15);
    assert!((r.std - 0.2).abs() < 1e-12);
    assert_eq!(r.csv_row(), format!("factorvae,sdn_beta8,{},{},3,abc", r.value, r.std));
    assert_eq!(METRICS_CSV_HEADER.split(',').count(), r.csv_row().split(',').count());
    assert!(MetricReport::over_seeds("m", "n", &[], 0, "").is_err());
    assert!(MetricReport::over_seeds("m", "n", &[Float::NAN], 0, "").is_err());
}

#[test]
fn runtime_bench_reports_timings() {
    for layer in [BenchLayer::Conv(3), BenchLayer::Sdn(vec![Direction::BottomToTop, Direction::RightToLeft])] {
        let r = runtime_bench(&layer, 4, 2, 3, 30, 5, 0).unwrap();
        assert!(r.mean_ms > 0.0 && r.std_ms >= 0.0);
        assert_eq!(r.sweep.is_some(), layer != BenchLayer::Conv(3));
        assert_eq!(r.csv_row().split(',').count(), BENCH_CSV_HEADER.split(',').count());
    }
    assert_eq!(BenchLayer::Sdn(vec![Direction::BottomToTop]).to_string(), "1dir-SDN");
    assert_eq!(BenchLayer::Conv(5).to_string(), "5x5CNN");
    assert!(runtime_bench(&BenchLayer::Conv(3), 4, 2, 3, 29, 5, 0).is_err());
    assert!(runtime_bench(&BenchLayer::Conv(3), 4, 2, 3, 30, 4, 0).is_err());
}
