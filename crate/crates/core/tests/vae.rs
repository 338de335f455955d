mod support;

use sdn_core::layers::Direction;
use sdn_core::numerics::gradcheck::{finite_difference, relative_error};
use sdn_core::params::{ParamStore, Session};
use sdn_core::rng::{normal, normal_tensor, seeded, uniform_tensor, RngState};
use sdn_core::vae::observation::{discretized_logistic, dl_log_prob, log_likelihood};
use sdn_core::vae::{
    draw_eps, elbo, elbo_graph, interpolate, interpolation_latents, iwae_bound, mean, posterior_means, reconstruct, reparameterize,
    sample, Checkpoint, DecoderKind, ElboOptions, KlEstimator, ObservationModel, TrainingState, VaeConfig, VaeModel,
};
use sdn_core::{Error, Float, Graph, Tensor};

fn tiny(decoder: DecoderKind, observation: ObservationModel, channels: usize) -> VaeModel {
    VaeModel::new(VaeConfig {
        image_size: 8,
        channels,
        bits: 5,
        latent_dim: 3,
        encoder_channels: vec![4],
        encoder_hidden: 8,
        decoder_hidden: 8,
        decoder_base_channels: 4,
        decoder_channels: vec![3],
        decoder,
        sdn_channels: 3,
        sdn_directions: vec![Direction::BottomToTop],
        observation,
    })
    .unwrap()
}

/// Initialized parameters with every entry nudged, so no bias sits at zero.
fn jittered(model: &VaeModel, seed: u64) -> ParamStore {
    let mut p = model.init(&mut seeded(seed)).unwrap();
    let mut rng = seeded(seed + 1000);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.05 * normal(&mut rng);
        }
    }
    p
}

fn images(seed: u64, n: usize, c: usize, side: usize, bits: u32) -> Tensor {
    let top = ((1u32 << bits) - 1) as Float;
    uniform_tensor(&mut seeded(seed), &[n, c, side, side], 0.0, top + 1.0).map(|v| v.floor().min(top))
}

fn loss_value(model: &VaeModel, params: &ParamStore, x: &Tensor, eps: &Tensor, opts: ElboOptions) -> Float {
    let mut s = Session::inference(params);
    let v = elbo_graph(model, &mut s, x, eps, opts).unwrap();
    s.graph.value(v.loss).item()
}

fn analytic_grads(model: &VaeModel, params: &ParamStore, x: &Tensor, eps: &Tensor, opts: ElboOptions) -> Vec<Tensor> {
    let mut s = Session::new(params);
    let v = elbo_graph(model, &mut s, x, eps, opts).unwrap();
    s.graph.backward(v.loss).unwrap();
    s.gradients()
}

#[test]
fn default_encoder_emits_two_heads_of_ten() {
    let model = VaeModel::new(VaeConfig::default()).unwrap();
    let params = model.init(&mut seeded(0)).unwrap();
    let x = images(1, 2, 3, 32, 5);
    let mut s = Session::inference(&params);
    let (mu, ls) = model.encode(&mut s, &x).unwrap();
    assert_eq!(s.graph.shape(mu), &[2, 10]);
    assert_eq!(s.graph.shape(ls), &[2, 10]);
    assert_eq!(params.get("enc.fc1.w").unwrap().shape()[1], 20);
}

#[test]
fn encoding_is_deterministic() {
    let model = tiny(DecoderKind::Cnn, ObservationModel::Logistic, 3);
    let params = jittered(&model, 3);
    let x = images(4, 1, 3, 8, 5);
    let twice = Tensor::stack_batch(&[x.clone(), x.clone()]).unwrap();
    let m = posterior_means(&model, &params, &twice).unwrap();
    assert_eq!(m.data()[..3], m.data()[3..]);
    assert_eq!(posterior_means(&model, &params, &x).unwrap(), posterior_means(&model, &params, &x).unwrap());
}

#[test]
fn every_parameter_receives_gradient() {
    for decoder in [DecoderKind::Cnn, DecoderKind::Sdn] {
        let model = tiny(decoder, ObservationModel::Logistic, 3);
        let params = jittered(&model, 5);
        let x = images(6, 4, 3, 8, 5);
        let eps = draw_eps(&mut seeded(7), 4, 3);
        let grads = analytic_grads(&model, &params, &x, &eps, ElboOptions::standard());
        for ((name, _), g) in params.iter().zip(&grads) {
            assert!(g.norm() > 0.0, "{} has zero gradient ({})", name, decoder);
        }
    }
}

#[test]
fn collapsed_noise_returns_the_mean() {
    let mut g = Graph::new();
    let mu = g.constant(Tensor::new(&[1, 3], vec![0.3, -1.2, 4.0]).unwrap());
    let ls = g.constant(Tensor::full(&[1, 3], -50.0));
    let eps = Tensor::new(&[1, 3], vec![2.0, -3.0, 1.0]).unwrap();
    let z = reparameterize(&mut g, mu, ls, &eps).unwrap();
    assert!(g.value(z).max_abs_diff(g.value(mu)) < 1e-20);
}

#[test]
fn reparameterized_draws_match_moments() {
    let n = 100_000;
    let (m, s) = (0.7, 1.9);
    let mut g = Graph::inference();
    let mu = g.constant(Tensor::full(&[n, 1], m));
    let ls = g.constant(Tensor::full(&[n, 1], Float::ln(s)));
    let eps = draw_eps(&mut seeded(11), n, 1);
    let z = reparameterize(&mut g, mu, ls, &eps).unwrap();
    let z = g.value(z).data();
    let nf = n as Float;
    let avg = z.iter().sum::<Float>() / nf;
    let var = z.iter().map(|v| (v - avg).powi(2)).sum::<Float>() / (nf - 1.0);
    assert!((avg - m).abs() < 3.0 * s / nf.sqrt(), "mean {}", avg);
    // std error of the sample variance of a Gaussian: sigma^2 sqrt(2 / (n - 1))
    assert!((var - s * s).abs() < 3.0 * s * s * (2.0 / (nf - 1.0)).sqrt(), "var {}", var);
}

#[test]
fn same_seed_same_latent_noise() {
    assert_eq!(draw_eps(&mut seeded(2), 4, 5), draw_eps(&mut seeded(2), 4, 5));
}

#[test]
fn kl_vanishes_when_posterior_is_prior() {
    let model = tiny(DecoderKind::Cnn, ObservationModel::Logistic, 3);
    let mut params = jittered(&model, 8);
    params.get_mut("enc.fc1.w").unwrap().scale_assign(0.0);
    params.get_mut("enc.fc1.b").unwrap().scale_assign(0.0);
    let x = images(9, 3, 3, 8, 5);
    let eps = draw_eps(&mut seeded(1), 3, 3);
    let t = elbo(&model, &params, &x, &eps, ElboOptions::standard()).unwrap();
    assert!(t.kl.iter().all(|k| k.abs() < 1e-15), "{:?}", t.kl);
}

/// Monte-Carlo `E_q[log q(z) - log p(z)]` computed from scratch.
fn mc_kl(mu: &[Float], sigma: &[Float], n: usize, seed: u64) -> (Float, Float) {
    let mut rng = seeded(seed);
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        let mut v = 0.0;
        for (m, s) in mu.iter().zip(sigma) {
            let z = m + s * normal(&mut rng);
            let log_q = -0.5 * ((z - m) / s).powi(2) - s.ln();
            let log_p = -0.5 * z * z;
            v += log_q - log_p;
        }
        vals.push(v);
    }
    let nf = n as Float;
    let avg = vals.iter().sum::<Float>() / nf;
    let sd = (vals.iter().map(|v| (v - avg).powi(2)).sum::<Float>() / (nf - 1.0)).sqrt();
    (avg, sd / nf.sqrt())
}

#[test]
fn analytic_kl_matches_monte_carlo() {
    let model = tiny(DecoderKind::Cnn, ObservationModel::Logistic, 3);
    let params = jittered(&model, 12);
    let x = images(13, 2, 3, 8, 5);
    let eps = draw_eps(&mut seeded(0), 2, 3);
    let t = elbo(&model, &params, &x, &eps, ElboOptions::standard()).unwrap();
    let mut s = Session::inference(&params);
    let (mu, ls) = model.encode(&mut s, &x).unwrap();
    for b in 0..2 {
        let m = &s.graph.value(mu).data()[b * 3..b * 3 + 3];
        let sg: Vec<Float> = s.graph.value(ls).data()[b * 3..b * 3 + 3].iter().map(|v| v.exp()).collect();
        let (est, se) = mc_kl(m, &sg, 1_000_000, 40 + b as u64);
        assert!((t.kl[b] - est).abs() < 3.0 * se, "analytic {} vs mc {} ± {}", t.kl[b], est, se);
    }
}

#[test]
fn kl_is_nonnegative_and_free_bits_floor_each_dimension() {
    let model = tiny(DecoderKind::Cnn, ObservationModel::Logistic, 3);
    let params = jittered(&model, 14);
    let x = images(15, 6, 3, 8, 5);
    let eps = draw_eps(&mut seeded(2), 6, 3);
    let lambda = 0.5;
    let t = elbo(&model, &params, &x, &eps, ElboOptions { beta: 1.0, free_bits: lambda, estimator: KlEstimator::Analytic }).unwrap();
    for (k, kp) in t.kl.iter().zip(&t.kl_penalized) {
        assert!(*k >= 0.0);
        assert!(kp >= k);
        assert!(*kp >= 3.0 * lambda - 1e-12);
    }
}

#[test]
fn elbo_decomposes_exactly() {
    let model = tiny(DecoderKind::Sdn, ObservationModel::Logistic, 3);
    let params = jittered(&model, 16);
    let x = images(17, 4, 3, 8, 5);
    let eps = draw_eps(&mut seeded(3), 4, 3);
    let opts = ElboOptions { beta: 2.5, free_bits: 0.2, estimator: KlEstimator::Analytic };
    let t = elbo(&model, &params, &x, &eps, opts).unwrap();
    for (i, e) in t.elbo().iter().enumerate() {
        assert!((e - (t.recon[i] - 2.5 * t.kl[i])).abs() < 1e-12);
    }
    let loss = loss_value(&model, &params, &x, &eps, opts);
    assert!((loss + mean(&t.objective())).abs() < 1e-12);
    let standard = elbo(&model, &params, &x, &eps, ElboOptions::standard()).unwrap();
    assert_eq!(standard.elbo(), standard.objective());
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    let cases = [
        (DecoderKind::Cnn, ObservationModel::Logistic),
        (DecoderKind::Sdn, ObservationModel::Logistic),
        (DecoderKind::Sdn, ObservationModel::LogisticMixture { components: 2 }),
    ];
    for (k, (decoder, obs)) in cases.into_iter().enumerate() {
        let model = tiny(decoder, obs, 3);
        let params = jittered(&model, 20 + k as u64);
        let x = images(30 + k as u64, 2, 3, 8, 5);
        let eps = draw_eps(&mut seeded(4), 2, 3);
        let opts = ElboOptions::standard();
        let grads = analytic_grads(&model, &params, &x, &eps, opts);
        let mut worst: Float = 0.0;
        for (i, (name, t)) in params.iter().enumerate() {
            let numeric = finite_difference(
                |probe| {
                    let mut p = params.clone();
                    *p.get_mut(name).unwrap() = probe.clone();
                    loss_value(&model, &p, &x, &eps, opts)
                },
                t,
                1e-6,
            );
            let err = relative_error(&grads[i], &numeric);
            assert!(err < 1e-4, "{} ({}, {}): rel err {}", name, decoder, obs, err);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4);
    }
}

#[test]
fn mean_elbo_ignores_batch_order() {
    let model = tiny(DecoderKind::Cnn, ObservationModel::Logistic, 3);
    let params = jittered(&model, 18);
    let x = images(19, 5, 3, 8, 5);
    let eps = draw_eps(&mut seeded(5), 5, 3);
    let perm = [3usize, 0, 4, 1, 2];
    let px = Tensor::stack_batch(&perm.iter().map(|&i| x.slice_axis(0, i, 1).unwrap()).collect::<Vec<_>>()).unwrap();
    let pe = Tensor::stack_batch(&perm.iter().map(|&i| eps.slice_axis(0, i, 1).unwrap()).collect::<Vec<_>>()).unwrap();
    let a = elbo(&model, &params, &x, &eps, ElboOptions::standard()).unwrap();
    let b = elbo(&model, &params, &px, &pe, ElboOptions::standard()).unwrap();
    assert!((mean(&a.elbo()) - mean(&b.elbo())).abs() < 1e-12);
}

fn dl_prob_sum(mu: Float, log_s: Float, bits: u32) -> Float {
    let top = ((1u64 << bits) - 1) as Float;
    (0..=top as u64).map(|x| dl_log_prob(x as Float, mu, log_s, top).exp()).sum()
}

#[test]
fn discretized_logistic_sums_to_one_over_256_bins() {
    let mut rng = seeded(21);
    for _ in 0..200 {
        let mu = -20.0 + 300.0 * (normal(&mut rng).abs().min(1.0));
        let ls = -7.0 + 12.0 * (normal(&mut rng).abs().min(1.0));
        let total = dl_prob_sum(mu, ls, 8);
        assert!((total - 1.0).abs() < 1e-9, "mu {} ls {}: {}", mu, ls, total);
    }
}

#[test]
fn vanishing_scale_concentrates_on_the_bin() {
    let top = 31.0;
    for x in [0.0, 7.0, 31.0] {
        let p = dl_log_prob(x, x, -7.0, top).exp();
        assert!(p > 1.0 - 1e-12, "bin {}: {}", x, p);
    }
}

/// Composite Simpson integral of the logistic density over `[lo, hi]`.
fn logistic_mass(lo: Float, hi: Float, mu: Float, s: Float) -> Float {
    let n = 20_000;
    let h = (hi - lo) / n as Float;
    let pdf = |x: Float| {
        let e = (-(x - mu) / s).exp();
        e / (s * (1.0 + e) * (1.0 + e))
    };
    let mut acc = pdf(lo) + pdf(hi);
    for i in 1..n {
        acc += pdf(lo + i as Float * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn discretized_logistic_matches_quadrature() {
    let top = 31.0;
    let mut rng = seeded(22);
    for _ in 0..30 {
        let mu = 31.0 * normal(&mut rng).abs().min(1.0);
        let s = 0.5 + 3.0 * normal(&mut rng).abs().min(1.0);
        for x in [0.0, 1.0, 5.0, 15.0, 30.0, 31.0] {
            let tail = 60.0 * s;
            let (lo, hi) = match x {
                x if x <= 0.0 => (mu - tail, 0.5),
                x if x >= top => (top - 0.5, mu + tail),
                x => (x - 0.5, x + 0.5),
            };
            let want = logistic_mass(lo, hi, mu, s);
            let got = dl_log_prob(x, mu, s.ln(), top).exp();
            assert!((got - want).abs() < 1e-8, "x {} mu {} s {}: {} vs {}", x, mu, s, got, want);
        }
    }
}

/// Sum over all bins of one pixel's probability under `model` with raw
/// decoder outputs `raw` (length `params_per_channel`).
fn bin_sum(model: ObservationModel, raw: &[Float], bits: u32) -> Float {
    let n = 1usize << bits;
    let p = raw.len();
    let params = Tensor::from_fn(&[n, p, 1, 1], |i| raw[i % p]);
    let x = Tensor::from_fn(&[n, 1, 1, 1], |i| i as Float);
    let mut g = Graph::inference();
    let pv = g.constant(params);
    let ll = log_likelihood(&mut g, model, pv, &x, bits).unwrap();
    g.value(ll).data().iter().map(|v| v.exp()).sum()
}

#[test]
fn observation_models_normalize_over_random_draws() {
    let mut rng = seeded(23);
    for (model, per) in [(ObservationModel::Logistic, 2), (ObservationModel::LogisticMixture { components: 5 }, 15)] {
        for _ in 0..1000 {
            let raw: Vec<Float> = (0..per).map(|_| 1.5 * normal(&mut rng)).collect();
            let total = bin_sum(model, &raw, 5);
            assert!((total - 1.0).abs() < 1e-8, "{}: {}", model, total);
        }
    }
}

#[test]
fn single_component_mixture_is_the_logistic() {
    let mut rng = seeded(24);
    for _ in 0..50 {
        let (m, s) = (normal(&mut rng), normal(&mut rng));
        let x = Tensor::new(&[1, 1, 1, 1], vec![(normal(&mut rng).abs() * 10.0).floor().min(31.0)]).unwrap();
        let mut g = Graph::inference();
        let a = g.constant(Tensor::new(&[1, 2, 1, 1], vec![m, s]).unwrap());
        let b = g.constant(Tensor::new(&[1, 3, 1, 1], vec![normal(&mut rng), m, s]).unwrap());
        let la = log_likelihood(&mut g, ObservationModel::Logistic, a, &x, 5).unwrap();
        let lb = log_likelihood(&mut g, ObservationModel::LogisticMixture { components: 1 }, b, &x, 5).unwrap();
        assert!((g.value(la).item() - g.value(lb).item()).abs() < 1e-12);
    }
}

#[test]
fn mixture_ignores_component_order() {
    let k = 4;
    let mut rng = seeded(25);
    let raw: Vec<Float> = (0..3 * k).map(|_| normal(&mut rng)).collect();
    let perm = [2usize, 0, 3, 1];
    let permuted: Vec<Float> = (0..3 * k).map(|i| raw[(i / k) * k + perm[i % k]]).collect();
    let model = ObservationModel::LogisticMixture { components: k };
    for x in [0.0, 9.0, 31.0] {
        let eval = |r: &[Float]| {
            let mut g = Graph::inference();
            let p = g.constant(Tensor::new(&[1, 3 * k, 1, 1], r.to_vec()).unwrap());
            let l = log_likelihood(&mut g, model, p, &Tensor::full(&[1, 1, 1, 1], x), 5).unwrap();
            g.value(l).item()
        };
        assert!((eval(&raw) - eval(&permuted)).abs() < 1e-12);
    }
}

#[test]
fn out_of_range_bins_are_rejected() {
    let mut g = Graph::new();
    let mu = g.constant(Tensor::zeros(&[2]));
    let ls = g.constant(Tensor::zeros(&[2]));
    for bad in [vec![0.0, 32.0], vec![-1.0, 3.0], vec![0.5, 3.0]] {
        let x = Tensor::new(&[2], bad).unwrap();
        assert!(matches!(discretized_logistic(&mut g, &x, mu, ls, 5), Err(Error::Invalid(_))));
    }
}

#[test]
fn gaussian_debug_model_trains_end_to_end() {
    let model = tiny(DecoderKind::Cnn, ObservationModel::Gaussian { std: 2.0 }, 1);
    let params = jittered(&model, 26);
    let x = images(27, 2, 1, 8, 5);
    let eps = draw_eps(&mut seeded(6), 2, 3);
    let grads = analytic_grads(&model, &params, &x, &eps, ElboOptions::standard());
    assert!(grads.iter().all(|g| g.all_finite()));
}

#[test]
fn single_importance_sample_is_the_elbo() {
    for decoder in [DecoderKind::Cnn, DecoderKind::Sdn] {
        let model = tiny(decoder, ObservationModel::Logistic, 3);
        let params = jittered(&model, 28);
        let x = images(29, 4, 3, 8, 5);
        let eps = draw_eps(&mut seeded(7), 4, 3);
        let iw = iwae_bound(&model, &params, &x, &eps.clone().reshape(&[4, 1, 3]).unwrap(), 8).unwrap();
        let opts = ElboOptions { beta: 1.0, free_bits: 0.0, estimator: KlEstimator::SingleSample };
        let t = elbo(&model, &params, &x, &eps, opts).unwrap();
        for (a, b) in iw.iter().zip(t.elbo()) {
            assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
        }
    }
}

#[test]
fn importance_bound_grows_with_samples() {
    let model = tiny(DecoderKind::Cnn, ObservationModel::Logistic, 1);
    let params = jittered(&model, 31);
    let n = 200;
    let x = images(32, n, 1, 8, 5);
    let mut means = Vec::new();
    for k in [1usize, 4, 16] {
        let eps = normal_tensor(&mut seeded(100 + k as u64), &[n, k, 3], 1.0);
        means.push(mean(&iwae_bound(&model, &params, &x, &eps, 16).unwrap()));
    }
    assert!(means[0] <= means[1] && means[1] <= means[2], "{:?}", means);
}

#[test]
fn chunking_does_not_change_the_bound() {
    let model = tiny(DecoderKind::Sdn, ObservationModel::Logistic, 1);
    let params = jittered(&model, 33);
    let x = images(34, 3, 1, 8, 5);
    let eps = normal_tensor(&mut seeded(8), &[3, 7, 3], 1.0);
    let a = iwae_bound(&model, &params, &x, &eps, 1).unwrap();
    let b = iwae_bound(&model, &params, &x, &eps, 5).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-10);
    }
}

#[test]
fn zero_temperature_sampling_is_deterministic() {
    let model = tiny(DecoderKind::Sdn, ObservationModel::LogisticMixture { components: 3 }, 3);
    let params = jittered(&model, 35);
    let a = sample(&model, &params, &mut seeded(1), 4, 0.0, false).unwrap();
    let b = sample(&model, &params, &mut seeded(2), 4, 0.0, false).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.data()[..192], a.data()[192..384]);
}

#[test]
fn samples_differ_across_seeds_and_stay_in_range() {
    let model = tiny(DecoderKind::Cnn, ObservationModel::Logistic, 3);
    let params = jittered(&model, 36);
    for random_pixels in [false, true] {
        let a = sample(&model, &params, &mut seeded(1), 3, 1.0, random_pixels).unwrap();
        let b = sample(&model, &params, &mut seeded(2), 3, 1.0, random_pixels).unwrap();
        assert_ne!(a, b);
        for v in a.data().iter().chain(b.data()) {
            assert!((0.0..=31.0).contains(v) && v.fract() == 0.0);
        }
    }
    assert!(sample(&model, &params, &mut seeded(1), 1, -1.0, false).is_err());
}

#[test]
fn interpolation_endpoints_are_reconstructions() {
    let model = tiny(DecoderKind::Sdn, ObservationModel::Logistic, 3);
    let params = jittered(&model, 37);
    let x = images(38, 2, 3, 8, 5);
    let (a, b) = (x.slice_axis(0, 0, 1).unwrap(), x.slice_axis(0, 1, 1).unwrap());
    let strip = interpolate(&model, &params, &a, &b, 2).unwrap();
    assert_eq!(strip, reconstruct(&model, &params, &x).unwrap());

    let same = interpolate(&model, &params, &a, &a, 3).unwrap();
    let n = 3 * 64;
    assert_eq!(same.data()[..n], same.data()[n..2 * n]);
    assert_eq!(same.data()[..n], same.data()[2 * n..]);

    let z = interpolation_latents(&model, &params, &a, &b, 3).unwrap();
    let row = |i: usize| &z.data()[i * 3..i * 3 + 3];
    let dist = |p: &[Float], q: &[Float]| p.iter().zip(q).map(|(u, v)| (u - v).powi(2)).sum::<Float>().sqrt();
    let ends = dist(row(0), row(2));
    assert!(ends > 0.0);
    assert!(dist(row(0), row(1)) < ends && dist(row(1), row(2)) < ends);
    assert!(interpolate(&model, &params, &a, &b, 1).is_err());
}

#[test]
fn decoders_differ_only_by_the_sdn_layer() {
    let cnn = tiny(DecoderKind::Cnn, ObservationModel::Logistic, 3);
    let sdn = tiny(DecoderKind::Sdn, ObservationModel::Logistic, 3);
    let strip = |m: &VaeModel, drop: &str| -> Vec<(String, Vec<usize>)> {
        m.param_shapes().into_iter().filter(|(n, _)| !n.starts_with(drop)).collect()
    };
    assert_eq!(strip(&cnn, "dec.up0"), strip(&sdn, "dec.sdn."));
    let sdn_count: usize = sdn.sdn_layer().unwrap().param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let up_count = 4 * 3 * 16 + 3;
    assert_eq!(sdn.count_parameters() - sdn_count, cnn.count_parameters() - up_count);
}

fn sample_checkpoint() -> Checkpoint {
    let model = tiny(DecoderKind::Sdn, ObservationModel::Logistic, 3);
    let params = jittered(&model, 39);
    let mut rng = seeded(5);
    normal(&mut rng);
    Checkpoint {
        config_digest: [7; 32],
        config_text: "[model]\nlatent_dim = 3\n".into(),
        params: params.clone(),
        state: Some(TrainingState {
            step: 42,
            first_moment: params.zeros_like(),
            second_moment: params.clone(),
            ema: jittered(&model, 40),
            rng: RngState::capture(&rng),
        }),
    }
}

#[test]
fn checkpoint_round_trips() {
    let ck = sample_checkpoint();
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.eval_params(), &ck.state.as_ref().unwrap().ema);
    let mut stripped = ck.clone();
    stripped.state = None;
    let back = Checkpoint::from_bytes(&stripped.to_bytes()).unwrap();
    assert_eq!(back.eval_params(), &ck.params);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
}

#[test]
fn restored_rng_continues_the_stream() {
    let mut rng = seeded(9);
    normal(&mut rng);
    let state = RngState::capture(&rng);
    let next: Vec<Float> = (0..5).map(|_| normal(&mut rng)).collect();
    let mut again = state.restore();
    assert_eq!(next, (0..5).map(|_| normal(&mut again)).collect::<Vec<_>>());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = sample_checkpoint().to_bytes();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_version = bytes.clone();
    bad_version[8] = 9;
    let mut trailing = bytes.clone();
    trailing.push(0);
    for bad in [bad_magic, bad_version, bytes[..bytes.len() - 3].to_vec(), bytes[..20].to_vec(), trailing] {
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
    }
}
