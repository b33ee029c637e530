use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dist::{entropic_regularizer, GammaParams, RelevanceVector};

fn toy_image() -> ImageShape {
    ImageShape::new(1, 1, 2)
}

fn toy_model(prior: &PriorSpec, seed: u64) -> Model {
    Model::new(toy_image(), 2, Architecture::Mlp { hidden: vec![] }, prior, seed).unwrap()
}

fn toy_batch(seed: u64, b: usize) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::matrix(b, 2, (0..2 * b).map(|_| rng.random_range(0.0..1.0)).collect());
    (x, standard_noise(b, 2, seed + 100))
}

fn gamma_q() -> GammaParams {
    GammaParams::new(vec![2.5, 4.0], vec![1.5, 3.0]).unwrap()
}

fn all_variants() -> Vec<(Objective, PriorSpec)> {
    let mog = PriorSpec::mog(
        vec![0.3, 0.7],
        vec![vec![-0.5, 0.2], vec![0.4, -0.1]],
        vec![vec![0.8, 1.2], vec![1.1, 0.9]],
    )
    .unwrap();
    vec![
        (Objective::Vae { beta: 1.0 }, PriorSpec::StdNormal),
        (Objective::Vae { beta: 4.0 }, PriorSpec::StdNormal),
        (Objective::FactorVae { gamma: 6.0 }, PriorSpec::StdNormal),
        (Objective::FactorVae { gamma: 6.0 }, mog),
        (Objective::BfVae0 { gamma: 6.0, eta: 5.0 }, PriorSpec::precision(vec![0.7, 2.0]).unwrap()),
        (
            Objective::BfVae1 { gamma: 6.0, hyper_kl_scale: 0.1 },
            PriorSpec::gamma_hier(vec![1.8, 3.0], gamma_q()).unwrap(),
        ),
        (
            Objective::BfVae2 { gamma: 6.0, eta_s: 2.0, eta_h: 3.0, hyper_kl_scale: 0.1 },
            PriorSpec::relevance(RelevanceVector::new(vec![0.3, 0.8], 1e-3).unwrap(), gamma_q()).unwrap(),
        ),
    ]
}

fn toy_disc() -> Discriminator {
    Discriminator::new(2, 3, 1, 9)
}

#[test]
fn every_objective_matches_central_differences() {
    let disc = toy_disc();
    let (x, noise) = toy_batch(1, 3);
    for (objective, prior) in all_variants() {
        let mut model = toy_model(&prior, 2);
        assert!(model.params.num_scalars() <= 50);
        let eval = evaluate(&objective, &model, Some(&disc), &x, &noise).unwrap();
        let analytic: Vec<f64> = eval.gradients(&model).iter().flat_map(|t| t.data().to_vec()).collect();
        let h = 1e-3;
        for k in 0..analytic.len() {
            let base = *model.params.scalar_mut(k);
            *model.params.scalar_mut(k) = base + h;
            let up = evaluate(&objective, &model, Some(&disc), &x, &noise).unwrap().breakdown.total;
            *model.params.scalar_mut(k) = base - h;
            let down = evaluate(&objective, &model, Some(&disc), &x, &noise).unwrap().breakdown.total;
            *model.params.scalar_mut(k) = base;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[k];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            assert!(err < 1e-3, "{} param {k}: analytic {a} vs fd {fd}", objective.name());
        }
    }
}

#[test]
fn breakdown_sums_to_total() {
    let disc = toy_disc();
    let (x, noise) = toy_batch(3, 5);
    for (objective, prior) in all_variants() {
        let model = toy_model(&prior, 4);
        let b = evaluate(&objective, &model, Some(&disc), &x, &noise).unwrap().breakdown;
        assert!((b.total - b.weighted_sum()).abs() < 1e-6, "{}", objective.name());
    }
}

#[test]
fn reduction_chain_holds() {
    let disc = toy_disc();
    let (x, noise) = toy_batch(5, 6);
    let gamma = 6.0;
    let std = toy_model(&PriorSpec::StdNormal, 7);
    let prec = toy_model(&PriorSpec::precision(vec![1.0, 1.0]).unwrap(), 7);
    let bf0 = objective_bfvae0(&prec, &disc, &x, &noise, gamma, 0.0).unwrap();
    let fvae = objective_fvae(&std, &disc, &x, &noise, gamma).unwrap();
    let vae = objective_vae(&std, &x, &noise, 1.0).unwrap();
    assert!((bf0.total - fvae.total).abs() < 1e-6);
    assert!((fvae.total - (vae.total + gamma * fvae.tc_proxy)).abs() < 1e-6);

    // α = 1 costs nothing extra even with η > 0
    let bf0 = objective_bfvae0(&prec, &disc, &x, &noise, gamma, 5.0).unwrap();
    assert_eq!(bf0.regularizer("alpha_dev"), Some(0.0));
    assert!((bf0.total - fvae.total).abs() < 1e-6);
}

#[test]
fn vae_beta_zero_is_plain_autoencoder_loss() {
    let (x, noise) = toy_batch(8, 4);
    let model = toy_model(&PriorSpec::StdNormal, 1);
    let b = objective_vae(&model, &x, &noise, 0.0).unwrap();
    assert_eq!(b.total, b.rec);
    let b = objective_vae(&model, &x, &noise, 2.5).unwrap();
    assert!((b.total - (b.rec + 2.5 * b.kl)).abs() < 1e-12);
}

#[test]
fn kl_term_matches_closed_form() {
    let (x, noise) = toy_batch(9, 4);
    let model = toy_model(&PriorSpec::StdNormal, 1);
    let b = objective_vae(&model, &x, &noise, 1.0).unwrap();
    let q = encode(&model, &x).unwrap();
    let direct: f64 =
        (0..4).map(|i| crate::dist::kl_gaussian_std(&q.row(i).unwrap()).iter().sum::<f64>()).sum::<f64>() / 4.0;
    assert!((b.kl - direct).abs() < 1e-12);

    let alpha = vec![0.6, 1.7];
    let model = toy_model(&PriorSpec::precision(alpha.clone()).unwrap(), 1);
    let disc = toy_disc();
    let b = objective_bfvae0(&model, &disc, &x, &noise, 0.0, 0.0).unwrap();
    let direct: f64 = (0..4)
        .map(|i| crate::dist::kl_gaussian_precision(&q.row(i).unwrap(), &alpha).unwrap().iter().sum::<f64>())
        .sum::<f64>()
        / 4.0;
    assert!((b.kl - direct).abs() < 1e-12);

    let prior = PriorSpec::gamma_hier(vec![1.8, 3.0], gamma_q()).unwrap();
    let model = toy_model(&prior, 1);
    let b = objective_bfvae1(&model, &disc, &x, &noise, 0.0, 10).unwrap();
    let direct: f64 = (0..4)
        .map(|i| crate::dist::expected_kl_under_gamma(&q.row(i).unwrap(), &gamma_q()).unwrap().iter().sum::<f64>())
        .sum::<f64>()
        / 4.0;
    assert!((b.kl - direct).abs() < 1e-12);
    let hyper: f64 =
        crate::dist::kl_gamma_gamma(&gamma_q(), &prior.hyper_prior().unwrap()).unwrap().iter().sum();
    assert!((b.hyper_kl - hyper).abs() < 1e-12);
    assert_eq!(b.hyper_kl_weight, 0.1);
}

#[test]
fn hyper_kl_vanishes_when_posterior_equals_prior() {
    let (x, noise) = toy_batch(10, 3);
    let a = vec![1.8, 3.0];
    let q = GammaParams::unit_mode(a.clone()).unwrap();
    let model = toy_model(&PriorSpec::gamma_hier(a, q).unwrap(), 1);
    let b = objective_bfvae1(&model, &toy_disc(), &x, &noise, 6.0, 100).unwrap();
    assert!(b.hyper_kl.abs() < 1e-12);
}

#[test]
fn concentrated_gamma_posterior_recovers_fvae_kl() {
    let (x, noise) = toy_batch(11, 3);
    let disc = toy_disc();
    let std = toy_model(&PriorSpec::StdNormal, 1);
    let fvae = objective_fvae(&std, &disc, &x, &noise, 6.0).unwrap();
    let q = GammaParams::new(vec![1e7; 2], vec![1e7; 2]).unwrap();
    let model = toy_model(&PriorSpec::gamma_hier(vec![2.0, 2.0], q).unwrap(), 1);
    let bf1 = objective_bfvae1(&model, &disc, &x, &noise, 6.0, 100).unwrap();
    assert!((bf1.kl - fvae.kl).abs() < 1e-6);
    assert_eq!(bf1.tc_proxy, fvae.tc_proxy);
}

#[test]
fn bfvae2_with_full_relevance_tracks_bfvae1() {
    let (x, noise) = toy_batch(12, 4);
    let disc = toy_disc();
    let eps = 1e-9;
    let a = (1.0 + 2.0 * eps) / (1.0 + eps);
    let q = gamma_q();
    let m1 = toy_model(&PriorSpec::gamma_hier(vec![a, a], q.clone()).unwrap(), 3);
    let m2 = toy_model(&PriorSpec::relevance(RelevanceVector::new(vec![1.0, 1.0], eps).unwrap(), q).unwrap(), 3);
    let b1 = objective_bfvae1(&m1, &disc, &x, &noise, 6.0, 50).unwrap();
    let b2 = objective_bfvae2(&m2, &disc, &x, &noise, 6.0, 0.0, 0.0, 50).unwrap();
    assert!((b1.total - b2.total).abs() < 1e-3, "{} vs {}", b1.total, b2.total);
}

#[test]
fn zero_relevance_masks_discriminator_input() {
    let (x, noise) = toy_batch(13, 5);
    let disc = toy_disc();
    let q = gamma_q();
    let model =
        toy_model(&PriorSpec::relevance(RelevanceVector::new(vec![0.0, 0.0], 1e-3).unwrap(), q).unwrap(), 3);
    let b = objective_bfvae2(&model, &disc, &x, &noise, 6.0, 1.0, 1.0, 50).unwrap();
    let at_zero = disc.logits(&Tensor::zeros(vec![1, 2]))[0];
    assert!((b.tc_proxy - at_zero).abs() < 1e-12);
}

#[test]
fn regularizers_match_closed_forms() {
    let (x, noise) = toy_batch(14, 3);
    let rv = RelevanceVector::new(vec![0.9, 0.1], 1e-3).unwrap();
    let model = toy_model(&PriorSpec::relevance(rv.clone(), gamma_q()).unwrap(), 3);
    let b = objective_bfvae2(&model, &toy_disc(), &x, &noise, 6.0, 2.0, 3.0, 50).unwrap();
    assert_eq!(b.regularizer("r_l1"), Some(rv.l1()));
    assert!((b.regularizer("r_entropy").unwrap() - entropic_regularizer(&rv)).abs() < 1e-15);
}

#[test]
fn masking_blocks_discriminator_gradient_per_dimension() {
    // gradient of the TC term with respect to z vanishes on a dimension with r_j = 0
    let (x, noise) = toy_batch(15, 4);
    let disc = toy_disc();
    let model =
        toy_model(&PriorSpec::relevance(RelevanceVector::new(vec![0.0, 0.6], 1e-3).unwrap(), gamma_q()).unwrap(), 3);
    let objective = Objective::BfVae2 { gamma: 1.0, eta_s: 0.0, eta_h: 0.0, hyper_kl_scale: 0.0 };
    let eval = evaluate(&objective, &model, Some(&disc), &x, &noise).unwrap();
    let mut g = eval.graph;
    let input = eval.disc_input.unwrap();
    let dp = disc.bind(&mut g, false);
    let l = disc.forward(&mut g, &dp, input);
    let tc = g.mean(l);
    let grads = g.backward(tc);
    let gz = grads.get(eval.z).unwrap();
    for i in 0..4 {
        assert_eq!(gz.row(i)[0], 0.0);
        assert_ne!(gz.row(i)[1], 0.0);
    }
}

#[test]
fn mog_with_one_standard_component_matches_std_normal_in_expectation() {
    let disc = toy_disc();
    let (x, _) = toy_batch(16, 4);
    let std = toy_model(&PriorSpec::StdNormal, 5);
    let mog = toy_model(&PriorSpec::mog(vec![1.0], vec![vec![0.0, 0.0]], vec![vec![1.0, 1.0]]).unwrap(), 5);
    let n = 2000;
    let mut diffs = Vec::with_capacity(n);
    for s in 0..n as u64 {
        let noise = standard_noise(4, 2, 1000 + s);
        let a = objective_fvae(&std, &disc, &x, &noise, 6.0).unwrap();
        let b = objective_fvae(&mog, &disc, &x, &noise, 6.0).unwrap();
        assert_eq!(a.rec, b.rec);
        diffs.push(b.kl - a.kl);
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!(mean.abs() < 3.0 * se + 1e-12, "mean {mean} se {se}");
}

#[test]
fn incompatible_prior_is_rejected() {
    let (x, noise) = toy_batch(17, 2);
    let model = toy_model(&PriorSpec::StdNormal, 1);
    let r = evaluate(&Objective::BfVae0 { gamma: 1.0, eta: 1.0 }, &model, Some(&toy_disc()), &x, &noise);
    assert!(matches!(r, Err(Error::Prior(_))));
    let r = evaluate(&Objective::FactorVae { gamma: 1.0 }, &model, None, &x, &noise);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn encode_contract() {
    let model = Model::new(ImageShape::new(1, 8, 8), 3, Architecture::Conv { channels: vec![4, 4], hidden: 8 }, &PriorSpec::StdNormal, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::matrix(4, 64, (0..256).map(|_| rng.random_range(0.0..1.0)).collect());
    let q = encode(&model, &x).unwrap();
    assert_eq!(q.mean.shape(), &[4, 3]);
    assert!(q.std.data().iter().all(|s| *s > 0.0));
    assert_eq!(encode(&model, &x).unwrap(), q);

    let mut y = x.clone();
    y.data_mut()[64 + 5] = 0.0;
    let q2 = encode(&model, &y).unwrap();
    for i in 0..4 {
        if i == 1 {
            assert_ne!(q2.mean.row(i), q.mean.row(i));
        } else {
            assert_eq!(q2.mean.row(i), q.mean.row(i));
        }
    }
    assert!(encode(&model, &Tensor::zeros(vec![2, 63])).is_err());
    assert!(encode(&model, &Tensor::filled(vec![2, 64], 1.5)).is_err());
}

#[test]
fn reparam_sample_contract() {
    let q = GaussianPosterior {
        mean: Tensor::matrix(1, 2, vec![0.5, -1.0]),
        std: Tensor::matrix(1, 2, vec![2.0, 0.1]),
    };
    assert_eq!(reparam_sample(&q, &Tensor::zeros(vec![1, 2])).unwrap(), q.mean);

    let n = 100_000;
    let big = GaussianPosterior {
        mean: Tensor::matrix(n, 2, [0.5, -1.0].repeat(n)),
        std: Tensor::matrix(n, 2, [2.0, 0.1].repeat(n)),
    };
    let z = reparam_sample(&big, &standard_noise(n, 2, 3)).unwrap();
    for (j, (m, s)) in [(0.5, 2.0), (-1.0, 0.1)].iter().enumerate() {
        let mean = (0..n).map(|i| z.row(i)[j]).sum::<f64>() / n as f64;
        assert!((mean - m).abs() < 3.0 * s / (n as f64).sqrt());
    }
}

#[test]
fn rec_loss_contract() {
    let model = toy_model(&PriorSpec::StdNormal, 0);
    // zero decoder weights give zero logits
    let mut zeroed = model.clone();
    for t in zeroed.params.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let x = Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 1.0]);
    let z = Tensor::matrix(2, 2, vec![0.3, -0.2, 1.0, 2.0]);
    let l = rec_loss(&zeroed, &x, &z).unwrap();
    assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

    // logits equal to logit(x) give the per-pixel entropy of x
    let xs = [0.2, 0.7];
    let mut exact = zeroed.clone();
    let bias = exact.params.id("dec.fc0.bias").unwrap();
    exact.params.get_mut(bias).data_mut().copy_from_slice(&xs.map(|p: f64| (p / (1.0 - p)).ln()));
    let x = Tensor::matrix(1, 2, xs.to_vec());
    let l = rec_loss(&exact, &x, &Tensor::zeros(vec![1, 2])).unwrap();
    let h: f64 = xs.iter().map(|p| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())).sum();
    assert!((l - h).abs() < 1e-12);

    assert!(rec_loss(&model, &Tensor::filled(vec![1, 2], -0.1), &Tensor::zeros(vec![1, 2])).is_err());
}

#[test]
fn rec_loss_gradient_matches_differences() {
    let (x, _) = toy_batch(20, 3);
    let mut model = toy_model(&PriorSpec::StdNormal, 0);
    let z = standard_noise(3, 2, 21);
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let zv = g.constant(z.clone());
    let logits = model.net.decode(&mut g, &p, zv);
    let rows = g.bce_logits_rows(logits, std::rc::Rc::new(x.clone()));
    let loss = g.mean(rows);
    let mut grads = g.backward(loss);
    let analytic: Vec<f64> = p.grads(&mut grads, &model.params).iter().flat_map(|t| t.data().to_vec()).collect();
    let h = 1e-3;
    for (k, a) in analytic.iter().enumerate() {
        let base = *model.params.scalar_mut(k);
        *model.params.scalar_mut(k) = base + h;
        let up = rec_loss(&model, &x, &z).unwrap();
        *model.params.scalar_mut(k) = base - h;
        let down = rec_loss(&model, &x, &z).unwrap();
        *model.params.scalar_mut(k) = base;
        let fd = (up - down) / (2.0 * h);
        assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3) < 1e-4, "param {k}: {a} vs {fd}");
    }
}

#[test]
fn permute_dims_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = standard_noise(50, 3, 2);
    let p = permute_dims(&z, &mut rng).unwrap();
    for j in 0..3 {
        let mut a: Vec<f64> = (0..50).map(|i| z.row(i)[j]).collect();
        let mut b: Vec<f64> = (0..50).map(|i| p.row(i)[j]).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }
    assert!(permute_dims(&Tensor::zeros(vec![1, 3]), &mut rng).is_err());

    // perfectly correlated input decorrelates
    let n = 4096;
    let col: Vec<f64> = standard_noise(n, 1, 3).into_data();
    let z = Tensor::matrix(n, 2, col.iter().flat_map(|v| [*v, *v]).collect());
    let p = permute_dims(&z, &mut rng).unwrap();
    let (a, b): (Vec<f64>, Vec<f64>) = (0..n).map(|i| (p.row(i)[0], p.row(i)[1])).unzip();
    let corr = correlation(&a, &b);
    assert!(corr.abs() < 0.1, "{corr}");
}

#[test]
fn discriminator_loss_contract() {
    let mut disc = Discriminator::new(2, 4, 2, 3);
    let z = standard_noise(6, 2, 4);
    // a zero final layer is at chance
    let last = disc.params.len() - 1;
    disc.params.tensors_mut()[last].data_mut().fill(0.0);
    disc.params.tensors_mut()[last - 1].data_mut().fill(0.0);
    assert!((discriminator_loss(&disc, &z, &z) - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(tc_proxy(&disc, &z), 0.0);

    // saturated, perfectly separating logits drive the loss to zero
    let mut sep = Discriminator::new(1, 1, 0, 0);
    sep.params.tensors_mut()[0].data_mut().fill(1e3);
    sep.params.tensors_mut()[1].data_mut().fill(0.0);
    let joint = Tensor::matrix(2, 1, vec![1.0, 2.0]);
    let perm = Tensor::matrix(2, 1, vec![-1.0, -2.0]);
    assert!(discriminator_loss(&sep, &joint, &perm) < 1e-300_f64.max(1e-12));
    assert!(tc_proxy(&sep, &joint) > tc_proxy(&sep, &perm));

    // gradient check
    let mut disc = Discriminator::new(2, 4, 2, 5);
    let zp = standard_noise(6, 2, 6);
    let (_, grads) = discriminator_grads(&disc, &z, &zp);
    let analytic: Vec<f64> = grads.iter().flat_map(|t| t.data().to_vec()).collect();
    let h = 1e-3;
    for (k, a) in analytic.iter().enumerate() {
        let base = *disc.params.scalar_mut(k);
        *disc.params.scalar_mut(k) = base + h;
        let up = discriminator_loss(&disc, &z, &zp);
        *disc.params.scalar_mut(k) = base - h;
        let down = discriminator_loss(&disc, &z, &zp);
        *disc.params.scalar_mut(k) = base;
        let fd = (up - down) / (2.0 * h);
        assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3) < 1e-3, "param {k}: {a} vs {fd}");
    }
}

#[test]
fn disc_view_masks_with_relevance() {
    let model =
        toy_model(&PriorSpec::relevance(RelevanceVector::new(vec![0.0, 0.5], 1e-3).unwrap(), gamma_q()).unwrap(), 0);
    let z = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(model.disc_view(&z).data(), &[0.0, 1.0, 0.0, 2.0]);
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn random_case(variant: usize, seed: u64) -> (Objective, PriorSpec, Model, Discriminator, Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=4);
    let image = ImageShape::new(1, 2, rng.random_range(1..=3));
    let hidden = if rng.random_bool(0.5) { vec![] } else { vec![rng.random_range(1..=4)] };
    let mut logu = |lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();
    let gamma = logu(1e-3, 50.0);
    let q = |rng: &mut ChaCha8Rng| {
        let mut v = |lo: f64, hi: f64| (0..d).map(|_| rng.random_range(f64::ln(lo)..f64::ln(hi)).exp()).collect::<Vec<_>>();
        GammaParams::new(v(1e-2, 1e6), v(1e-2, 1e6)).unwrap()
    };
    let (objective, prior) = match variant {
        0 => (Objective::Vae { beta: logu(1e-3, 50.0) }, PriorSpec::StdNormal),
        1 => (Objective::FactorVae { gamma }, PriorSpec::StdNormal),
        2 => {
            let k = rng.random_range(1..=4);
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = w.iter().sum();
            let means = (0..k).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            let stds = (0..k).map(|_| (0..d).map(|_| rng.random_range(f64::ln(0.05)..f64::ln(5.0)).exp()).collect()).collect();
            (Objective::FactorVae { gamma }, PriorSpec::mog(w.iter().map(|v| v / z).collect(), means, stds).unwrap())
        }
        3 => {
            let alpha = (0..d).map(|_| rng.random_range(f64::ln(1e-3)..f64::ln(1e3)).exp()).collect();
            (Objective::BfVae0 { gamma, eta: rng.random_range(0.0..100.0) }, PriorSpec::precision(alpha).unwrap())
        }
        4 => {
            let a = (0..d).map(|_| 1.0 + rng.random_range(f64::ln(1e-3)..f64::ln(1e4)).exp()).collect();
            let qa = q(&mut rng);
            (
                Objective::BfVae1 { gamma, hyper_kl_scale: rng.random_range(0.0..1.0) },
                PriorSpec::gamma_hier(a, qa).unwrap(),
            )
        }
        _ => {
            let r = (0..d)
                .map(|_| match rng.random_range(0..4) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.random_range(0.0..1.0),
                })
                .collect();
            let eps = rng.random_range(f64::ln(1e-6)..f64::ln(0.1)).exp();
            let qa = q(&mut rng);
            (
                Objective::BfVae2 {
                    gamma,
                    eta_s: rng.random_range(0.0..100.0),
                    eta_h: rng.random_range(0.0..100.0),
                    hyper_kl_scale: rng.random_range(0.0..1.0),
                },
                PriorSpec::relevance(RelevanceVector::new(r, eps).unwrap(), qa).unwrap(),
            )
        }
    };
    let model = Model::new(image, d, Architecture::Mlp { hidden }, &prior, seed).unwrap();
    let disc = Discriminator::new(d, rng.random_range(1..=8), rng.random_range(1..=2), seed + 1);
    let b = rng.random_range(2..=6);
    let x = Tensor::matrix(b, image.len(), (0..b * image.len()).map(|_| match rng.random_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..1.0),
    }).collect());
    let scale = rng.random_range(f64::ln(1e-2)..f64::ln(10.0)).exp();
    let noise = standard_noise(b, d, seed + 2).map(|v| v * scale);
    (objective, prior, model, disc, x, noise)
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(1000))]
    #[test]
    fn objectives_stay_finite(variant in 0usize..6, seed in 0u64..u64::MAX / 2) {
        let (objective, _, model, disc, x, noise) = random_case(variant, seed);
        let eval = evaluate(&objective, &model, Some(&disc), &x, &noise).unwrap();
        proptest::prop_assert!(eval.breakdown.is_finite(), "{}: {}", objective.name(), eval.breakdown);
        let grads = eval.gradients(&model);
        for ((name, _), g) in model.params.iter().zip(&grads) {
            proptest::prop_assert!(g.all_finite(), "{}: gradient of {name} is not finite", objective.name());
        }
    }
}
