use fama_core::copula::*;
use fama_core::encoding::{CoordLayout, Mask};
use fama_core::marginal::FrozenBank;
use fama_core::special::norm_logpdf;
use fama_core::rng::{substream, StreamRng};
use fama_core::tensor::{Graph, Tensor};
use fama_core::train::{run, Objective, TrainSchedule, TrainState};
use rand::Rng;
use rand_distr::StandardNormal;

fn tiny() -> CopulaConfig {
    CopulaConfig {
        embed_dim: 8,
        model_dim: 16,
        heads: 2,
        ff_dim: 32,
        encoder_layers: 1,
        decoder_layers: 1,
        head_layers: 2,
        head_width: 16,
        flow_layers: 2,
        flow_units: 4,
        target_noise: 0.01,
    }
}

/// Jitter every parameter so the density head is far from uniform.
fn jitter(model: &mut AttentionalCopula, scale: f64, seed: u64) {
    let mut rng = substream(seed, "jitter", 0);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let t = model.params_mut().get_mut(id);
        let n = t.len();
        let e = Tensor::randn(&[n], scale, &mut rng);
        t.data_mut().iter_mut().zip(e.data()).for_each(|(v, d)| *v += d);
    }
}

fn random_prep(d: usize, rng: &mut StreamRng) -> Prepared {
    let bank = FrozenBank::affine(d, 0.0, 0.0);
    let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    Prepared::new(&bank, &x, &vec![true; d]).unwrap()
}

#[test]
fn initial_model_is_uniform_copula() {
    let mut rng = substream(0, "c", 0);
    let model = AttentionalCopula::new(tiny(), CoordLayout::port_major(3), &mut rng);
    let prep = random_prep(18, &mut rng);
    let mask = Mask::from_ports(3, vec![1]).unwrap();
    let cond = model.conditionals(&prep, mask.flags(), &mut rng).unwrap();
    for j in 0..cond.len() {
        for u in [1e-6, 0.1, 0.5, 0.93] {
            assert!(cond.log_density(j, u).abs() < 1e-12);
        }
    }
}

#[test]
fn conditional_densities_normalize() {
    let mut rng = substream(1, "c", 0);
    let mut model = AttentionalCopula::new(tiny(), CoordLayout::port_major(3), &mut rng);
    jitter(&mut model, 0.3, 1);
    for ctx in 0..20 {
        let prep = random_prep(18, &mut rng);
        let m = Mask::from_ports(3, vec![ctx % 3]).unwrap();
        let cond = model.conditionals(&prep, m.flags(), &mut rng).unwrap();
        for j in 0..cond.len() {
            let (lo, hi, n) = (-40.0, 40.0, 80_000);
            let dz = (hi - lo) / n as f64;
            let s: f64 = (0..n)
                .map(|k| {
                    let z = lo + (k as f64 + 0.5) * dz;
                    (cond.log_density_z(j, z) + norm_logpdf(z)).exp()
                })
                .sum::<f64>()
                * dz;
            let window = cond.cdf_z(j, hi) - cond.cdf_z(j, lo);
            assert!((s - window).abs() < 1e-3, "context {ctx} target {j}: {s} vs {window}");
            assert!(cond.cdf_z(j, -1e9) < 1e-6 && cond.cdf_z(j, 1e9) > 1.0 - 1e-6);
        }
    }
}

#[test]
fn token_sets_follow_the_mask() {
    let k = 4;
    let full = Mask::from_ports(k, (0..k).collect()).unwrap();
    assert_eq!(full.observed_indices().len(), 4 * k);
    assert_eq!(full.missing_indices().len(), 2 * k);
    let empty = Mask::from_ports(k, vec![]).unwrap();
    assert_eq!(empty.missing_indices().len(), 6 * k);

    let mut rng = substream(2, "c", 0);
    let mut model = AttentionalCopula::new(tiny(), CoordLayout::port_major(k), &mut rng);
    jitter(&mut model, 0.3, 2);
    let prep = random_prep(6 * k, &mut rng);
    let cond = model.conditionals(&prep, empty.flags(), &mut rng).unwrap();
    assert_eq!(cond.len(), 6 * k);
    // the same tags at two different steps yield different heads
    let a = cond.log_density(0, 0.3);
    let b = cond.log_density(3, 0.3);
    assert_ne!(a, b);
}

#[test]
fn empty_context_ignores_other_target_values() {
    let mut rng = substream(3, "c", 0);
    let mut model = AttentionalCopula::new(tiny(), CoordLayout::plain(3), &mut rng);
    jitter(&mut model, 0.3, 3);
    let none = vec![false; 3];
    let p1 = random_prep(3, &mut rng);
    let p2 = random_prep(3, &mut rng);
    let c1 = model.conditionals(&p1, &none, &mut substream(9, "n", 0)).unwrap();
    let c2 = model.conditionals(&p2, &none, &mut substream(9, "n", 0)).unwrap();
    for j in 0..3 {
        assert_eq!(c1.log_density(j, 0.2), c2.log_density(j, 0.2));
    }
}

#[test]
fn encoder_is_permutation_equivariant() {
    let mut rng = substream(4, "c", 0);
    let mut model = AttentionalCopula::new(tiny(), CoordLayout::plain(5), &mut rng);
    jitter(&mut model, 0.3, 4);
    let prep = random_prep(5, &mut rng);
    let order = [0, 2, 3];
    let perm = [3, 0, 2];
    let mut g = Graph::new();
    let a = model.encode_context(&mut g, &prep, &order).unwrap().unwrap();
    let b = model.encode_context(&mut g, &prep, &perm).unwrap().unwrap();
    let (ta, tb) = (g.value(a), g.value(b));
    for (rb, idx) in perm.iter().enumerate() {
        let ra = order.iter().position(|o| o == idx).unwrap();
        for (x, y) in ta.row(ra).iter().zip(tb.row(rb)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    // a single token's output depends on that token only
    let single = model.encode_context(&mut g, &prep, &[2]).unwrap().unwrap();
    let mut other = prep.clone();
    other.x[0] = 9.0;
    other.z[0] = 3.0;
    let single2 = model.encode_context(&mut g, &other, &[2]).unwrap().unwrap();
    assert_eq!(g.value(single).data(), g.value(single2).data());
}

#[test]
fn joint_loss_is_sum_of_conditionals() {
    let mut rng = substream(5, "c", 0);
    let mut model = AttentionalCopula::new(tiny(), CoordLayout::port_major(2), &mut rng);
    jitter(&mut model, 0.3, 5);
    let prep = random_prep(12, &mut rng);
    let mask = Mask::from_ports(2, vec![0]).unwrap();
    let cond = model.conditionals(&prep, mask.flags(), &mut substream(7, "n", 0)).unwrap();
    let sum: f64 = cond
        .targets
        .iter()
        .enumerate()
        .map(|(j, &i)| cond.log_density_z(j, prep.z[i]))
        .sum();
    let noise = Tensor::randn(&[cond.len(), tiny().embed_dim], 0.01, &mut substream(7, "n", 0));
    let mut g = Graph::new();
    let nll = model.sample_nll(&mut g, &prep, mask.flags(), &noise).unwrap();
    assert!((g.value(nll).item() + sum).abs() < 1e-9);
}

#[test]
fn stage_two_loss_gradient_matches_finite_differences() {
    let cfg = CopulaConfig {
        embed_dim: 4,
        model_dim: 8,
        heads: 2,
        ff_dim: 8,
        encoder_layers: 2,
        decoder_layers: 2,
        head_layers: 2,
        head_width: 8,
        flow_layers: 2,
        flow_units: 3,
        target_noise: 0.01,
    };
    let mut rng = substream(6, "c", 0);
    let mut model = AttentionalCopula::new(cfg.clone(), CoordLayout::port_major(2), &mut rng);
    jitter(&mut model, 0.2, 6);
    let prep = random_prep(12, &mut rng);
    let mask = Mask::from_ports(2, vec![1]).unwrap();
    let noise = Tensor::randn(&[mask.missing_indices().len(), cfg.embed_dim], 0.01, &mut rng);
    let loss = |m: &AttentionalCopula| {
        let mut g = Graph::new();
        let v = m.sample_nll(&mut g, &prep, mask.flags(), &noise).unwrap();
        g.value(v).item()
    };
    let mut g = Graph::new();
    let v = model.sample_nll(&mut g, &prep, mask.flags(), &noise).unwrap();
    let grads = g.backward(v).unwrap().params(&g, model.params());
    let ids: Vec<_> = model.params().ids().collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (id, grad) in ids.into_iter().zip(&grads) {
        for e in 0..grad.len() {
            let orig = model.params().get(id).data()[e];
            model.params_mut().get_mut(id).data_mut()[e] = orig + h;
            let up = loss(&model);
            model.params_mut().get_mut(id).data_mut()[e] = orig - h;
            let down = loss(&model);
            model.params_mut().get_mut(id).data_mut()[e] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = grad.data()[e];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-3, "max relative error {worst}");
}

fn toy_schedule(epochs: usize) -> TrainSchedule {
    TrainSchedule {
        epochs,
        batches_per_epoch: 100,
        batch_size: 32,
        lr: 3e-3,
        grad_clip: 50.0,
    }
}

fn held_out_nll<F: Fn(&mut StreamRng) -> (Vec<f64>, Vec<bool>)>(
    model: &AttentionalCopula,
    bank: &FrozenBank,
    sampler: F,
    n: usize,
) -> f64 {
    let mut rng = substream(1234, "held_out", 0);
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..n {
        let (x, observed) = sampler(&mut rng);
        let prep = Prepared::new(bank, &x, &vec![true; x.len()]).unwrap();
        let cond = model.conditionals(&prep, &observed, &mut rng).unwrap();
        for (j, &i) in cond.targets.iter().enumerate() {
            total -= cond.log_density_z(j, prep.z[i]);
            count += 1;
        }
    }
    total / count as f64
}

fn train_toy<F: Fn(&mut StreamRng) -> (Vec<f64>, Vec<bool>)>(
    model: &mut AttentionalCopula,
    bank: &FrozenBank,
    sampler: F,
    epochs: usize,
) {
    let s = toy_schedule(epochs);
    let mut job = CopulaTraining { model, bank, sampler };
    let mut state = TrainState::new(job.params(), s.lr);
    run(&mut job, &mut state, &s, 17, "copula", |_, _| {}).unwrap();
}

#[test]
fn independent_coordinates_learn_uniform_copula() {
    let d = 4;
    let bank = FrozenBank::affine(d, 0.0, 0.0);
    let sampler = |rng: &mut StreamRng| {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let m = rng.random_range(0..d);
        let observed: Vec<bool> = (0..d).map(|i| i < m).collect();
        (x, observed)
    };
    let mut rng = substream(8, "c", 0);
    let mut model = AttentionalCopula::new(tiny(), CoordLayout::plain(d), &mut rng);
    train_toy(&mut model, &bank, sampler, 3);
    let nll = held_out_nll(&model, &bank, sampler, 2000);
    assert!(nll.abs() < 0.05, "mean conditional NLL {nll}");
}

#[test]
fn bivariate_gaussian_matches_analytic_conditional_copula() {
    let rho: f64 = 0.8;
    let bank = FrozenBank::affine(2, 0.0, 0.0);
    let sampler = move |rng: &mut StreamRng| {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let x = vec![a, rho * a + (1.0 - rho * rho).sqrt() * b];
        let first: bool = rng.random();
        (x, vec![first, !first])
    };
    let mut rng = substream(9, "c", 0);
    let mut model = AttentionalCopula::new(tiny(), CoordLayout::plain(2), &mut rng);
    let before = held_out_nll(&model, &bank, sampler, 4000);
    train_toy(&mut model, &bank, sampler, 6);
    let nll = held_out_nll(&model, &bank, sampler, 4000);
    let analytic = 0.5 * (1.0 - rho * rho).ln();
    assert!(nll < before);
    assert!((nll - analytic).abs() < 0.1, "model {nll} vs analytic {analytic}");
}

#[test]
fn posterior_samples_respect_observations_and_bounds() {
    let k = 3;
    let d = 6 * k;
    let bank = FrozenBank::affine(d, 0.0, 0.0);
    let mut rng = substream(10, "c", 0);
    let mut model = AttentionalCopula::new(tiny(), CoordLayout::port_major(k), &mut rng);
    jitter(&mut model, 0.3, 10);
    let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mask = Mask::from_ports(k, vec![0, 2]).unwrap();
    let bound = bank.inverse_cdf(0, 1.0 - 1e-7).unwrap();
    for mode in [SamplingMode::Joint, SamplingMode::Sequential] {
        let draws = model.sample_posterior(&bank, &x, mask.flags(), 8, mode, &mut rng).unwrap();
        assert_eq!(draws.len(), 8);
        for s in &draws {
            for i in 0..d {
                if mask.is_observed(i) {
                    assert_eq!(s[i], x[i]);
                } else {
                    assert!(s[i].abs() <= bound + 1e-9);
                }
            }
        }
    }
}

#[test]
fn probit_inverts_normal_cdf() {
    for u in [1e-7, 0.01, 0.3, 0.5, 0.975, 1.0 - 1e-7] {
        let z = probit(u);
        assert!((fama_core::special::norm_cdf(z) - u).abs() < 1e-15 + 1e-12 * u);
    }
    assert!((probit(1.0 - 1e-7) - Z_MAX).abs() < 1e-9);
}
