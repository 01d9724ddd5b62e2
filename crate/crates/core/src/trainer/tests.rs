use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::datakit::{apply_label_mask, apply_view_mask, generate_synthetic, split, SyntheticSpec};
use crate::diffcore::{finite_diff_gradient, max_relative_error};
use crate::genmodels::MIX_LOGITS;

fn gaussian_dataset(n: usize, dims: &[usize], k: usize, labeled: usize, seed: u64) -> MultiViewDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views = dims
        .iter()
        .map(|&d| {
            let v: Vec<f64> = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor::matrix(n, d, v).unwrap()
        })
        .collect();
    let labels = (0..n).map(|i| (i < labeled).then_some(i % k)).collect();
    MultiViewDataset::new(views, labels, k).unwrap()
}

fn small_cfg(kind: ModelKind) -> TrainConfig {
    TrainConfig {
        kind,
        latent_dim: 2,
        hidden_widths: vec![4],
        lr: 1e-2,
        batch_size: 8,
        epochs: 3,
        ..TrainConfig::default()
    }
}

fn full_plan(ds: &MultiViewDataset, kind: ModelKind) -> MinibatchPlan {
    let cfg = TrainConfig {
        kind,
        batch_size: ds.len().max(2),
        ..TrainConfig::default()
    };
    let mut plans = plan_minibatches(ds, &cfg, 0).unwrap();
    assert_eq!(plans.len(), 1);
    plans.pop().unwrap()
}

// ---------- config ----------

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { lr: f64::NAN, ..TrainConfig::default() },
        TrainConfig { batch_size: 1, ..TrainConfig::default() },
        TrainConfig { c: 0.0, ..TrainConfig::default() },
        TrainConfig { c2: -0.5, ..TrainConfig::default() },
        TrainConfig { t: 0, ..TrainConfig::default() },
        TrainConfig { grad_clip: Some(0.0), ..TrainConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
    }
}

#[test]
fn config_defaults() {
    let c = TrainConfig::default();
    assert_eq!((c.latent_dim, c.hidden_widths.as_slice(), c.lr), (30, &[100, 50][..], 3e-4));
    assert_eq!((c.t, c.t_m, c.variance_floor), (1, 1, 1e-6));
    assert_eq!((c.batch_size, c.epochs), (64, 100));
}

// ---------- planning ----------

#[test]
fn one_labeled_sample_per_batch() {
    let ds = gaussian_dataset(100, &[2, 2], 2, 10, 0);
    let cfg = TrainConfig {
        batch_size: 10,
        ..small_cfg(ModelKind::Smvae)
    };
    let plans = plan_minibatches(&ds, &cfg, 0).unwrap();
    assert_eq!(plans.len(), 10);
    for p in &plans {
        assert_eq!(p.n_labeled(), 1);
        assert_eq!(p.len(), 10);
    }
}

#[test]
fn all_labeled_plans_are_shuffles() {
    let ds = gaussian_dataset(40, &[2, 2], 2, 40, 0);
    let cfg = small_cfg(ModelKind::Smvae);
    let plans = plan_minibatches(&ds, &cfg, 0).unwrap();
    assert_eq!(plans.len(), 5);
    for p in &plans {
        assert_eq!(p.n_unlabeled(), 0);
        assert_eq!(p.len(), 8);
    }
    let flat: Vec<usize> = plans.iter().flat_map(|p| p.indices()).collect();
    assert_ne!(flat, (0..40).collect::<Vec<_>>(), "not shuffled");
}

#[test]
fn epochs_are_permutations() {
    let ds = apply_view_mask(&gaussian_dataset(97, &[3, 2], 3, 13, 1), 0.4, 1, 2).unwrap();
    for kind in [ModelKind::Mvae, ModelKind::Smvae, ModelKind::Simvae] {
        let ds = if kind == ModelKind::Simvae { ds.clone() } else { ds.complete_only() };
        for seed in 0..50 {
            let cfg = TrainConfig {
                seed,
                batch_size: 16,
                ..small_cfg(kind)
            };
            let plans = plan_minibatches(&ds, &cfg, seed as usize % 3).unwrap();
            let mut flat: Vec<usize> = plans.iter().flat_map(|p| p.indices()).collect();
            flat.sort_unstable();
            assert_eq!(flat, (0..ds.len()).collect::<Vec<_>>());
            for p in &plans {
                if kind.is_supervised() {
                    assert!(p.n_labeled() >= 1);
                }
                if kind == ModelKind::Simvae {
                    assert!(p.n_complete() >= 1);
                }
                for &i in &p.labeled_complete {
                    assert!(ds.is_labeled(i) && ds.is_complete(i));
                }
                for &i in &p.unlabeled_incomplete {
                    assert!(!ds.is_labeled(i) && !ds.is_complete(i));
                }
            }
        }
    }
}

#[test]
fn planning_is_keyed_by_seed_and_epoch() {
    let ds = gaussian_dataset(50, &[2, 2], 2, 10, 0);
    let cfg = small_cfg(ModelKind::Smvae);
    let a = plan_minibatches(&ds, &cfg, 3).unwrap();
    assert_eq!(a, plan_minibatches(&ds, &cfg, 3).unwrap());
    assert_ne!(a, plan_minibatches(&ds, &cfg, 4).unwrap());
    let other = TrainConfig { seed: 1, ..cfg };
    assert_ne!(a, plan_minibatches(&ds, &other, 3).unwrap());
}

#[test]
fn batches_capped_by_scarce_strata() {
    let ds = gaussian_dataset(100, &[2, 2], 2, 3, 0);
    let plans = plan_minibatches(&ds, &small_cfg(ModelKind::Smvae), 0).unwrap();
    assert_eq!(plans.len(), 3);

    // 100 labeled rows but only 2 complete ones
    let base = gaussian_dataset(100, &[2, 2], 2, 100, 0);
    let present = (0..100).map(|i| i < 2).collect();
    let ds = base.with_presence(1, present).unwrap();
    let plans = plan_minibatches(&ds, &small_cfg(ModelKind::Simvae), 0).unwrap();
    assert_eq!(plans.len(), 2);
    assert!(plans.iter().all(|p| p.n_complete() == 1));
}

#[test]
fn planning_preconditions() {
    let none_labeled = gaussian_dataset(20, &[2, 2], 2, 0, 0);
    assert!(matches!(
        plan_minibatches(&none_labeled, &small_cfg(ModelKind::Smvae), 0),
        Err(Error::Config(_))
    ));
    assert!(plan_minibatches(&none_labeled, &small_cfg(ModelKind::Mvae), 0).is_ok());

    let ds = gaussian_dataset(20, &[2, 2], 2, 20, 0);
    let none_complete = ds.with_presence(1, vec![false; 20]).unwrap();
    assert!(matches!(
        plan_minibatches(&none_complete, &small_cfg(ModelKind::Simvae), 0),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        plan_minibatches(&none_complete, &small_cfg(ModelKind::Smvae), 0),
        Err(Error::Config(_))
    ));
}

// ---------- noise ----------

#[test]
fn counter_noise_is_keyed() {
    let n = CounterNoise::new(7, 2, 3);
    let s = NoiseStream::Latent { component: 1, t: 0, draw: 0 };
    let mut a = [0.0; 5];
    let mut b = [0.0; 5];
    n.fill(4, s, &mut a);
    n.fill(4, s, &mut b);
    assert_eq!(a, b);
    for (other, sample, stream) in [
        (CounterNoise::new(8, 2, 3), 4, s),
        (CounterNoise::new(7, 3, 3), 4, s),
        (CounterNoise::new(7, 2, 4), 4, s),
        (n, 5, s),
        (n, 4, NoiseStream::Latent { component: 0, t: 0, draw: 0 }),
        (n, 4, NoiseStream::Latent { component: 1, t: 1, draw: 0 }),
        (n, 4, NoiseStream::Missing { draw: 0 }),
    ] {
        other.fill(sample, stream, &mut b);
        assert_ne!(a, b);
    }
}

#[test]
fn counter_noise_is_standard_normal() {
    let n = CounterNoise::new(1, 0, 0);
    let mut buf = [0.0; 4];
    let mut xs = Vec::new();
    for i in 0..5000 {
        n.fill(i, NoiseStream::Missing { draw: 0 }, &mut buf);
        xs.extend_from_slice(&buf);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    let se = (1.0 / xs.len() as f64).sqrt();
    assert!(m.abs() < 4.0 * se, "mean {m}");
    assert!((v - 1.0).abs() < 4.0 * (2.0 / xs.len() as f64).sqrt(), "var {v}");
}

#[test]
fn one_draw_per_key_shared_by_all_terms() {
    let mut ds = apply_view_mask(&gaussian_dataset(12, &[3, 2], 2, 6, 3), 0.5, 1, 0).unwrap();
    ds = ds.clone();
    let cfg = TrainConfig { t: 2, t_m: 3, ..small_cfg(ModelKind::Simvae) };
    let model = MultiViewModel::new(cfg.architecture(&ds).unwrap(), 0).unwrap();
    let plan = full_plan(&ds, ModelKind::Simvae);
    let base = CounterNoise::new(0, 0, 0);
    let ledger = NoiseLedger::new(&base);
    estimate_gradients(&model, &ds, &plan, &cfg, &ledger).unwrap();

    let mut seen: HashMap<(usize, NoiseStream), Vec<f64>> = HashMap::new();
    for (sample, stream, values) in ledger.entries() {
        match seen.get(&(sample, stream)) {
            Some(prev) => assert_eq!(prev, &values, "key ({sample}, {stream:?}) drew twice"),
            None => {
                seen.insert((sample, stream), values);
            }
        }
    }
    // every sample uses T draws per posterior component
    for i in 0..ds.len() {
        let latent: BTreeSet<(usize, usize)> = seen
            .keys()
            .filter(|(s, _)| *s == i)
            .filter_map(|(_, st)| match st {
                NoiseStream::Latent { component, t, .. } => Some((*component, *t)),
                _ => None,
            })
            .collect();
        assert_eq!(latent, (0..2).flat_map(|l| (0..2).map(move |t| (l, t))).collect());
        let missing = seen
            .keys()
            .filter(|(s, st)| *s == i && matches!(st, NoiseStream::Missing { .. }))
            .count();
        assert_eq!(missing, if ds.is_complete(i) { 0 } else { 3 });
    }
}

// ---------- gradients ----------

fn fd_check(kind: ModelKind, ds: &MultiViewDataset) {
    let cfg = TrainConfig { t: 2, t_m: 2, c: 0.5, c1: 0.7, c2: 1.3, ..small_cfg(kind) };
    let mut model = MultiViewModel::new(cfg.architecture(ds).unwrap(), 5).unwrap();
    model.params.get_mut(MIX_LOGITS).unwrap().values_mut()[0] = 0.4;
    let plan = full_plan(ds, kind);
    let noise = CounterNoise::new(9, 0, 0);
    let (_, grads) = estimate_gradients(&model, ds, &plan, &cfg, &noise).unwrap();
    let fd = finite_diff_gradient(
        |p| {
            let m = model.with_params(p.clone())?;
            Ok(estimate_gradients(&m, ds, &plan, &cfg, &noise)?.0.value)
        },
        &model.params,
        1e-5,
    )
    .unwrap();
    let err = max_relative_error(&grads, &fd, 1e-6);
    assert!(err <= 1e-4, "{kind:?}: {err}");
}

#[test]
fn gradients_match_finite_differences() {
    let ds = gaussian_dataset(6, &[3, 2], 2, 3, 4);
    fd_check(ModelKind::Mvae, &ds);
    fd_check(ModelKind::Smvae, &ds);
    let masked = ds.with_presence(1, vec![true, false, true, false, true, false]).unwrap();
    fd_check(ModelKind::Simvae, &masked);
}

#[test]
fn symmetric_model_has_zero_lambda_gradient() {
    // two identical views, mirrored networks
    let one = gaussian_dataset(8, &[3, 3], 2, 4, 2);
    let ds = MultiViewDataset::new(vec![one.view(0).clone(), one.view(0).clone()], one.labels().to_vec(), 2).unwrap();
    let cfg = small_cfg(ModelKind::Smvae);
    let mut model = MultiViewModel::new(cfg.architecture(&ds).unwrap(), 0).unwrap();
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for name in names {
        for (a, b) in [("enc2", "enc1"), ("dec2", "dec1")] {
            if let Some(rest) = name.strip_prefix(a) {
                let src = model.params.get(&format!("{b}{rest}")).unwrap().clone();
                *model.params.get_mut(&name).unwrap() = src;
            }
        }
    }
    // a noise source that does not distinguish the two components
    let noise = crate::genmodels::FnNoise(|sample: usize, stream: NoiseStream, out: &mut [f64]| {
        let t = match stream {
            NoiseStream::Latent { t, .. } => t,
            NoiseStream::Missing { draw } => draw + 100,
        };
        CounterNoise::new(0, 0, 0).fill(sample, NoiseStream::Missing { draw: t }, out);
    });
    let (_, grads) = estimate_gradients(&model, &ds, &full_plan(&ds, ModelKind::Smvae), &cfg, &noise).unwrap();
    let g = grads.get(MIX_LOGITS).unwrap().values()[0];
    assert!(g.abs() < 1e-10, "{g}");
}

fn gradient_moments(model: &MultiViewModel, ds: &MultiViewDataset, cfg: &TrainConfig, redraws: usize) -> (Vec<f64>, Vec<f64>) {
    let plan = full_plan(ds, cfg.kind);
    let mut sum: Vec<f64> = Vec::new();
    let mut sq: Vec<f64> = Vec::new();
    for r in 0..redraws {
        let noise = CounterNoise::new(cfg.seed, r, 0);
        let (_, g) = estimate_gradients(model, ds, &plan, cfg, &noise).unwrap();
        let flat: Vec<f64> = g.iter().flat_map(|(_, t)| t.values().to_vec()).collect();
        if sum.is_empty() {
            sum = vec![0.0; flat.len()];
            sq = vec![0.0; flat.len()];
        }
        for (j, v) in flat.into_iter().enumerate() {
            sum[j] += v;
            sq[j] += v * v;
        }
    }
    let n = redraws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    (mean, se)
}

#[test]
fn single_draw_estimator_is_unbiased() {
    for kind in [ModelKind::Smvae, ModelKind::Simvae] {
        let mut ds = gaussian_dataset(4, &[2, 2], 2, 2, 6);
        if kind == ModelKind::Simvae {
            ds = ds.with_presence(1, vec![true, false, true, false]).unwrap();
        }
        let one = TrainConfig { seed: 1, ..small_cfg(kind) };
        let many = TrainConfig { t: 64, t_m: 64, seed: 2, ..one.clone() };
        let model = MultiViewModel::new(one.architecture(&ds).unwrap(), 3).unwrap();
        let (m1, s1) = gradient_moments(&model, &ds, &one, 200);
        let (m64, s64) = gradient_moments(&model, &ds, &many, 200);
        for j in 0..m1.len() {
            let tol = 4.0 * (s1[j] * s1[j] + s64[j] * s64[j]).sqrt() + 1e-12;
            assert!((m1[j] - m64[j]).abs() <= tol, "{kind:?} coordinate {j}: {} vs {} (tol {tol})", m1[j], m64[j]);
        }
    }
}

#[test]
fn nonfinite_gradient_names_the_sample() {
    let mut ds = gaussian_dataset(6, &[2, 2], 2, 6, 0);
    let mut views = ds.views().to_vec();
    views[0].set(4, 1, 1e200);
    ds = MultiViewDataset::new(views, ds.labels().to_vec(), 2).unwrap();
    let cfg = small_cfg(ModelKind::Smvae);
    let model = MultiViewModel::new(cfg.architecture(&ds).unwrap(), 0).unwrap();
    let err = estimate_gradients(&model, &ds, &full_plan(&ds, cfg.kind), &cfg, &CounterNoise::new(0, 0, 0)).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("sample 4"), "{msg}");
}

#[test]
fn empty_batch_is_rejected() {
    let ds = gaussian_dataset(4, &[2, 2], 2, 4, 0);
    let cfg = small_cfg(ModelKind::Smvae);
    let model = MultiViewModel::new(cfg.architecture(&ds).unwrap(), 0).unwrap();
    let r = estimate_gradients(&model, &ds, &MinibatchPlan::default(), &cfg, &CounterNoise::new(0, 0, 0));
    assert!(matches!(r, Err(Error::Contract(_))));
}

// ---------- training ----------

#[test]
fn zero_epochs_returns_initialization() {
    let ds = gaussian_dataset(20, &[2, 3], 2, 5, 0);
    let cfg = TrainConfig { epochs: 0, ..small_cfg(ModelKind::Smvae) };
    let (model, rec) = train(&ds, None, &cfg).unwrap();
    assert!(rec.epochs.is_empty());
    let init = MultiViewModel::new(cfg.architecture(&ds).unwrap(), cfg.seed).unwrap();
    assert_eq!(model.params, init.params);
}

#[test]
fn training_is_deterministic() {
    let ds = apply_view_mask(&gaussian_dataset(40, &[2, 3], 2, 10, 0), 0.3, 1, 1).unwrap();
    let val = apply_view_mask(&gaussian_dataset(10, &[2, 3], 2, 10, 1), 0.5, 1, 1).unwrap();
    let cfg = small_cfg(ModelKind::Simvae);
    let (m1, r1) = train(&ds, Some(&val), &cfg).unwrap();
    let (m2, r2) = train(&ds, Some(&val), &cfg).unwrap();
    assert_eq!(m1.params, m2.params);
    let strip = |r: &RunRecord| -> Vec<(usize, u64, Option<u64>, Option<u64>, Vec<u64>)> {
        r.epochs
            .iter()
            .map(|e| {
                (
                    e.epoch,
                    e.objective.to_bits(),
                    e.val_acc.map(f64::to_bits),
                    e.val_nmse.map(f64::to_bits),
                    e.lambda.iter().map(|v| v.to_bits()).collect(),
                )
            })
            .collect()
    };
    assert_eq!(strip(&r1), strip(&r2));
    assert!(r1.epochs.iter().all(|e| e.val_nmse.is_some() && e.val_acc.is_some()));
    let (m3, _) = train(&ds, Some(&val), &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(m1.params, m3.params);
}

#[test]
fn lambda_stays_inside_simplex() {
    let ds = gaussian_dataset(30, &[2, 3], 2, 30, 0);
    let cfg = TrainConfig { lr: 0.2, epochs: 10, ..small_cfg(ModelKind::Smvae) };
    let (_, rec) = train(&ds, None, &cfg).unwrap();
    let epochs: Vec<usize> = rec.epochs.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, (1..=10).collect::<Vec<_>>());
    for e in &rec.epochs {
        assert!((e.lambda.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(e.lambda.iter().all(|&l| l > 0.0));
    }
}

#[test]
fn frozen_full_batch_objective_decreases() {
    let ds = gaussian_dataset(32, &[3, 2], 2, 8, 0);
    let cfg = TrainConfig {
        batch_size: 32,
        epochs: 60,
        lr: 5e-3,
        fixed_noise: true,
        ..small_cfg(ModelKind::Smvae)
    };
    let (_, rec) = train(&ds, None, &cfg).unwrap();
    let obj: Vec<f64> = rec.epochs.iter().map(|e| e.objective).collect();
    let tail = &obj[5..];
    let ok = tail.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(ok as f64 >= 0.9 * (tail.len() - 1) as f64, "{ok}/{}: {obj:?}", tail.len() - 1);
}

#[test]
fn gradient_clip_bounds_updates() {
    let ds = gaussian_dataset(16, &[2, 2], 2, 16, 0);
    let cfg = TrainConfig { grad_clip: Some(1e-3), epochs: 2, ..small_cfg(ModelKind::Smvae) };
    let (m, _) = train(&ds, None, &cfg).unwrap();
    assert!(m.params.iter().all(|(_, t)| t.is_finite()));
}

#[test]
fn incompatible_data_is_a_config_error() {
    let ds = apply_view_mask(&gaussian_dataset(20, &[2, 2], 2, 20, 0), 0.5, 1, 0).unwrap();
    assert!(matches!(train(&ds, None, &small_cfg(ModelKind::Smvae)), Err(Error::Config(_))));
    assert!(matches!(train(&ds, None, &small_cfg(ModelKind::Mvae)), Err(Error::Config(_))));
}

#[test]
fn synthetic_run_learns_to_classify() {
    // a well-separated generator and a small network
    for seed in 0..5 {
        let spec = SyntheticSpec { n: 1000, seed, separation: 1.5, latent_dim: 4, ..SyntheticSpec::default() };
        let (ds, _) = generate_synthetic(&spec).unwrap();
        let ds = apply_label_mask(&ds, 0.2, seed).unwrap();
        let parts = split(&ds, &[0.8, 0.2], seed).unwrap();
        let cfg = TrainConfig {
            kind: ModelKind::Smvae,
            latent_dim: 4,
            hidden_widths: vec![32],
            lr: 3e-3,
            batch_size: 64,
            epochs: 20,
            seed,
            ..TrainConfig::default()
        };
        let val = parts[1].unmask();
        let (_, rec) = train(&parts[0], Some(&val), &cfg).unwrap();
        let acc = rec.epochs.last().unwrap().val_acc.unwrap();
        assert!(acc >= 0.85, "seed {seed}: {acc}");
    }
}

// ---------- evaluation ----------

fn constant_classifier(ds: &MultiViewDataset, kind: ModelKind, class: Option<usize>) -> MultiViewModel {
    let cfg = small_cfg(kind);
    let mut m = MultiViewModel::zeroed(cfg.architecture(ds).unwrap()).unwrap();
    if let Some(y) = class {
        m.params.get_mut("cls.logits.b").unwrap().values_mut()[y] = 5.0;
    }
    m
}

#[test]
fn perfect_classifier_scores_one() {
    let ds = gaussian_dataset(12, &[2, 2], 3, 12, 0);
    let labels = vec![Some(2); 12];
    let ds = MultiViewDataset::new(ds.views().to_vec(), labels, 3).unwrap();
    let m = evaluate(&constant_classifier(&ds, ModelKind::Smvae, Some(2)), &ds).unwrap();
    assert_eq!(m.accuracy, Some(1.0));
    assert_eq!(m.per_class_accuracy, vec![None, None, Some(1.0)]);
    assert!(m.nmse.is_none());
    assert!(m.mean_bound.is_finite());
}

#[test]
fn uninformed_classifier_scores_chance() {
    let ds = gaussian_dataset(400, &[2, 2], 4, 400, 0);
    let m = evaluate(&constant_classifier(&ds, ModelKind::Smvae, None), &ds).unwrap();
    let acc = m.accuracy.unwrap();
    let ci = 3.0 * (0.25f64 * 0.75 / 400.0).sqrt();
    assert!((acc - 0.25).abs() <= ci, "{acc}");
}

#[test]
fn exact_imputation_has_zero_nmse() {
    // the missing view is a constant row, which a bias-only imputer reproduces
    let n = 10;
    let base = gaussian_dataset(n, &[2, 2], 2, n, 0);
    let x2 = Tensor::from_rows(&vec![vec![1.5, -0.5, 2.0]; n]).unwrap();
    let ds = MultiViewDataset::new(vec![base.view(0).clone(), x2], base.labels().to_vec(), 2).unwrap();
    let ds = apply_view_mask(&ds, 0.5, 1, 0).unwrap();
    let mut model = constant_classifier(&ds, ModelKind::Simvae, None);
    model.params.get_mut("imp.mean.b").unwrap().values_mut().copy_from_slice(&[1.5, -0.5, 2.0]);
    let m = evaluate(&model, &ds).unwrap();
    assert_eq!(m.nmse, Some(0.0));
    let filled = filled_views(&model, &ds).unwrap();
    assert_eq!(filled[1], ds.unmask().view(1).clone());
}

#[test]
fn evaluate_rejects_empty_split() {
    let ds = gaussian_dataset(4, &[2, 2], 2, 4, 0);
    let m = constant_classifier(&ds, ModelKind::Smvae, None);
    let empty = ds.subset(&[]);
    assert!(matches!(evaluate(&m, &empty), Err(Error::UndefinedMetric(_))));
}

#[test]
fn unsupervised_model_reports_no_accuracy() {
    let ds = gaussian_dataset(10, &[2, 2], 2, 0, 0);
    let m = evaluate(&constant_classifier(&ds, ModelKind::Mvae, None), &ds).unwrap();
    assert!(m.accuracy.is_none());
    assert!(m.mean_bound.is_finite());
}
