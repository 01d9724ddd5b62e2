use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;

fn small_spec(n: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n,
        seed,
        ..Default::default()
    }
}

fn labels_of(ds: &MultiViewDataset) -> Vec<usize> {
    ds.true_labels().iter().map(|y| y.unwrap()).collect()
}

// ---------- generator ----------

#[test]
fn generator_is_deterministic_per_seed() {
    let (a, _) = generate_synthetic(&small_spec(300, 5)).unwrap();
    let (b, _) = generate_synthetic(&small_spec(300, 5)).unwrap();
    let (c, _) = generate_synthetic(&small_spec(300, 6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn noiseless_generator_lies_on_the_class_affine_subspace() {
    let spec = SyntheticSpec {
        n: 200,
        noise_sd: [1e-6, 1e-6],
        coupling: 0.0,
        seed: 3,
        ..Default::default()
    };
    let (ds, truth) = generate_synthetic(&spec).unwrap();
    let (k, dz) = (spec.num_classes, spec.latent_dim);
    let [d1, d2] = spec.view_dims;
    // x = A·[s·e_y ; z]: after removing the class column the rest is in span(B)
    let b = DMatrix::from_fn(d1 + d2, dz, |r, c| if r < d1 { truth.a1.get(r, k + c) } else { truth.a2.get(r - d1, k + c) });
    let svd = b.clone().svd(true, true);
    for y in 0..k {
        let mean = truth.class_mean(y);
        for i in 0..d1 {
            assert!((mean[i] - spec.separation * truth.a1.get(i, y)).abs() < 1e-12);
        }
    }
    for i in 0..ds.len() {
        let y = ds.true_labels()[i].unwrap();
        let x: Vec<f64> = [ds.view(0).row_slice(i), ds.view(1).row_slice(i)].concat();
        let mean = truth.class_mean(y);
        let r = DVector::from_iterator(d1 + d2, x.iter().zip(&mean).map(|(a, m)| a - m));
        let z = svd.solve(&r, 1e-12).unwrap();
        let resid = (&b * z - r).amax();
        assert!(resid < 1e-4, "row {i}: residual {resid}");
    }
}

#[test]
fn label_marginal_is_uniform() {
    let (ds, _) = generate_synthetic(&SyntheticSpec {
        n: 100_000,
        latent_dim: 1,
        view_dims: [1, 1],
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let n = ds.len() as f64;
    let p = 1.0 / 3.0;
    let se = (n * p * (1.0 - p)).sqrt();
    for c in 0..3 {
        let count = ds.true_labels().iter().filter(|y| **y == Some(c)).count() as f64;
        assert!((count - n * p).abs() <= 4.0 * se, "class {c}: {count}");
    }
}

#[test]
fn recorded_covariance_matches_the_samples() {
    let spec = SyntheticSpec {
        n: 60_000,
        view_dims: [5, 3],
        latent_dim: 2,
        seed: 21,
        ..Default::default()
    };
    let (ds, truth) = generate_synthetic(&spec).unwrap();
    let cov = truth.covariance();
    let d = 8;
    let mut emp = vec![0.0; d * d];
    let n = ds.len() as f64;
    for i in 0..ds.len() {
        let y = ds.true_labels()[i].unwrap();
        let m = truth.class_mean(y);
        let x: Vec<f64> = [ds.view(0).row_slice(i), ds.view(1).row_slice(i)].concat();
        for r in 0..d {
            for c in 0..d {
                emp[r * d + c] += (x[r] - m[r]) * (x[c] - m[c]) / n;
            }
        }
    }
    for r in 0..d {
        for c in 0..d {
            let sd = (cov.get(r, r) * cov.get(c, c) + cov.get(r, c).powi(2)).sqrt() / n.sqrt();
            assert!((emp[r * d + c] - cov.get(r, c)).abs() < 5.0 * sd, "({r},{c})");
        }
    }
}

/// Linear discriminant with the generator's true means and shared covariance.
fn bayes_accuracy(ds: &MultiViewDataset, truth: &SyntheticTruth) -> f64 {
    let k = truth.spec.num_classes;
    let d = truth.spec.view_dims.iter().sum::<usize>();
    let cov = DMatrix::from_fn(d, d, |r, c| truth.covariance().get(r, c));
    let chol = cov.cholesky().unwrap();
    let means: Vec<DVector<f64>> = (0..k).map(|y| DVector::from_vec(truth.class_mean(y))).collect();
    let w: Vec<DVector<f64>> = means.iter().map(|m| chol.solve(m)).collect();
    let b: Vec<f64> = means.iter().zip(&w).map(|(m, w)| -0.5 * m.dot(w)).collect();
    let mut hit = 0;
    for i in 0..ds.len() {
        let x = DVector::from_vec([ds.view(0).row_slice(i), ds.view(1).row_slice(i)].concat());
        let pred = (0..k)
            .max_by(|&a, &c| (w[a].dot(&x) + b[a]).partial_cmp(&(w[c].dot(&x) + b[c])).unwrap())
            .unwrap();
        hit += usize::from(Some(pred) == ds.true_labels()[i]);
    }
    hit as f64 / ds.len() as f64
}

#[test]
fn default_generator_is_bayes_separable() {
    for seed in 0..5 {
        let (ds, truth) = generate_synthetic(&small_spec(5000, seed)).unwrap();
        let acc = bayes_accuracy(&ds, &truth);
        assert!(acc >= 0.95, "seed {seed}: Bayes accuracy {acc}");
    }
}

// ---------- masking ----------

#[test]
fn full_label_fraction_is_identity() {
    let (ds, _) = generate_synthetic(&small_spec(100, 1)).unwrap();
    assert_eq!(apply_label_mask(&ds, 1.0, 3).unwrap(), ds);
}

#[test]
fn label_mask_keeps_exact_stratified_count() {
    let (ds, _) = generate_synthetic(&small_spec(1000, 2)).unwrap();
    let m = apply_label_mask(&ds, 0.02, 4).unwrap();
    assert_eq!(m.num_labeled(), 20);
    let true_counts: Vec<usize> = (0..3).map(|c| labels_of(&ds).iter().filter(|&&y| y == c).count()).collect();
    for c in 0..3 {
        let kept = m.labels().iter().filter(|y| **y == Some(c)).count() as f64;
        let prop = 20.0 * true_counts[c] as f64 / 1000.0;
        assert!((kept - prop).abs() <= 1.0, "class {c}: {kept} vs {prop}");
    }
    // masked labels keep their truth
    assert_eq!(m.true_labels(), ds.true_labels());
    for (a, b) in m.labels().iter().zip(ds.labels()) {
        assert!(a.is_none() || a == b);
    }
}

#[test]
fn tiny_label_fraction_is_adjusted_upward() {
    let (ds, _) = generate_synthetic(&small_spec(100, 2)).unwrap();
    let m = apply_label_mask(&ds, 0.01, 4).unwrap();
    assert_eq!(m.num_labeled(), 3);
    for c in 0..3 {
        assert!(m.labels().contains(&Some(c)));
    }
}

#[test]
fn label_fraction_is_validated() {
    let (ds, _) = generate_synthetic(&small_spec(10, 2)).unwrap();
    assert!(apply_label_mask(&ds, 0.0, 1).is_err());
    assert!(apply_label_mask(&ds, 1.5, 1).is_err());
    assert!(apply_view_mask(&ds, 1.0, 1, 1).is_err());
}

#[test]
fn view_mask_counts() {
    let (ds, _) = generate_synthetic(&small_spec(1000, 3)).unwrap();
    assert_eq!(apply_view_mask(&ds, 0.0, 1, 5).unwrap(), ds);
    let m = apply_view_mask(&ds, 0.5, 1, 5).unwrap();
    assert_eq!(m.len() - m.num_complete(), 500);
    for i in 0..m.len() {
        if !m.is_complete(i) {
            assert!(m.view_row(1, i).is_none());
            assert!(m.view(1).row_slice(i).iter().all(|&v| v == 0.0));
            assert_eq!(m.ground_truth().unwrap().row_slice(i), ds.view(1).row_slice(i));
        }
    }
}

#[test]
fn view_mask_is_independent_of_labels() {
    let (ds, _) = generate_synthetic(&small_spec(1000, 4)).unwrap();
    let mut diffs = Vec::new();
    for seed in 0..50 {
        let m = apply_view_mask(&apply_label_mask(&ds, 0.3, seed).unwrap(), 0.5, 1, seed).unwrap();
        let frac = |complete: bool| {
            let rows: Vec<usize> = (0..m.len()).filter(|&i| m.is_complete(i) == complete).collect();
            rows.iter().filter(|&&i| m.is_labeled(i)).count() as f64 / rows.len() as f64
        };
        diffs.push(frac(false) - frac(true));
    }
    let mean = diffs.iter().sum::<f64>() / 50.0;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
    assert!(mean.abs() <= 4.0 * sd / 50f64.sqrt(), "mean difference {mean}, sd {sd}");
}

#[test]
fn strata_partition_the_rows() {
    let (ds, _) = generate_synthetic(&small_spec(200, 4)).unwrap();
    let m = apply_view_mask(&apply_label_mask(&ds, 0.1, 1).unwrap(), 0.3, 1, 2).unwrap();
    let s = m.strata();
    let mut all: Vec<usize> = [&s.labeled_complete, &s.labeled_incomplete, &s.unlabeled_complete, &s.unlabeled_incomplete]
        .into_iter()
        .flatten()
        .copied()
        .collect();
    all.sort_unstable();
    assert_eq!(all, (0..200).collect::<Vec<_>>());
    assert_eq!(s.labeled_complete.len() + s.labeled_incomplete.len(), 20);
    assert_eq!(s.labeled_incomplete.len() + s.unlabeled_incomplete.len(), 60);
}

#[test]
fn complete_only_drops_masked_rows() {
    let (ds, _) = generate_synthetic(&small_spec(100, 4)).unwrap();
    let m = apply_view_mask(&ds, 0.3, 1, 2).unwrap();
    let c = m.complete_only();
    assert_eq!(c.len(), 70);
    assert_eq!(c.num_complete(), 70);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unmasking_restores_the_data_bit_exactly(seed in 0u64..10_000, frac in 0.0f64..0.95) {
        let (ds, _) = generate_synthetic(&small_spec(120, seed)).unwrap();
        let masked = apply_view_mask(&ds, frac, 1, seed + 1).unwrap();
        let back = masked.unmask();
        prop_assert_eq!(back.views(), ds.views());
        prop_assert!(back.present().iter().all(|&p| p));
    }

    #[test]
    fn label_and_view_masks_commute(seed in 0u64..10_000, fl in 0.01f64..1.0, fm in 0.0f64..0.95) {
        let (ds, _) = generate_synthetic(&small_spec(150, seed)).unwrap();
        let a = apply_view_mask(&apply_label_mask(&ds, fl, seed).unwrap(), fm, 1, seed).unwrap();
        let b = apply_label_mask(&apply_view_mask(&ds, fm, 1, seed).unwrap(), fl, seed).unwrap();
        prop_assert_eq!(a.strata(), b.strata());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn nmse_is_scale_consistent(seed in 0u64..1000, c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0]) {
        let (ds, _) = generate_synthetic(&small_spec(20, seed)).unwrap();
        let x = ds.view(1);
        let xh = ds.view(0).select_rows(&(0..20).collect::<Vec<_>>());
        let xh = Tensor::matrix(20, 8, xh.values()[..160].to_vec()).unwrap();
        let a = metric_nmse(x, &xh).unwrap();
        let b = metric_nmse(&x.map(|v| v * c), &xh.map(|v| v * c)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}

// ---------- metrics ----------

#[test]
fn nmse_examples() {
    let x = Tensor::row(&[3.0, 4.0]);
    assert_eq!(metric_nmse(&x, &x).unwrap(), 0.0);
    assert_eq!(metric_nmse(&x, &Tensor::row(&[0.0, 0.0])).unwrap(), 1.0);
    assert!((metric_nmse(&x, &Tensor::row(&[3.0, 0.0])).unwrap() - 0.8).abs() < 1e-15);
    assert!(matches!(
        metric_nmse(&Tensor::row(&[0.0, 0.0]), &x),
        Err(Error::UndefinedMetric(_))
    ));
    assert!(matches!(metric_nmse(&x, &Tensor::row(&[1.0])), Err(Error::Dimension { .. })));
}

#[test]
fn accuracy_metrics() {
    assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
    assert_eq!(accuracy(&[0, 1, 1, 2], &[0, 1, 2, 0]).unwrap(), 0.5);
    assert!(accuracy(&[], &[]).is_err());
    let pc = per_class_accuracy(&[0, 1, 1, 2], &[0, 1, 2, 0], 4);
    assert_eq!(pc, vec![Some(0.5), Some(1.0), Some(0.0), None]);
}

// ---------- splits ----------

#[test]
fn split_sizes_and_coverage() {
    let (ds, _) = generate_synthetic(&small_spec(1000, 8)).unwrap();
    // tag rows so we can trace them through the split
    let tagged = MultiViewDataset::new(
        vec![Tensor::matrix(1000, 1, (0..1000).map(|i| i as f64).collect()).unwrap(), ds.view(1).clone()],
        ds.true_labels().to_vec(),
        3,
    )
    .unwrap();
    let parts = split(&tagged, &[0.8, 0.1, 0.1], 9).unwrap();
    assert_eq!(parts.iter().map(MultiViewDataset::len).collect::<Vec<_>>(), vec![800, 100, 100]);
    let mut all: Vec<usize> = parts.iter().flat_map(|p| p.view(0).values().iter().map(|&v| v as usize)).collect();
    all.sort_unstable();
    assert_eq!(all, (0..1000).collect::<Vec<_>>());

    let total: Vec<usize> = (0..3).map(|c| labels_of(&ds).iter().filter(|&&y| y == c).count()).collect();
    for (p, r) in parts.iter().zip([0.8, 0.1, 0.1]) {
        for c in 0..3 {
            let got = labels_of(p).iter().filter(|&&y| y == c).count() as f64;
            assert!((got - r * total[c] as f64).abs() <= 2.0, "class {c}: {got}");
        }
    }
}

#[test]
fn split_rejects_bad_ratios_and_empty_parts() {
    let (ds, _) = generate_synthetic(&small_spec(10, 8)).unwrap();
    assert!(split(&ds, &[0.5, 0.6], 1).is_err());
    assert!(split(&ds, &[0.99, 0.01], 1).is_err());
}

// ---------- standardization ----------

#[test]
fn standardizer_uses_observed_training_rows_only() {
    let (ds, _) = generate_synthetic(&small_spec(400, 12)).unwrap();
    let m = apply_view_mask(&ds, 0.5, 1, 3).unwrap();
    let st = Standardizer::fit(&m);
    let z = st.apply(&m);
    for v in 0..2 {
        let rows: Vec<&[f64]> = (0..z.len()).filter_map(|i| z.view_row(v, i)).collect();
        for j in 0..z.view(v).cols() {
            let n = rows.len() as f64;
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-10);
        }
    }
    // withheld values follow the same map and unmask consistently
    let back = z.unmask();
    let direct = st.transform_view(1, ds.view(1));
    for (a, b) in back.view(1).values().iter().zip(direct.values()) {
        assert!((a - b).abs() < 1e-12);
    }
    let inv = st.inverse_view(1, &direct);
    for (a, b) in inv.values().iter().zip(ds.view(1).values()) {
        assert!((a - b).abs() < 1e-10);
    }
}

// ---------- csv ----------

fn paths(dir: &std::path::Path, mask: bool) -> CsvPaths {
    CsvPaths {
        view1: dir.join("v1.csv"),
        view2: dir.join("v2.csv"),
        labels: dir.join("labels.csv"),
        mask: mask.then(|| dir.join("mask.csv")),
    }
}

#[test]
fn csv_three_row_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let p = paths(dir.path(), false);
    std::fs::write(&p.view1, "f0,f1\n1.0,2.0\n3,4\n-5e-1,6\n").unwrap();
    std::fs::write(&p.view2, "f0\n0.5\n0.25\n1\n").unwrap();
    std::fs::write(&p.labels, "label\n0\n-1\n2\n").unwrap();
    let ds = load_csv_views(&p, None).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.num_classes(), 3);
    assert_eq!(ds.labels(), &[Some(0), None, Some(2)]);
    assert_eq!(ds.view(0).row_slice(2), &[-0.5, 6.0]);
}

#[test]
fn csv_all_unlabeled() {
    let dir = tempfile::tempdir().unwrap();
    let p = paths(dir.path(), false);
    std::fs::write(&p.view1, "f0\n1\n2\n").unwrap();
    std::fs::write(&p.view2, "f0\n1\n2\n").unwrap();
    std::fs::write(&p.labels, "label\n-1\n-1\n").unwrap();
    let ds = load_csv_views(&p, Some(3)).unwrap();
    assert_eq!(ds.num_labeled(), 0);
}

#[test]
fn csv_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = paths(dir.path(), false);
    std::fs::write(&p.view1, "f0,f1\n1,2\n3,x\n").unwrap();
    std::fs::write(&p.view2, "f0\n1\n2\n").unwrap();
    std::fs::write(&p.labels, "label\n0\n1\n").unwrap();
    match load_csv_views(&p, None) {
        Err(Error::Parse { line, path, .. }) => {
            assert_eq!(line, 3);
            assert_eq!(path, p.view1);
        }
        other => panic!("{other:?}"),
    }
    std::fs::write(&p.view1, "f0,f1\n1,2\n3,4\n").unwrap();
    std::fs::write(&p.labels, "label\n0\n5\n").unwrap();
    assert!(matches!(load_csv_views(&p, Some(3)), Err(Error::Parse { line: 3, .. })));
    std::fs::write(&p.labels, "label\n0\n").unwrap();
    assert!(matches!(load_csv_views(&p, None), Err(Error::Parse { .. })));
}

#[test]
fn csv_round_trip_is_bit_exact() {
    use rand::Rng;
    let dir = tempfile::tempdir().unwrap();
    let p = paths(dir.path(), true);
    let mut rng = keyed_rng(7, 99);
    let n = 25;
    let x1 = Tensor::matrix(n, 310, (0..n * 310).map(|_| rng.random::<f64>() * 1e3 - 5e2).collect()).unwrap();
    let x2 = Tensor::matrix(n, 33, (0..n * 33).map(|_| rng.random::<f64>() * 1e-7).collect()).unwrap();
    let labels = (0..n).map(|i| if i % 4 == 0 { None } else { Some(i % 3) }).collect();
    let ds = MultiViewDataset::new(vec![x1, x2], labels, 3)
        .unwrap()
        .with_presence(1, (0..n).map(|i| i % 5 != 0).collect())
        .unwrap();
    write_csv_views(&ds, &p).unwrap();
    let back = load_csv_views(&p, Some(3)).unwrap();
    assert_eq!(back, ds);
}
