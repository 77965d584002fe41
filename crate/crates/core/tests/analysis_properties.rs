use pcaformer::analysis::{average_reduction, mae, mse, pcc_matrix, pearson, reduction_table, MetricsRecord};
use pcaformer::dataset::SeriesTable;
use pcaformer::numeric::gaussian;
use pcaformer::{Matrix, SeededRng};
use proptest::prelude::*;

fn record(model: &str, p: Option<usize>, mse: f64, runtime_s: f64) -> MetricsRecord {
    MetricsRecord {
        dataset: "D".into(),
        model: model.into(),
        p_components: p,
        mse,
        mae: mse.sqrt(),
        runtime_s,
    }
}

fn table(seed: u64, t: usize, m: usize, mix: f64) -> SeriesTable {
    let base = gaussian(&mut SeededRng::new(seed), t, m + 1);
    let mut data = base.as_slice().to_vec();
    // blend each column into its neighbour for nontrivial correlations
    for r in 0..t {
        for c in 1..=m {
            data[r * (m + 1) + c] += mix * data[r * (m + 1) + c - 1];
        }
    }
    let all = Matrix::from_vec(t, m + 1, data).unwrap();
    let channels = all.slice_cols(0, m);
    let target = all.col(m);
    let names = (0..m).map(|c| format!("v{c}")).collect();
    SeriesTable::new(None, channels, target, names, "OT".into()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reductions_are_scale_free(
        mses in prop::collection::vec(0.01f64..2.0, 2..6),
        runtimes in prop::collection::vec(0.1f64..50.0, 2..6),
        scale in 0.01f64..100.0,
    ) {
        let n = mses.len().min(runtimes.len());
        let build = |k: f64| -> Vec<MetricsRecord> {
            (0..n)
                .map(|i| record("M", if i + 1 == n { None } else { Some(i + 1) }, mses[i] * k, runtimes[i] * k))
                .collect()
        };
        let a = reduction_table(&build(1.0), &build(1.0)).unwrap();
        let b = reduction_table(&build(scale), &build(scale)).unwrap();
        prop_assert_eq!(a[0].best_p, b[0].best_p);
        prop_assert!((a[0].mse_reduction_pct - b[0].mse_reduction_pct).abs() <= 1e-9);
        prop_assert!((a[0].runtime_reduction_pct - b[0].runtime_reduction_pct).abs() <= 1e-9);
        prop_assert!(a[0].mse_reduction_pct >= 0.0);
        prop_assert!(a[0].best_mse <= a[0].baseline_mse);
    }

    #[test]
    fn pcc_matrix_is_a_correlation_matrix(seed in any::<u64>(), m in 1usize..6, mix in -2.0f64..2.0) {
        let p = pcc_matrix(&table(seed, 60, m, mix));
        let n = p.size();
        prop_assert_eq!(n, m + 1);
        for i in 0..n {
            prop_assert_eq!(p.matrix.get(i, i), 1.0);
            for j in 0..n {
                let v = p.matrix.get(i, j);
                prop_assert!((-1.0..=1.0).contains(&v));
                prop_assert_eq!(v, p.matrix.get(j, i));
            }
        }
    }

    #[test]
    fn mse_bounds_squared_mae(a in prop::collection::vec(-10.0f64..10.0, 1..50), seed in any::<u64>()) {
        let b: Vec<f64> = gaussian(&mut SeededRng::new(seed), a.len(), 1).as_slice().to_vec();
        let (s, m) = (mse(&a, &b).unwrap(), mae(&a, &b).unwrap());
        prop_assert!(s >= 0.0 && m >= 0.0);
        prop_assert!(s + 1e-12 >= m * m);
    }
}

#[test]
fn independent_series_are_nearly_uncorrelated() {
    let p = pcc_matrix(&table(3, 10_000, 4, 0.0));
    for i in 0..p.size() {
        for j in 0..p.size() {
            if i != j {
                assert!(p.matrix.get(i, j).abs() < 0.1, "{i},{j}: {}", p.matrix.get(i, j));
            }
        }
    }
}

#[test]
fn pearson_matches_hand_values() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((pearson(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((pearson(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    // centered: x = (-1.5, -.5, .5, 1.5), y = (1, -1, -1, 1) gives zero covariance
    assert!(pearson(&x, &[1.0, -1.0, -1.0, 1.0]).unwrap().abs() < 1e-12);
    assert!(pearson(&x, &[5.0; 4]).is_none());
}

#[test]
fn averages_weight_datasets_equally() {
    let mut rows = Vec::new();
    for (d, (pca, ctl)) in [("A", (0.9, 1.0)), ("B", (0.5, 1.0))] {
        for (p, mse, rt) in [(Some(2), pca, 5.0), (None, ctl, 10.0)] {
            rows.push(MetricsRecord {
                dataset: d.into(),
                ..record("M", p, mse, rt)
            });
        }
    }
    let table = reduction_table(&rows, &rows).unwrap();
    let avg = average_reduction(&table).unwrap();
    assert_eq!(avg.len(), 1);
    assert!((avg[0].mse_reduction_pct - 30.0).abs() < 1e-9);
    assert!((avg[0].runtime_reduction_pct - 50.0).abs() < 1e-9);
}
