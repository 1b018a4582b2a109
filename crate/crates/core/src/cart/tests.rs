use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(rows: Vec<Vec<f64>>, y: Vec<usize>) -> Dataset {
    Dataset::from_rows(rows, y).unwrap()
}

fn cfg(depth: u32) -> CartConfig {
    CartConfig { max_depth: depth, ..CartConfig::default() }
}

#[test]
fn gini_values() {
    assert_eq!(gini(&[5, 5]).unwrap(), 0.5);
    assert_eq!(gini(&[10, 0]).unwrap(), 0.0);
    assert!((gini(&[2, 1, 1]).unwrap() - 0.625).abs() < 1e-15);
    assert!(gini(&[0, 0]).is_err());
}

#[test]
fn single_midpoint_split() {
    let d = data(vec![vec![0.0], vec![0.1], vec![0.9], vec![1.0]], vec![1, 1, 2, 2]);
    let c = fit_cart(&d, &cfg(1)).unwrap();
    assert_eq!(c.hyperplane(1).unwrap(), &(vec![1.0], -0.5));
    assert_eq!(c.accuracy(&d).unwrap(), 1.0);
    assert_eq!(c.metadata().method, Method::Cart);
}

#[test]
fn pure_sample_stays_a_leaf() {
    let all = data(vec![vec![0.0], vec![0.4], vec![1.0], vec![0.2]], vec![2, 2, 2, 1]);
    let d = all.subset(&[0, 1, 2]);
    let c = fit_cart(&d, &cfg(3)).unwrap();
    assert_eq!(c.num_splits(), 0);
    assert_eq!(c.predict_scaled(&[0.7]).unwrap(), 2);
}

#[test]
fn xor_has_no_useful_axis_split() {
    let d = data(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]], vec![1, 1, 2, 2]);
    let c = fit_cart(&d, &cfg(1)).unwrap();
    assert!(c.accuracy(&d).unwrap() <= 0.75);
}

#[test]
fn equal_features_prefer_the_lowest_index() {
    let d = data(vec![vec![0.0, 0.0], vec![0.2, 0.2], vec![0.8, 0.8], vec![1.0, 1.0]], vec![1, 1, 2, 2]);
    let c = fit_cart(&d, &cfg(1)).unwrap();
    assert_eq!(c.hyperplane(1).unwrap().0, vec![1.0, 0.0]);
}

#[test]
fn min_leaf_blocks_small_children() {
    // The pure split isolates one point; a 30% minimum moves the cut inward.
    let rows = (0..10).map(|i| vec![i as f64]).collect();
    let mut y = vec![1; 10];
    y[9] = 2;
    let d = data(rows, y);
    assert_eq!(fit_cart(&d, &cfg(1)).unwrap().hyperplane(1).unwrap().1, -8.5);
    let tight = CartConfig { min_leaf_fraction: 0.3, ..cfg(1) };
    assert_eq!(fit_cart(&d, &tight).unwrap().hyperplane(1).unwrap().1, -6.5);
}

#[test]
fn active_node_cap_keeps_the_best_splits() {
    let rows = vec![vec![0.0], vec![0.1], vec![0.4], vec![0.5], vec![0.9], vec![1.0]];
    let d = data(rows, vec![1, 1, 2, 2, 3, 3]);
    let free = fit_cart(&d, &cfg(2)).unwrap();
    assert_eq!(free.num_splits(), 2);
    assert_eq!(free.accuracy(&d).unwrap(), 1.0);
    let capped = fit_cart(&d, &CartConfig { max_active_nodes: Some(1), ..cfg(2) }).unwrap();
    assert_eq!(capped.num_splits(), 1);
    assert!(capped.is_split(1));
}

#[test]
fn bad_configs() {
    let d = data(vec![vec![0.0], vec![1.0]], vec![1, 2]);
    for bad in [
        CartConfig { max_depth: 0, ..CartConfig::default() },
        CartConfig { min_leaf_fraction: 0.0, ..CartConfig::default() },
        CartConfig { min_leaf_fraction: 1.0, ..CartConfig::default() },
        CartConfig { max_active_nodes: Some(0), ..CartConfig::default() },
    ] {
        assert!(matches!(fit_cart(&d, &bad), Err(Error::InvalidArgument(_))));
    }
}

#[test]
fn json_round_trip() {
    let d = data(vec![vec![0.0, 1.0], vec![0.3, 0.2], vec![0.6, 0.9], vec![1.0, 0.0]], vec![1, 2, 1, 2]);
    let c = fit_cart(&d, &cfg(2)).unwrap();
    let back = TreeClassifier::from_json(&c.to_json().unwrap()).unwrap();
    assert_eq!(back.predict_dataset(&d).unwrap(), c.predict_dataset(&d).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_lower_impurity_and_respect_min_leaf(seed in any::<u64>(), depth in 1u32..=3, n in 4usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect()).collect();
        let y: Vec<usize> = (0..n).map(|i| if i < 3 { i + 1 } else { rng.gen_range(1..=3) }).collect();
        let d = data(rows, y);
        let config = cfg(depth);
        let c = fit_cart(&d, &config).unwrap();
        let min_leaf = config.min_leaf(n);
        let mut members = vec![Vec::new(); c.topology().node_count()];
        for i in 0..n {
            for t in c.path(d.row(i)) {
                members[t - 1].push(i);
            }
        }
        for t in c.topology().branch_nodes().filter(|&t| c.is_split(t)) {
            let (w, _) = c.hyperplane(t).unwrap();
            prop_assert_eq!(w.iter().filter(|&&v| v != 0.0).count(), 1);
            let (l, r) = (&members[2 * t - 1], &members[2 * t]);
            prop_assert!(l.len() >= min_leaf && r.len() >= min_leaf);
            let impurity = |m: &[usize]| m.len() as f64 * gini(&counts_of(&d, m)).unwrap();
            prop_assert!(impurity(l) + impurity(r) < impurity(&members[t - 1]));
        }
    }
}
