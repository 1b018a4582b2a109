use super::*;
use proptest::prelude::*;
use rand::Rng;

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("f{j}")).collect()
}

fn dataset(rows: Vec<Vec<f64>>, y: Vec<usize>, k: usize) -> Dataset {
    let p = rows[0].len();
    Dataset::new(rows, y, names(p), (1..=k).map(|c| format!("c{c}")).collect()).unwrap()
}

fn costs() -> CostConfig {
    CostConfig::new(1.0, 1.0, 1.0).unwrap()
}

fn two_points() -> Dataset {
    dataset(vec![vec![0.0], vec![1.0]], vec![1, 2], 2)
}

#[test]
fn variable_counts_small_instance() {
    let d = dataset(
        vec![vec![0.0, 0.1], vec![0.4, 1.0], vec![1.0, 0.0], vec![0.7, 0.3]],
        vec![1, 2, 1, 2],
        2,
    );
    let topo = TreeTopology::new(1).unwrap();
    let m = build_model(&d, &topo, costs(), &ModelOptions::default()).unwrap();
    assert_eq!(m.num_binaries(), 26);
    assert_eq!(m.num_continuous(), 10);
    assert_eq!(m.quads.len(), 1);
    assert_eq!(m.quads[0].vars.len(), 2);
}

#[test]
fn variable_counts_follow_formulas() {
    for (n, p, k, depth) in [(5, 3, 3, 2), (7, 1, 2, 3), (3, 4, 3, 1)] {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..p).map(|j| ((i + j) % 3) as f64 / 2.0).collect()).collect();
        let y: Vec<usize> = (0..n).map(|i| i % k + 1).collect();
        let d = dataset(rows, y, k);
        let topo = TreeTopology::new(depth).unwrap();
        let m = build_model(&d, &topo, costs(), &ModelOptions::default()).unwrap();
        let t = topo.node_count();
        let b = topo.num_branch_nodes();
        let l = topo.num_leaves();
        assert_eq!(m.num_binaries(), n * t + 2 * n * b + 2 * b + k * l);
        assert_eq!(m.num_continuous(), b * (p + 1) + n * b + l + 1);
        assert_eq!(m.var_index().len(), m.num_vars(), "names are unique");
    }
}

#[test]
fn objective_touches_only_cost_variables() {
    let d = two_points();
    let topo = TreeTopology::new(2).unwrap();
    let c = CostConfig::new(3.0, 5.0, 7.0).unwrap();
    let m = build_model(&d, &topo, c, &ModelOptions::default()).unwrap();
    for &(j, coef) in &m.objective {
        let expected = match m.layout.family(j) {
            Family::Delta => 1.0,
            Family::L => 3.0,
            Family::E => 5.0,
            Family::D => 7.0,
            f => panic!("objective touches {f}"),
        };
        assert_eq!(coef, expected);
    }
    let delta = m.layout.delta();
    assert_eq!(m.objective.iter().find(|o| o.0 == delta).unwrap().1, 1.0);
}

#[test]
fn bounds_by_family() {
    let d = two_points();
    let m = build_model(&d, &TreeTopology::new(2).unwrap(), costs(), &ModelOptions::default()).unwrap();
    for (j, v) in m.variables.iter().enumerate() {
        match m.layout.family(j) {
            Family::E | Family::L | Family::Delta => assert_eq!((v.lb, v.ub), (0.0, f64::INFINITY)),
            Family::Omega | Family::Omega0 => assert_eq!((v.lb, v.ub), (-50.0, 50.0)),
            _ => {
                assert_eq!(v.kind, VarKind::Binary);
                assert_eq!((v.lb, v.ub), (0.0, 1.0));
            }
        }
    }
}

#[test]
fn leaf_error_constant() {
    assert_eq!(misclassification_bound(100, 60), 40);
    // 40 would force L >= 60 - 0 - 40 on a pure leaf of the large class.
    assert_eq!(default_c8(100, 60), 60.0);
    assert_eq!(default_c8(90, 30), 60.0);

    let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 99.0]).collect();
    let y: Vec<usize> = (0..100).map(|i| if i < 60 { 1 } else { 2 }).collect();
    let d = dataset(rows, y, 2);
    let topo = TreeTopology::new(1).unwrap();
    let m = build_model(&d, &topo, costs(), &ModelOptions::default()).unwrap();
    assert_eq!(m.c8, 60.0);
    let row = &m.constraints.iter().find(|c| c.label == "C8[1,2]").unwrap().row;
    assert_eq!(row.rhs, -60.0);

    // A pure leaf of the large class costs nothing.
    let leaves: Vec<usize> = (0..100).map(|i| if i < 60 { 2 } else { 3 }).collect();
    let x = assemble(&m, &d, &leaves, &[(vec![10.0], -6.0)], &[1, 2]);
    assert_eq!(x[m.layout.l(2)], 0.0);
    let opts = ModelOptions { c8_constant: Some(40.0), ..ModelOptions::default() };
    let weak = build_model(&d, &topo, costs(), &opts).unwrap();
    let x = assemble(&weak, &d, &leaves, &[(vec![10.0], -6.0)], &[1, 2]);
    assert_eq!(x[weak.layout.l(2)], 20.0);
}

#[test]
fn rejects_unscaled_data_and_bad_costs() {
    let d = dataset(vec![vec![0.0], vec![2.0]], vec![1, 2], 2);
    let topo = TreeTopology::new(1).unwrap();
    assert!(build_model(&d, &topo, costs(), &ModelOptions::default()).is_err());
    assert!(CostConfig::new(0.0, 1.0, 1.0).is_err());
    assert!(CostConfig::new(1.0, f64::NAN, 1.0).is_err());
}

#[test]
fn sibling_class_rows_at_depth_one() {
    let d = two_points();
    let mut m = build_model(&d, &TreeTopology::new(1).unwrap(), costs(), &ModelOptions::default()).unwrap();
    let before = m.constraints.len();
    add_valid_inequalities(&mut m, &d, &TreeTopology::new(1).unwrap(), ValidInequalities::only(2)).unwrap();
    assert_eq!(m.constraints.len() - before, 2);
}

#[test]
fn leaf_count_rows_at_depth_two() {
    let d = dataset(vec![vec![0.0], vec![0.5], vec![1.0]], vec![1, 2, 3], 3);
    let topo = TreeTopology::new(2).unwrap();
    let mut m = build_model(&d, &topo, costs(), &ModelOptions::default()).unwrap();
    let before = m.constraints.len();
    add_valid_inequalities(&mut m, &d, &topo, ValidInequalities::only(5)).unwrap();
    let added = &m.constraints[before..];
    assert_eq!(added.len(), 6);
    for c in 1..=3 {
        let lo = added.iter().find(|r| r.label == format!("VI5lo[{c}]")).unwrap();
        let hi = added.iter().find(|r| r.label == format!("VI5hi[{c}]")).unwrap();
        assert_eq!((lo.row.sense, lo.row.rhs), (Sense::Ge, 1.0));
        assert_eq!((hi.row.sense, hi.row.rhs), (Sense::Le, 3.0));
        assert_eq!(lo.row.coeffs.len(), 4);
    }
}

#[test]
fn valid_inequalities_reject_foreign_model() {
    let d = two_points();
    let mut m = build_model(&d, &TreeTopology::new(1).unwrap(), costs(), &ModelOptions::default()).unwrap();
    assert!(add_valid_inequalities(&mut m, &d, &TreeTopology::new(2).unwrap(), ValidInequalities::all()).is_err());
}

/// Random routing, hyperplanes and leaf classes assembled into a valuation.
fn random_feasible(m: &MiqpModel, d: &Dataset, rng: &mut impl Rng) -> Vec<f64> {
    let topo = m.layout.topology();
    let leaves: Vec<NodeId> = (0..d.len()).map(|_| rng.gen_range(topo.leaf_nodes())).collect();
    let (leaves, _) = compress_routing(&topo, &leaves);
    let planes: Vec<Plane> = topo
        .branch_nodes()
        .map(|_| ((0..d.num_features()).map(|_| rng.gen_range(-5.0..5.0)).collect(), rng.gen_range(-5.0..5.0)))
        .collect();
    let classes: Vec<ClassId> = topo.leaf_nodes().map(|_| rng.gen_range(1..=d.num_classes())).collect();
    assemble(m, d, &leaves, &planes, &classes)
}

fn random_dataset(rng: &mut impl Rng, n: usize, p: usize, k: usize) -> Dataset {
    let rows = (0..n).map(|_| (0..p).map(|_| rng.gen_range(0.0..=1.0)).collect()).collect();
    let y = (0..n).map(|i| if i < k { i + 1 } else { rng.gen_range(1..=k) }).collect();
    dataset(rows, y, k)
}

#[test]
fn alpha_and_h_bounds_keep_every_feasible_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for depth in 1..=2 {
        let d = random_dataset(&mut rng, 6, 2, 3);
        let topo = TreeTopology::new(depth).unwrap();
        let base = build_model(&d, &topo, costs(), &ModelOptions::default()).unwrap();
        let mut strong = base.clone();
        let families = ValidInequalities { vi3: true, vi4: true, ..ValidInequalities::none() };
        add_valid_inequalities(&mut strong, &d, &topo, families).unwrap();
        for _ in 0..500 {
            let x = random_feasible(&base, &d, &mut rng);
            assert!(check_feasible(&base, &x, 1e-9).is_feasible());
            assert!(check_feasible(&strong, &x, 1e-9).is_feasible());
            checked += 1;
        }
    }
    assert_eq!(checked, 1000);
}

#[test]
fn ancestor_pairs_keep_every_feasible_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = random_dataset(&mut rng, 7, 2, 2);
    let topo = TreeTopology::new(3).unwrap();
    let base = build_model(&d, &topo, costs(), &ModelOptions::default()).unwrap();
    let mut strong = base.clone();
    add_valid_inequalities(&mut strong, &d, &topo, ValidInequalities::only(1)).unwrap();
    assert!(strong.constraints.len() > base.constraints.len());
    for _ in 0..200 {
        let x = random_feasible(&base, &d, &mut rng);
        assert!(check_feasible(&strong, &x, 1e-9).is_feasible());
    }
}

#[test]
fn all_zero_assignment_violates_level_rows() {
    let d = two_points();
    let m = build_model(&d, &TreeTopology::new(1).unwrap(), costs(), &ModelOptions::default()).unwrap();
    let report = check_feasible(&m, &vec![0.0; m.num_vars()], 1e-9);
    assert!(report.mentions("C3["));
}

#[test]
fn hand_built_split_is_feasible() {
    let d = two_points();
    let m = build_model(&d, &TreeTopology::new(1).unwrap(), costs(), &ModelOptions::default()).unwrap();
    let l = &m.layout;
    let mut x = vec![0.0; m.num_vars()];
    // x = 0 scores +1 and goes right, x = 1 scores -1 and goes left.
    x[l.z(0, 1)] = 1.0;
    x[l.z(0, 3)] = 1.0;
    x[l.alpha(0, 1)] = 1.0;
    x[l.h(0, 1)] = 1.0;
    x[l.z(1, 1)] = 1.0;
    x[l.z(1, 2)] = 1.0;
    x[l.d(1)] = 1.0;
    x[l.v(1)] = 1.0;
    x[l.q(2, 2)] = 1.0;
    x[l.q(1, 3)] = 1.0;
    x[l.omega(1, 0)] = -2.0;
    x[l.omega0(1)] = 1.0;
    x[l.delta()] = 2.0;
    let report = check_feasible(&m, &x, 1e-9);
    assert!(report.is_feasible(), "{report:?}");
    assert_eq!(m.objective_value(&x), 3.0);

    let y = assemble(&m, &d, &[3, 2], &[(vec![-2.0], 1.0)], &[2, 1]);
    assert_eq!(x, y);
}

#[test]
fn child_without_parent_is_flagged() {
    let d = two_points();
    let m = build_model(&d, &TreeTopology::new(1).unwrap(), costs(), &ModelOptions::default()).unwrap();
    let mut x = assemble(&m, &d, &[3, 2], &[(vec![-2.0], 1.0)], &[2, 1]);
    x[m.layout.z(0, 1)] = 0.0;
    let report = check_feasible(&m, &x, 1e-9);
    assert!(report.mentions("C4[0,3]"), "{report:?}");
}

#[test]
fn fixing_two_clusters() {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..5 {
        rows.push(vec![0.02 * i as f64, 0.0]);
        y.push(1);
    }
    for i in 0..5 {
        rows.push(vec![1.0 - 0.02 * i as f64, 1.0]);
        y.push(2);
    }
    let d = dataset(rows, y, 2);
    let topo = TreeTopology::new(2).unwrap();
    let f = apply_fixing_heuristic(&d, &topo, 0.2).unwrap();
    let at = |leaf: usize| f.iter().filter(|(n, _)| n.ends_with(&format!(",{leaf}]"))).collect::<Vec<_>>();
    let first = at(4);
    let last = at(7);
    assert_eq!(first.len(), 10);
    assert_eq!(first.iter().filter(|(_, v)| *v == 1.0).count(), 5);
    assert_eq!(last.len(), 10);
    assert_eq!(last.iter().filter(|(_, v)| *v == 1.0).count(), 5);
    assert_eq!(f.len(), 10 * topo.num_leaves());

    let mut m = build_model(&d, &topo, costs(), &ModelOptions::default()).unwrap();
    m.apply_fixings(&f).unwrap();
    assert_eq!(m.variables[m.layout.z(0, 4)].lb, 1.0);
}

#[test]
fn fixing_tiny_radius_fixes_two_anchors() {
    let d = dataset(vec![vec![0.0], vec![0.3], vec![0.6], vec![1.0]], vec![1, 1, 2, 2], 2);
    let topo = TreeTopology::new(1).unwrap();
    let f = apply_fixing_heuristic(&d, &topo, 1e-9).unwrap();
    let ones: Vec<&String> = f.iter().filter(|(_, v)| *v == 1.0).map(|(n, _)| n).collect();
    assert_eq!(ones, vec!["z[0,2]", "z[3,3]"]);
    assert!(apply_fixing_heuristic(&d, &topo, 0.0).is_err());
}

#[test]
fn fixing_conflict_is_refused() {
    // The farthest observation shares the anchor's class and neighborhood.
    let d = dataset(vec![vec![0.0], vec![0.1], vec![0.2], vec![0.15]], vec![1, 1, 1, 2], 2);
    let topo = TreeTopology::new(1).unwrap();
    assert!(apply_fixing_heuristic(&d, &topo, 5.0).is_err());
}

#[test]
fn routing_ties_go_left() {
    let d = dataset(vec![vec![0.5], vec![0.2], vec![0.8]], vec![1, 1, 2], 2);
    let topo = TreeTopology::new(1).unwrap();
    let leaves = route_by_sign(&d, &topo, &[(vec![2.0], -1.0)]);
    assert_eq!(leaves, vec![2, 2, 3]);
}

#[test]
fn majority_breaks_ties_low() {
    assert_eq!(majority(&[2, 3, 3]), Some(2));
    assert_eq!(majority(&[0, 0]), None);
    assert_eq!(majority(&[1, 0]), Some(1));
}

#[test]
fn names_round_trip_through_layout() {
    let l = VarLayout::new(3, 2, 3, 2);
    let d = dataset(vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]], vec![1, 2, 3], 3);
    let m = build_model(&d, &TreeTopology::new(2).unwrap(), costs(), &ModelOptions::default()).unwrap();
    assert_eq!(m.layout, l);
    assert_eq!(m.variables[l.z(2, 7)].name, "z[2,7]");
    assert_eq!(m.variables[l.q(3, 5)].name, "q[3,5]");
    assert_eq!(m.variables[l.omega(3, 1)].name, "w[3,1]");
    assert_eq!(m.variables[l.e(1, 2)].name, "e[1,2]");
    assert_eq!(m.variables[l.l(6)].name, "L[6]");
    assert_eq!(m.var_id("delta"), Some(l.delta()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn assembled_points_satisfy_structural_properties(seed in any::<u64>(), depth in 1u32..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_dataset(&mut rng, 6, 2, 3);
        let topo = TreeTopology::new(depth).unwrap();
        let m = build_model(&d, &topo, costs(), &ModelOptions::default()).unwrap();
        let x = random_feasible(&m, &d, &mut rng);
        prop_assert!(check_feasible(&m, &x, 1e-9).is_feasible());
        let l = &m.layout;
        for i in 0..d.len() {
            for t in topo.branch_nodes() {
                if x[l.z(i, t)] > 0.5 {
                    let child = if x[l.alpha(i, t)] > 0.5 { 2 * t + 1 } else { 2 * t };
                    prop_assert!(x[l.z(i, child)] > 0.5);
                }
            }
        }
        for t in topo.branch_nodes() {
            if x[l.d(t)] < 0.5 {
                let pos: f64 = (0..d.len()).map(|i| x[l.h(i, t)]).sum();
                let neg: f64 = (0..d.len()).map(|i| x[l.z(i, t)] - x[l.h(i, t)]).sum();
                prop_assert!(pos == 0.0 || neg == 0.0);
            }
        }
    }

    #[test]
    fn decode_inverts_assemble(seed in any::<u64>(), depth in 1u32..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_dataset(&mut rng, 5, 3, 2);
        let topo = TreeTopology::new(depth).unwrap();
        let m = build_model(&d, &topo, costs(), &ModelOptions::default()).unwrap();
        let leaves: Vec<NodeId> = (0..d.len()).map(|_| rng.gen_range(topo.leaf_nodes())).collect();
        let planes: Vec<Plane> = topo.branch_nodes().map(|_| (vec![rng.gen_range(-1.0..1.0); 3], 0.5)).collect();
        let classes: Vec<ClassId> = topo.leaf_nodes().map(|_| rng.gen_range(1..=2)).collect();
        let x = assemble(&m, &d, &leaves, &planes, &classes);
        let back = decode(&m, &x);
        prop_assert_eq!(back.leaves, leaves);
        prop_assert_eq!(back.planes, planes);
        prop_assert_eq!(back.leaf_class, classes);
    }
}

#[test]
fn hierarchy_rows_reject_pass_through_nodes() {
    let d = dataset(vec![vec![0.1, 0.2], vec![0.2, 0.1], vec![0.8, 0.9], vec![0.9, 0.8]], vec![1, 1, 2, 2], 2);
    let topo = TreeTopology::new(2).unwrap();
    let planes = vec![(vec![0.0, 0.0], -1.0), (vec![2.0, 2.0], -2.0), (vec![0.0, 0.0], -1.0)];
    let flat = ModelOptions { split_hierarchy: false, ..ModelOptions::default() };
    let loose = build_model(&d, &topo, costs(), &flat).unwrap();
    let x = assemble(&loose, &d, &[4, 4, 5, 5], &planes, &[1, 2, 1, 1]);
    assert!(check_feasible(&loose, &x, 1e-9).is_feasible());
    let tight = build_model(&d, &topo, costs(), &ModelOptions::default()).unwrap();
    assert_eq!(tight.constraints.len(), loose.constraints.len() + 2);
    assert!(!check_feasible(&tight, &x, 1e-9).is_feasible());
}
