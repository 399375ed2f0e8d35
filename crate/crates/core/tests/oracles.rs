//! Worked examples checked against independent oracles: enumeration,
//! closed-form least squares, Monte Carlo and direct evaluation.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_4;
use std::sync::Arc;

use fedexchange::clients::{
    domain_concept, evaluate, generate_domain_dataset, local_train, local_train_fedprox, objective, ClientState,
    DomainSpec, FrozenBackbone, LocalConfig, TaskKind,
};
use fedexchange::clustering::{average_linkage, build_distance_matrix, cluster_to_two, DistanceMatrix};
use fedexchange::exchange::{build_clustered_plan, build_random_plan, ExchangeHistory};
use fedexchange::params::ParamVector;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::{least_squares, two_partitions};

fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(v.to_vec()).unwrap()
}

fn spec(n: usize, noise: f64, delta: f64) -> DomainSpec {
    DomainSpec {
        domain_id: 0,
        sample_count: n,
        test_count: 1000,
        input_dim: 3,
        feature_shift: vec![0.0; 3],
        concept_shift: delta,
        label_noise: noise,
    }
}

fn client(spec: DomainSpec, feature_dim: usize, task: TaskKind, local: LocalConfig) -> ClientState {
    let backbone = Arc::new(FrozenBackbone::new(21, spec.input_dim, feature_dim).unwrap());
    let data = generate_domain_dataset(&spec, &backbone, task, 4, 5, 1.0).unwrap();
    ClientState::new(spec, task, backbone, data, local).unwrap()
}

#[test]
fn distance_of_diagonal_unit_vector_matches_angle() {
    let s = FRAC_PI_4.cos();
    let dm = build_distance_matrix(&[pv(&[1.0, 0.0]), pv(&[s, FRAC_PI_4.sin()])]).unwrap();
    let expected = 1.0 - FRAC_PI_4.cos();
    assert!((dm.get(0, 1) - expected).abs() < 1e-12);
    assert!((dm.get(0, 1) - 0.29289).abs() < 1e-5);
}

#[test]
fn average_linkage_matches_hand_sum() {
    let dm = DistanceMatrix::from_rows(vec![
        vec![0.0, 1.0, 0.29289],
        vec![1.0, 0.0, 0.7],
        vec![0.29289, 0.7, 0.0],
    ])
    .unwrap();
    assert!((average_linkage(&dm, &[0], &[1, 2]).unwrap() - (1.0 + 0.29289) / 2.0).abs() < 1e-12);
}

#[test]
fn near_axis_clusters_match_best_partition() {
    let decoders = [pv(&[1.0, 0.0]), pv(&[1.0, 0.01]), pv(&[0.0, 1.0]), pv(&[0.01, 1.0])];
    let dm = build_distance_matrix(&decoders).unwrap();
    // Partition with the smallest mean within-cluster pairwise distance.
    let within = |c: &[usize]| -> (f64, usize) {
        let mut s = 0.0;
        let mut k = 0;
        for (i, &u) in c.iter().enumerate() {
            for &v in &c[i + 1..] {
                s += dm.get(u, v);
                k += 1;
            }
        }
        (s, k)
    };
    let best = two_partitions(4)
        .into_iter()
        .filter(|(a, b)| a.len() >= 2 && b.len() >= 2)
        .min_by(|p, q| {
            let score = |(a, b): &(Vec<usize>, Vec<usize>)| {
                let (s0, k0) = within(a);
                let (s1, k1) = within(b);
                (s0 + s1) / (k0 + k1) as f64
            };
            score(p).total_cmp(&score(q))
        })
        .unwrap();
    let ca = cluster_to_two(&dm).unwrap();
    assert_eq!((ca.members(0), ca.members(1)), best);
    assert_eq!(best, (vec![0, 1], vec![2, 3]));
}

#[test]
fn three_decoder_merge_choice_by_enumeration() {
    let dm = DistanceMatrix::from_rows(vec![
        vec![0.0, 0.1, 1.0],
        vec![0.1, 0.0, 1.0],
        vec![1.0, 1.0, 0.0],
    ])
    .unwrap();
    let choices = [(0, 1), (0, 2), (1, 2)];
    let (a, b) = *choices
        .iter()
        .min_by(|x, y| dm.get(x.0, x.1).total_cmp(&dm.get(y.0, y.1)))
        .unwrap();
    let remaining = 3 - a - b;
    let ca = cluster_to_two(&dm).unwrap();
    assert_eq!(ca.members(0), vec![a, b]);
    assert_eq!(ca.members(1), vec![remaining]);
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn equal_cluster_plans_are_exactly_the_cross_permutations() {
    let ca = fedexchange::clustering::ClusterAssignment::from_members(&[0, 1], &[2, 3]).unwrap();
    let cross: BTreeSet<Vec<usize>> = permutations(4)
        .into_iter()
        .filter(|p| p.iter().enumerate().all(|(i, &d)| ca.label(i) != ca.label(d)))
        .collect();
    assert_eq!(cross.len(), 4);
    let reached: BTreeSet<Vec<usize>> = (0..400)
        .map(|seed| build_clustered_plan(&ca, &ExchangeHistory::default(), seed).unwrap().assignment)
        .collect();
    assert_eq!(reached, cross);
}

#[test]
fn unequal_cluster_plans_have_two_cross_deliveries() {
    let ca = fedexchange::clustering::ClusterAssignment::from_members(&[0, 1, 2], &[3]).unwrap();
    for seed in 0..200 {
        let plan = build_clustered_plan(&ca, &ExchangeHistory::default(), seed).unwrap();
        let cross: Vec<usize> = (0..4).filter(|&i| ca.label(i) != ca.label(plan.assignment[i])).collect();
        assert_eq!(cross.len(), 2);
        assert!(plan.assignment[3] < 3);
        assert_eq!(plan.assignment.iter().filter(|&&d| d == 3).count(), 1);
        let own_cluster = (0..3).filter(|&i| plan.assignment[i] < 3).count();
        assert_eq!(own_cluster, 2);
    }
}

#[test]
fn random_plan_positions_are_uniform() {
    let n = 5;
    let trials = 10_000u64;
    let mut counts = vec![vec![0u64; n]; n];
    for seed in 0..trials {
        let plan = build_random_plan(n, seed).unwrap();
        for (pos, &d) in plan.assignment.iter().enumerate() {
            counts[pos][d] += 1;
        }
    }
    let expected = trials as f64 / n as f64;
    let chi = ChiSquared::new((n - 1) as f64).unwrap();
    for row in &counts {
        let stat: f64 = row.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - chi.cdf(stat);
        assert!(p > 0.001, "chi-square p-value {p} for counts {row:?}");
    }
}

#[test]
fn gradient_descent_reaches_least_squares_fit_on_noiseless_task() {
    let local = LocalConfig {
        epochs: 20_000,
        learning_rate: 0.9,
        batch_size: 10_000,
        prox_mu: 0.0,
    };
    let c = client(spec(200, 0.0, 0.5), 4, TaskKind::Regression, local);
    let rows: Vec<Vec<f64>> = c
        .data
        .train
        .features
        .iter()
        .map(|f| f.iter().copied().chain([1.0]).collect())
        .collect();
    let closed_form = least_squares(&rows, &c.data.train.labels);
    let all: Vec<usize> = (0..c.train_size()).collect();
    let optimum = objective(TaskKind::Regression, &closed_form, &c.data.train, &all);
    assert!(optimum < 1e-20, "closed-form loss {optimum}");

    let trained = local_train(&ParamVector::zeros(5).unwrap(), &c, 1).unwrap();
    let loss = objective(TaskKind::Regression, trained.as_slice(), &c.data.train, &all);
    assert!(loss < 1e-6, "trained loss {loss}");
}

#[test]
fn huge_proximal_weight_pins_decoder_to_anchor() {
    let local = LocalConfig {
        epochs: 5,
        learning_rate: 1e-6,
        batch_size: 32,
        prox_mu: 1e6,
    };
    let c = client(spec(300, 0.1, 0.5), 4, TaskKind::Regression, local);
    let anchor = pv(&[0.3, -0.1, 0.2, 0.5, -0.4]);
    let out = local_train_fedprox(&anchor, &c, &anchor, 1e6, 2).unwrap();
    assert!(out.max_abs_diff(&anchor).unwrap() < 1e-3);
    let start = pv(&[0.3005, -0.1, 0.2, 0.5, -0.4]);
    let out = local_train_fedprox(&start, &c, &anchor, 1e6, 2).unwrap();
    assert!(out.max_abs_diff(&anchor).unwrap() < 1e-3);
}

#[test]
fn perfect_decoder_has_negligible_loss() {
    let s = spec(50, 0.0, 0.7);
    let c = client(s.clone(), 6, TaskKind::Regression, LocalConfig::default());
    let mut head = domain_concept(&s, 6, 4, 5);
    head.push(0.0);
    let m = evaluate(&pv(&head), &c);
    assert!(m.loss < 1e-9, "loss {}", m.loss);
}

#[test]
fn zero_decoder_is_a_coin_flip_on_symmetric_labels() {
    // Noise dominates the score, so labels are symmetric.
    let c = client(spec(10, 1e3, 0.0), 6, TaskKind::Classification, LocalConfig::default());
    let positives = c.data.test.labels.iter().filter(|&&y| y == 1.0).count();
    assert!((positives as f64 / 1000.0 - 0.5).abs() < 0.05);
    let acc = evaluate(&ParamVector::zeros(7).unwrap(), &c).accuracy.unwrap();
    assert!((acc - 0.5).abs() <= 0.05, "accuracy {acc}");
}

#[test]
fn full_batch_training_loss_is_non_increasing() {
    for task in [TaskKind::Regression, TaskKind::Classification] {
        let local = LocalConfig {
            epochs: 1,
            learning_rate: 0.05,
            batch_size: 10_000,
            prox_mu: 0.0,
        };
        let c = client(spec(150, 0.2, 0.5), 5, task, local);
        let all: Vec<usize> = (0..c.train_size()).collect();
        let mut d = pv(&[0.5, -0.5, 0.2, 0.1, 0.0, 0.3]);
        let mut last = objective(task, d.as_slice(), &c.data.train, &all);
        for step in 0..200 {
            d = local_train(&d, &c, step).unwrap();
            let loss = objective(task, d.as_slice(), &c.data.train, &all);
            assert!(loss <= last + 1e-15, "{task:?} step {step}: {loss} > {last}");
            last = loss;
        }
    }
}
