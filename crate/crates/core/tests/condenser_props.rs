mod common;

use ndarray::Array2;
use proptest::prelude::*;
use tgcc::condenser::{
    condensation_loss, init_synthetic, outer_step, train_relay_on_synthetic, MatchState, MatchTarget, OuterStep,
    SynAdjacency, SynOptimizer, SyntheticGraph,
};
use tgcc::optim::OptimizerKind;
use tgcc::relay::init_model;
use tgcc::{linalg, Graph, Splits};

use common::{er_adjacency, labelled_graph, sbm};

fn assert_valid_adjacency(syn: &SyntheticGraph) {
    let a = syn.adjacency();
    assert_eq!(linalg::max_asymmetry(a.view()), 0.0);
    for ((i, j), &v) in a.indexed_iter() {
        if i == j {
            assert_eq!(v, 0.0);
        } else {
            assert!(v > 0.0 && v < 1.0, "A_s[{i},{j}] = {v}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn training_keeps_adjacency_valid_and_labels_fixed(seed in any::<u64>(), lr in 0.001f64..0.5, adam in any::<bool>()) {
        let g = sbm(&[12, 12, 12], 0.3, 0.03, 6, seed);
        let target = MatchTarget::new(&g).unwrap();
        let mut syn = init_synthetic(&g, 0.25, seed).unwrap();
        let hist = syn.class_histogram();
        prop_assert!(hist.iter().all(|&c| c >= 1));
        let kind = if adam { OptimizerKind::Adam } else { OptimizerKind::Sgd };
        let mut opt = SynOptimizer::new(kind, lr, lr);
        let mut state = MatchState::new(init_model(6, 8, 3, seed).unwrap(), 5).unwrap();
        let step = OuterStep { cond_weight: 1.0, lr_relay: 0.05, inner_steps: 3 };
        for _ in 0..5 {
            outer_step(&mut state, &target, &target, &mut syn, &mut opt, None, step).unwrap();
            assert_valid_adjacency(&syn);
            prop_assert_eq!(syn.class_histogram(), hist.clone());
        }
        prop_assert_eq!(state.trace.len(), 5);
    }

    #[test]
    fn relay_is_trained_only_on_the_synthetic_graph(seed in any::<u64>(), inner in 0usize..6) {
        let g = sbm(&[10, 10], 0.4, 0.05, 5, seed);
        let real = MatchTarget::new(&g).unwrap();
        // A different augmented view: if the relay saw it, the replay below would differ.
        let aug = MatchTarget::with_adjacency(&g, er_adjacency(20, 0.5, seed).view()).unwrap();
        let mut syn = init_synthetic(&g, 0.3, seed).unwrap();
        let relay = init_model(5, 6, 2, seed ^ 1).unwrap();
        let mut state = MatchState::new(relay.clone(), 1).unwrap();
        let mut opt = SynOptimizer::new(OptimizerKind::Adam, 0.01, 0.01);
        let step = OuterStep { cond_weight: 1.0, lr_relay: 0.1, inner_steps: inner };
        outer_step(&mut state, &real, &aug, &mut syn, &mut opt, None, step).unwrap();
        let replay = train_relay_on_synthetic(&relay, &syn, 0.1, inner).unwrap();
        prop_assert_eq!(state.relay, replay);
    }
}

#[test]
fn perfect_copy_is_stationary() {
    let adj = er_adjacency(6, 0.6, 2);
    let g = labelled_graph(&adj, 4, 5);
    let target = MatchTarget::new(&g).unwrap();
    let mut syn = SyntheticGraph::new(
        g.features().clone(),
        SynAdjacency::Fixed(g.dense_adjacency()),
        g.labels().to_vec(),
        2,
    )
    .unwrap();
    let relay = init_model(4, 5, 2, 3).unwrap();
    let initial = condensation_loss(&target, &target, &syn, &relay).unwrap().loss;
    assert!(initial.abs() < 1e-9);
    let mut state = MatchState::new(relay, 50).unwrap();
    let mut opt = SynOptimizer::new(OptimizerKind::Sgd, 1e-3, 1e-3);
    let step = OuterStep { cond_weight: 1.0, lr_relay: 0.05, inner_steps: 2 };
    for _ in 0..50 {
        let cond = outer_step(&mut state, &target, &target, &mut syn, &mut opt, None, step).unwrap();
        assert!(cond.loss <= initial + 1e-6, "distance rose to {}", cond.loss);
    }
}

#[test]
fn zero_learning_rates_leave_synthetic_graph_alone() {
    let g = sbm(&[8, 8, 8], 0.4, 0.05, 4, 7);
    let target = MatchTarget::new(&g).unwrap();
    let mut syn = init_synthetic(&g, 0.25, 1).unwrap();
    let before = syn.clone();
    let mut state = MatchState::new(init_model(4, 4, 3, 1).unwrap(), 4).unwrap();
    let mut opt = SynOptimizer::new(OptimizerKind::Adam, 0.0, 0.0);
    let step = OuterStep { cond_weight: 1.0, lr_relay: 0.1, inner_steps: 1 };
    for _ in 0..4 {
        outer_step(&mut state, &target, &target, &mut syn, &mut opt, None, step).unwrap();
    }
    assert_eq!(syn, before);
}

#[test]
fn cora_sized_graph_condenses_to_thirty_five_nodes() {
    let (n, c) = (2708, 7);
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let x = Array2::from_shape_fn((n, 3), |(i, k)| ((i + k) % 5) as f64);
    let splits = Splits {
        train: (0..140).collect(),
        val: (140..640).collect(),
        test: (1708..2708).collect(),
    };
    let g = Graph::new(x, labels, c, Vec::new(), splits).unwrap();
    let syn = init_synthetic(&g, 0.013, 0).unwrap();
    assert_eq!(syn.num_nodes(), 35);
    assert_eq!(syn.class_histogram(), vec![5; 7]);
    assert_eq!(syn, init_synthetic(&g, 0.013, 0).unwrap());
    assert_valid_adjacency(&syn);
}
