mod common;

use common::{chain_value_iteration, ChainMdp};
use powerwall_rl::baselines::{
    q_update, read_qtable_csv, train_q, train_tabular, write_qtable_csv, FarmQState, QParams,
    QTable,
};
use powerwall_rl::data::{generate_synthetic, split, SyntheticConfig};
use powerwall_rl::env::EnvConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn chain_matches_value_iteration() {
    let params = QParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (table, history) = train_tabular(&mut ChainMdp::new(), &params, 10_000, &mut rng).unwrap();
    assert_eq!(history.len(), 10_000);
    let oracle = chain_value_iteration(params.discount);
    for (s, row) in oracle.iter().enumerate() {
        let best = if row[1] > row[0] { 1 } else { 0 };
        assert_eq!(table.greedy(s), best, "state {s}");
        for (a, v) in row.iter().enumerate() {
            let q = table.get(s, a).unwrap();
            assert!((q - v).abs() <= 1e-6, "Q({s},{a}) = {q}, oracle {v}");
        }
    }
}

#[test]
fn update_examples() {
    let mut t = QTable::new(2, 3);
    q_update(&mut t, 0, 1, 1.0, Some(1), 1.0, 0.89).unwrap();
    assert_eq!(t.get(0, 1).unwrap(), 1.0);
    let mut t = QTable::new(2, 3);
    q_update(&mut t, 0, 1, 1.0, Some(1), 0.5, 0.89).unwrap();
    assert_eq!(t.get(0, 1).unwrap(), 0.5);
    let mut t = QTable::new(2, 3);
    q_update(&mut t, 0, 2, 0.0, Some(1), 0.3, 0.89).unwrap();
    assert_eq!(t, QTable::new(2, 3));
    assert!(q_update(&mut t, 5, 0, 1.0, None, 0.1, 0.9).is_err());
    assert!(q_update(&mut t, 0, 3, 1.0, None, 0.1, 0.9).is_err());
    assert!(q_update(&mut t, 0, 0, 1.0, Some(9), 0.1, 0.9).is_err());
}

proptest! {
    #[test]
    fn zero_learning_rate_is_a_no_op(values in prop::collection::vec(-10.0f64..10.0, 6), r in -5.0f64..5.0, s in 0usize..2, a in 0usize..3, s2 in 0usize..2) {
        let mut t = QTable::new(2, 3);
        for (i, v) in values.iter().enumerate() {
            t.set(i / 3, i % 3, *v).unwrap();
        }
        let before = t.clone();
        q_update(&mut t, s, a, r, Some(s2), 0.0, 0.89).unwrap();
        prop_assert_eq!(t, before);
    }

    #[test]
    fn backup_matches_formula(values in prop::collection::vec(-10.0f64..10.0, 6), r in -5.0f64..5.0, alpha in 0.0f64..=1.0, s in 0usize..2, a in 0usize..3, s2 in 0usize..2) {
        let mut t = QTable::new(2, 3);
        for (i, v) in values.iter().enumerate() {
            t.set(i / 3, i % 3, *v).unwrap();
        }
        let old = values[s * 3 + a];
        let best = values[s2 * 3..s2 * 3 + 3].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        q_update(&mut t, s, a, r, Some(s2), alpha, 0.89).unwrap();
        let expected = old + alpha * (r + 0.89 * best - old);
        prop_assert!((t.get(s, a).unwrap() - expected).abs() <= 1e-12);
    }

    #[test]
    fn farm_state_index_round_trips(index in 0usize..FarmQState::count(11)) {
        prop_assert_eq!(FarmQState::from_index(index, 11).index(11), index);
    }
}

#[test]
fn farm_training_is_deterministic_and_csv_round_trips() {
    let series = generate_synthetic(42, &SyntheticConfig::default()).unwrap();
    let window = split(&series).train;
    let cfg = EnvConfig::default();
    let params = QParams::default();
    let a = train_q(window, &cfg, *series.tiers(), &params, 20, 5).unwrap();
    let b = train_q(window, &cfg, *series.tiers(), &params, 20, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.history.len(), 20);
    assert_eq!(a.table.states(), 24 * 11 * 3 * 2);

    let mut buf = Vec::new();
    write_qtable_csv(&a.table, 11, &mut buf).unwrap();
    let back = read_qtable_csv(buf.as_slice(), 11).unwrap();
    assert_eq!(back, a.table);
}
