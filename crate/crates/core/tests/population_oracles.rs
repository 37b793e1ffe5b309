use std::collections::HashSet;

use cmj_core::models::builtin;
use cmj_core::population::{label_key, tree_rows};
use cmj_core::rng;
use cmj_core::{coming_generation, counting_process, simulate};
use rand::RngCore;

/// Mean number of births by `t` for a single-type Poisson(`rate`) process,
/// from `m(t) = 1 + rate ∫_0^t m(t − s) ds` iterated with the trapezoid rule.
fn renewal_mean(rate: f64, horizon: f64, steps: usize) -> f64 {
    let dt = horizon / steps as f64;
    let mut m = vec![1.0f64];
    for n in 1..=steps {
        // m_n = 1 + rate·dt·(m_n/2 + Σ_{i=1}^{n-1} m_i + m_0/2)
        let inner: f64 = m[1..n].iter().sum::<f64>() + 0.5 * m[0];
        m.push((1.0 + rate * dt * inner) / (1.0 - 0.5 * rate * dt));
    }
    m[steps]
}

#[test]
fn total_births_match_the_renewal_equation() {
    let horizon = 5.0;
    let oracle = renewal_mean(1.0, horizon, 20_000);
    assert!((oracle - horizon.exp()).abs() <= 1e-3 * oracle);
    let model = builtin::single_type_poisson(1.0);
    let n = 10_000;
    let counts: Vec<f64> = (0..n)
        .map(|seed| simulate(&model, horizon, horizon, seed).unwrap().len() as f64)
        .collect();
    let nf = n as f64;
    let mean = counts.iter().sum::<f64>() / nf;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let se = (var / nf).sqrt();
    assert!((mean - oracle).abs() <= 4.0 * se, "{mean} vs {oracle} (se {se})");
}

#[test]
fn stream_keys_follow_labels_and_never_collide() {
    let model = builtin::example1();
    let mut keys = HashSet::new();
    let mut first_draws = HashSet::new();
    let mut total = 0;
    for seed in 0..40u64 {
        let tree = simulate(&model, 4.0, 4.0, seed).unwrap();
        for (i, ind) in tree.individuals().iter().enumerate() {
            assert_eq!(ind.stream_key(), label_key(seed, &tree.label(i)));
            for j in 0..model.p() {
                let key = ind.entry_stream_key(j);
                assert!(keys.insert(key), "stream key reused at seed {seed}, individual {i}");
                assert!(first_draws.insert(rng::stream(key).next_u64()));
                total += 1;
            }
        }
    }
    assert!(total > 1000);
}

#[test]
fn replica_seeds_are_distinct() {
    let seeds: HashSet<u64> = (0..100_000u64).map(|r| rng::mix(7, r)).collect();
    assert_eq!(seeds.len(), 100_000);
}

#[test]
fn parent_precedes_child_and_siblings_are_ordered() {
    for seed in 0..20 {
        let tree = simulate(&builtin::example2(1.0), 3.0, 5.0, seed).unwrap();
        let rows = tree_rows(&tree);
        for row in &rows[1..] {
            let parent = &rows[row.parent_index.unwrap()];
            assert!(parent.birth_time <= row.birth_time);
        }
        for i in 0..tree.len() {
            let ages: Vec<f64> = tree.children(i).iter().map(|c| c.age).collect();
            assert!(ages.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn counting_process_is_monotone() {
    let model = builtin::example1();
    for seed in 0..20 {
        let tree = simulate(&model, 4.0, 4.0, seed).unwrap();
        let mut prev = counting_process(&tree, 0.0).unwrap();
        for i in 1..=40 {
            let cur = counting_process(&tree, 0.1 * i as f64).unwrap();
            assert!(cur.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = cur;
        }
        let last = counting_process(&tree, 4.0).unwrap();
        assert_eq!(last.iter().sum::<u64>() as usize, tree.len());
    }
}

#[test]
fn coming_generation_members_straddle_t() {
    let tree = simulate(&builtin::example1(), 4.0, 12.0, 11).unwrap();
    for t in [0.0, 0.5, 1.7, 3.0, 4.0] {
        let cg = coming_generation(&tree, t).unwrap();
        for m in &cg.members {
            assert!(tree.individuals()[m.parent].birth_time <= t && m.birth_time > t);
        }
    }
}
