use cmj_core::kernels::hs_norm;
use cmj_core::models::{builtin, sample_offspring};
use cmj_core::rng;
use cmj_core::{
    find_roots, increment_matrix, laurent_coeffs, run_experiment, Complex64, ExperimentPlan, LaurentData,
    OffspringModel, Region,
};

fn laurent_at(model: &OffspringModel, target: f64) -> LaurentData {
    let root = find_roots(model, &Region::around_alpha(model, target))
        .unwrap()
        .into_iter()
        .min_by(|a, b| (a.lambda - target).norm().total_cmp(&(b.lambda - target).norm()))
        .unwrap();
    laurent_coeffs(model, &root).unwrap()
}

struct ComponentStats {
    mean: Vec<Complex64>,
    se_re: Vec<f64>,
    se_im: Vec<f64>,
}

fn stats(draws: &[Vec<Complex64>]) -> ComponentStats {
    let n = draws.len() as f64;
    let len = draws[0].len();
    let mut mean = vec![Complex64::new(0.0, 0.0); len];
    for d in draws {
        mean.iter_mut().zip(d).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var_re = vec![0.0; len];
    let mut var_im = vec![0.0; len];
    for d in draws {
        for c in 0..len {
            var_re[c] += (d[c].re - mean[c].re).powi(2);
            var_im[c] += (d[c].im - mean[c].im).powi(2);
        }
    }
    let se = |v: f64| (v / (n - 1.0) / n).sqrt();
    ComponentStats { mean, se_re: var_re.into_iter().map(se).collect(), se_im: var_im.into_iter().map(se).collect() }
}

/// `Y` draws for a parent of `parent_type`, with each entry sampled far
/// enough that the omitted weight is below double precision.
fn increment_draws(model: &OffspringModel, laurent: &LaurentData, parent_type: usize, n: usize, seed: u64) -> Vec<Vec<Complex64>> {
    let window = 80.0 / laurent.root.lambda.re;
    (0..n)
        .map(|r| {
            let ages: Vec<Vec<f64>> = (0..model.p())
                .map(|j| {
                    let mut s = rng::stream(rng::mix(rng::mix(seed, r as u64), j as u64));
                    sample_offspring(model.spec(parent_type, j), window, &mut s)
                })
                .collect();
            increment_matrix(&ages, parent_type, laurent).unwrap().data().to_vec()
        })
        .collect()
}

#[test]
fn increments_have_mean_zero_in_example2() {
    let model = builtin::example2(1.0);
    let laurent = laurent_at(&model, 1.0);
    for parent_type in 0..2 {
        let s = stats(&increment_draws(&model, &laurent, parent_type, 100_000, 31 + parent_type as u64));
        let norm = s.mean.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let se = s.se_re.iter().chain(&s.se_im).map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= 4.0 * se, "type {parent_type}: |mean| {norm} vs se {se}");
    }
}

#[test]
fn brood_weight_of_a_type1_parent_matches_its_block_in_example2() {
    let model = builtin::example2(1.0);
    let laurent = laurent_at(&model, 1.0);
    let block = laurent.type_block(0);
    let draws: Vec<Vec<Complex64>> = increment_draws(&model, &laurent, 0, 100_000, 5)
        .into_iter()
        .map(|y| y.iter().zip(block.data()).map(|(a, b)| a + b).collect())
        .collect();
    let s = stats(&draws);
    for (c, (m, e)) in s.mean.iter().zip(block.data()).enumerate() {
        assert!((m.re - e.re).abs() <= 4.0 * s.se_re[c].max(1e-15), "component {c}: {m} vs {e}");
        assert!((m.im - e.im).abs() <= 4.0 * s.se_im[c].max(1e-15), "component {c}: {m} vs {e}");
    }
}

#[test]
fn single_type_nerman_martingale_has_unit_mean() {
    let model = builtin::single_type_poisson(1.0);
    let laurent = laurent_at(&model, 1.0);
    let plan = ExperimentPlan::new(model, laurent, vec![0.0, 1.0, 2.0, 3.0], 10_000, 77);
    let curve = run_experiment(&plan).unwrap();
    for pt in &curve.points {
        let m = pt.mean[(0, 0)];
        assert!((m.re - 1.0).abs() <= 4.0 * pt.se_re[0], "t = {}: {m}", pt.t);
        assert_eq!(m.im, 0.0);
    }
}

#[test]
fn split_plans_give_compatible_estimates() {
    let model = builtin::example1();
    let laurent = laurent_at(&model, 1.0);
    let grid = vec![0.0, 1.0, 2.0];
    let half = |seed: u64| {
        run_experiment(&ExperimentPlan::new(model.clone(), laurent.clone(), grid.clone(), 1000, seed)).unwrap()
    };
    let a = half(rng::mix(2026, 0));
    let b = half(rng::mix(2026, 1));
    for (pa, pb) in a.points.iter().zip(&b.points) {
        for c in 0..pa.se_re.len() {
            let diff = (pa.mean.data()[c].re - pb.mean.data()[c].re).abs();
            let se = (pa.se_re[c].powi(2) + pb.se_re[c].powi(2)).sqrt();
            assert!(diff <= 4.0 * se.max(1e-15), "t = {} component {c}: {diff} vs {se}", pa.t);
        }
        let dq = (pa.q_moment - pb.q_moment).abs();
        let sq = (pa.q_moment_se.powi(2) + pb.q_moment_se.powi(2)).sqrt();
        assert!(dq <= 4.0 * sq);
    }
    assert!(hs_norm(&a.expected) > 0.0);
}
