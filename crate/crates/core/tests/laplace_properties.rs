use cmj_core::models::{builtin, sample_offspring};
use cmj_core::rng;
use cmj_core::spectral::perron_root_at;
use cmj_core::{Ancestor, Complex64, OffspringModel, PointProcessSpec};

fn catalog() -> Vec<(&'static str, PointProcessSpec)> {
    use PointProcessSpec::*;
    vec![
        ("poisson", Poisson { rate: 1.5 }),
        ("bernoulli_exp", BernoulliExp { prob: 0.6, rate: 2.0 }),
        ("fixed_atom", FixedAtom { time: 0.7, count: 3 }),
        (
            "superposition",
            Superposition { components: vec![Poisson { rate: 0.5 }, BernoulliExp { prob: 0.3, rate: 1.0 }] },
        ),
    ]
}

/// Window beyond which `e^{-Re z · s}` weights are below double precision.
const WINDOW: f64 = 80.0;

#[test]
fn empirical_laplace_transform_matches_analytic() {
    let n = 100_000;
    let points = [
        Complex64::new(0.5, 0.0),
        Complex64::new(1.0, 0.0),
        Complex64::new(2.0, 0.0),
        Complex64::new(1.0, 1.0),
    ];
    for (name, spec) in catalog() {
        let mut rng = rng::stream(rng::mix(2024, name.len() as u64));
        let samples: Vec<Vec<f64>> = (0..n).map(|_| sample_offspring(&spec, WINDOW, &mut rng)).collect();
        for &z in &points {
            let values: Vec<Complex64> =
                samples.iter().map(|pts| pts.iter().map(|&s| (-z * s).exp()).sum()).collect();
            let nf = n as f64;
            let mean: Complex64 = values.iter().sum::<Complex64>() / nf;
            let var_re = values.iter().map(|v| (v.re - mean.re).powi(2)).sum::<f64>() / (nf - 1.0);
            let var_im = values.iter().map(|v| (v.im - mean.im).powi(2)).sum::<f64>() / (nf - 1.0);
            let exact = spec.laplace_derivative(z, 0);
            for (m, e, var) in [(mean.re, exact.re, var_re), (mean.im, exact.im, var_im)] {
                let se = (var / nf).sqrt();
                let diff = (m - e).abs();
                if se <= 1e-12 * e.abs().max(1.0) {
                    assert!(diff <= 1e-10 * e.abs().max(1.0), "{name} at {z}: {m} vs {e}");
                } else {
                    assert!(diff <= 4.0 * se, "{name} at {z}: {m} vs {e}, se {se}");
                }
            }
        }
    }
}

#[test]
fn derivatives_match_central_differences() {
    let h = 1e-5;
    let points = [Complex64::new(0.8, 0.0), Complex64::new(1.3, 0.6), Complex64::new(2.5, -1.0)];
    for (name, spec) in catalog() {
        for &z in &points {
            for m in 1..=3 {
                let f = |w: Complex64| spec.laplace_derivative(w, m - 1);
                let fd = (f(z + h) - f(z - h)) / (2.0 * h);
                let exact = spec.laplace_derivative(z, m);
                let rel = (fd - exact).norm() / exact.norm().max(1e-3);
                assert!(rel <= 1e-6, "{name} order {m} at {z}: {fd} vs {exact} ({rel:e})");
            }
        }
    }
}

#[test]
fn perron_root_of_the_transform_is_non_increasing() {
    for model in [builtin::example1(), builtin::example2(1.5), builtin::fully_connected_poisson(0.7)] {
        let mut prev = f64::INFINITY;
        for i in 1..=400 {
            let theta = 0.05 * i as f64;
            let rho = perron_root_at(&model, theta).unwrap();
            assert!(rho <= prev * (1.0 + 1e-12), "ρ increased at θ = {theta}");
            prev = rho;
        }
    }
}

#[test]
fn atom_only_transform_reaches_the_atom_at_zero() {
    use PointProcessSpec::*;
    let atoms = OffspringModel::new(
        2,
        vec![
            Superposition { components: vec![FixedAtom { time: 0.0, count: 1 }, FixedAtom { time: 0.3, count: 2 }] },
            FixedAtom { time: 0.5, count: 2 },
            Empty,
            FixedAtom { time: 1.0, count: 1 },
        ],
        Ancestor::Fixed(0),
    )
    .unwrap();
    for model in [atoms, builtin::deterministic_chain()] {
        let far = model.laplace_real(1e4).unwrap();
        assert!(far.max_abs_diff(&model.atom_at_zero()) <= 1e-8);
    }
}

#[test]
fn transform_converges_to_the_atom_at_zero_at_rate_one_over_theta() {
    use PointProcessSpec::*;
    let mixed = OffspringModel::new(
        2,
        vec![
            Superposition { components: vec![FixedAtom { time: 0.0, count: 1 }, Poisson { rate: 1.0 }] },
            FixedAtom { time: 0.5, count: 2 },
            BernoulliExp { prob: 0.4, rate: 3.0 },
            Empty,
        ],
        Ancestor::Fixed(0),
    )
    .unwrap();
    for model in [builtin::example1(), builtin::example2(2.0), mixed] {
        let atom = model.atom_at_zero();
        let gap = |theta: f64| model.laplace_real(theta).unwrap().max_abs_diff(&atom);
        // Poisson and exponential entries decay like rate/θ
        let scaled: Vec<f64> = [1e4, 1e6, 1e8].iter().map(|&t| t * gap(t)).collect();
        assert!(scaled.windows(2).all(|w| (w[0] - w[1]).abs() <= 1e-3 * w[0].max(1.0)), "{scaled:?}");
        assert!(gap(1e10) <= 1e-8);
    }
}
