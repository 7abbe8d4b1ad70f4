use mkv_lab::lq::QuadraticValue;
use mkv_lab::measures::EmpiricalMeasure;
use mkv_lab::mkvsde::{conditional_mean_path, gaussian_cloud, generate_common_path, simulate_lq_closed_loop};
use mkv_lab::riccati::{solve_riccati, LqModel};
use mkv_lab::verify::{random_cloud, random_gains, random_model};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn m1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn scalar(a: f64, b: f64, q: f64, r: f64, g: f64) -> LqModel {
    LqModel::builder(1, 1).a(m1(a)).b(m1(b)).q(m1(q)).r(m1(r)).g(m1(g)).build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn riccati_matrices_stay_symmetric(seed in any::<u64>(), n in 1usize..4, k in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, n, k);
        let sol = solve_riccati(&model, 200).unwrap();
        for s in sol.nodes() {
            prop_assert_eq!(&s.p1, &s.p1.transpose());
            prop_assert_eq!(&s.p2, &s.p2.transpose());
        }
    }

    #[test]
    fn larger_running_cost_does_not_lower_p1(
        a in -1.0..1.0f64, b in 0.2..2.0f64, q in 0.0..2.0f64,
        dq in 0.0..1.0f64, r in 0.2..2.0f64, g in 0.0..2.0f64,
    ) {
        let lo = solve_riccati(&scalar(a, b, q, r, g), 400).unwrap();
        let hi = solve_riccati(&scalar(a, b, q + dq, r, g), 400).unwrap();
        prop_assert!(hi.nodes()[0].p1[(0, 0)] >= lo.nodes()[0].p1[(0, 0)] - 1e-12);
    }

    #[test]
    fn optimal_feedback_minimises_psi(seed in any::<u64>(), t in 0.0..0.95f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, 2, 1);
        let ric = solve_riccati(&model, 400).unwrap();
        let qv = QuadraticValue::new(&model, &ric).unwrap();
        let mu = random_cloud(&mut rng, 2, 30).unwrap();
        let star = qv.optimal_feedback(t).unwrap();
        let mean = mu.mean();
        let at_star = qv.psi_functional(t, &mu, |x| star.eval(x, mean.as_slice())).unwrap();
        for gain in random_gains(&mut rng, 1, 2, 5) {
            for eps in [0.01, 0.3, 2.0] {
                let u = star.perturbed(&gain, eps);
                let psi = qv.psi_functional(t, &mu, |x| u.eval(x, mean.as_slice())).unwrap();
                prop_assert!(psi - at_star >= -1e-10, "eps={} gap={}", eps, psi - at_star);
            }
        }
    }

    #[test]
    fn point_mass_value_has_no_variance_part(x in -3.0..3.0f64, t in 0.0..0.99f64) {
        let model = LqModel::reference_scalar();
        let ric = solve_riccati(&model, 500).unwrap();
        let qv = QuadraticValue::new(&model, &ric).unwrap();
        let s = ric.state_at(t).unwrap();
        let delta = EmpiricalMeasure::new(vec![x], 1).unwrap();
        let expect = x * s.p2[(0, 0)] * x + x * s.phi[0] + s.psi;
        prop_assert!((qv.value_function(t, &delta).unwrap() - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
    }
}

#[test]
fn ensemble_is_independent_of_thread_count() {
    let model = LqModel::reference_scalar();
    let ric = solve_riccati(&model, 500).unwrap();
    let init = gaussian_cloud(3000, &[1.0], 0.5, 11).unwrap();
    let path = generate_common_path(0.0, 1.0, 50, 12).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_lq_closed_loop(&model, &ric, &init, &path).unwrap())
    };
    let (one, many) = (run(1), run(4));
    for m in 0..=path.steps() {
        assert_eq!(one.states_at(m), many.states_at(m));
    }
}

#[test]
fn noiseless_mean_follows_linear_ode_at_first_order() {
    let model = LqModel::builder(2, 1)
        .a(DMatrix::from_row_slice(2, 2, &[0.2, 0.5, -0.4, 0.1]))
        .abar(DMatrix::from_row_slice(2, 2, &[-0.3, 0.0, 0.2, 0.1]))
        .b(DMatrix::from_row_slice(2, 1, &[1.0, 0.3]))
        .q(DMatrix::identity(2, 2))
        .r(m1(0.5))
        .g(DMatrix::identity(2, 2))
        .build()
        .unwrap();
    let ric = solve_riccati(&model, 4000).unwrap();
    let init = gaussian_cloud(200, &[1.0, -0.5], 0.7, 3).unwrap();
    let xbar0 = init.mean();
    let dense_path = generate_common_path(0.0, 1.0, 40_000, 1).unwrap();
    let dense = conditional_mean_path(&model, &ric, xbar0.as_slice(), &dense_path).unwrap();
    let reference = dense.last().unwrap();
    let err = |steps: usize| {
        let path = generate_common_path(0.0, 1.0, steps, 2).unwrap();
        let ens = simulate_lq_closed_loop(&model, &ric, &init, &path).unwrap();
        (ens.mean_path().last().unwrap() - reference).norm()
    };
    let (coarse, fine) = (err(50), err(100));
    let ratio = coarse / fine;
    assert!(coarse < 0.05, "error {coarse}");
    assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
}
