use proptest::prelude::*;

use sanode::exprlang::{differentiate, parse, BinOp, Expr, Func, Var};
use sanode::nets::{Activation, FieldHandle, SaParams, VanillaParams};
use sanode::ode::TimeGrid;
use sanode::systems::{generate_dataset, BenchmarkSystem, GridSpec, SystemId};
use sanode::transport::{w1_empirical, PointCloud};

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (-3.0..3.0f64).prop_map(Expr::num),
        (0..2usize).prop_map(Expr::x),
        Just(Expr::t()),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        let smooth = prop_oneof![
            Just(Func::Sin),
            Just(Func::Cos),
            Just(Func::Tanh),
            Just(Func::Sech),
            Just(Func::Arctan)
        ];
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::binary(BinOp::Add, a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::binary(BinOp::Sub, a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::binary(BinOp::Mul, a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::binary(
                BinOp::Div,
                a,
                Expr::binary(BinOp::Add, Expr::num(2.5), Expr::call(Func::Cos, b))
            )),
            (inner.clone(), 2..4i32).prop_map(|(a, n)| Expr::Pow(Box::new(a), n)),
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            (smooth, inner).prop_map(|(f, a)| Expr::call(f, a)),
        ]
    })
}

fn cloud(n: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), n)
        .prop_map(|v| PointCloud::from_points(&v.into_iter().map(|(x, y)| vec![x, y]).collect::<Vec<_>>()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn print_then_parse_is_stable(e in expr()) {
        let once = parse(&e.to_string(), 2).unwrap();
        let twice = parse(&once.to_string(), 2).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.to_string(), twice.to_string());
    }

    #[test]
    fn derivatives_match_finite_differences(e in expr(), x in -1.5..1.5f64, y in -1.5..1.5f64, t in 0.0..2.0f64) {
        let h = 1e-6;
        for var in [Var::X(0), Var::X(1), Var::T] {
            let at = |s: f64| match var {
                Var::X(0) => e.eval(&[x + s, y], t),
                Var::X(_) => e.eval(&[x, y + s], t),
                Var::T => e.eval(&[x, y], t + s),
            }.unwrap();
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let exact = differentiate(&e, var).eval(&[x, y], t).unwrap();
            prop_assert!((exact - fd).abs() <= 1e-6 * exact.abs().max(1.0), "{var:?}: {exact} vs {fd} for {e}");
        }
    }

    #[test]
    fn eval_is_repeatable(e in expr(), x in -2.0..2.0f64, t in 0.0..3.0f64) {
        let a = e.eval(&[x, -x], t).unwrap();
        let b = e.eval(&[x, -x], t).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn relu_outer_weights_are_homogeneous(seed in 0..1000u64, c in 0.0..8.0f64, k in -3..4i32,
                                          x in prop::array::uniform2(-3.0..3.0f64), t in 0.0..5.0f64) {
        let p = SaParams::init(7, 2, Activation::ReLU, seed).unwrap();
        let base = p.eval(&x, t).unwrap();
        let scaled = |c: f64| {
            let mut q = p.clone();
            for i in 0..7 {
                for j in 0..2 {
                    q.set_w(i, j, c * p.w(i, j));
                }
            }
            q.eval(&x, t).unwrap()
        };
        // Powers of two scale without rounding.
        let two = 2f64.powi(k);
        for (a, b) in scaled(two).iter().zip(&base) {
            prop_assert_eq!(*a, two * b);
        }
        for (a, b) in scaled(c).iter().zip(&base) {
            prop_assert!((a - c * b).abs() <= 1e-14 * (1.0 + (c * b).abs()));
        }
    }

    #[test]
    fn divergence_is_trace_of_jacobian(seed in 0..1000u64, sig in any::<bool>(),
                                       x in prop::array::uniform3(-3.0..3.0f64), t in 0.0..5.0f64) {
        let act = if sig { Activation::Sigmoid } else { Activation::ReLU };
        let p = SaParams::init(9, 3, act, seed).unwrap();
        let j = p.jacobian_x(&x, t).unwrap();
        let trace = j[0] + j[4] + j[8];
        let div = p.divergence(&x, t).unwrap();
        prop_assert!((trace - div).abs() <= 1e-14 * (1.0 + div.abs()));
    }

    #[test]
    fn lipschitz_bound_holds(seed in 0..1000u64, sig in any::<bool>(), t in 0.0..5.0f64,
                             pairs in prop::collection::vec(prop::array::uniform4(-4.0..4.0f64), 160)) {
        let act = if sig { Activation::Sigmoid } else { Activation::ReLU };
        let p = SaParams::init(12, 2, act, seed).unwrap();
        let l = p.lipschitz_bound();
        for q in pairs {
            let (fx, fy) = (p.eval(&q[..2], t).unwrap(), p.eval(&q[2..], t).unwrap());
            let df = (fx[0] - fy[0]).hypot(fx[1] - fy[1]);
            let dx = (q[0] - q[2]).hypot(q[1] - q[3]);
            prop_assert!(df <= l * dx * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn single_block_vanilla_ignores_time(seed in 0..1000u64, x in prop::array::uniform2(-2.0..2.0f64),
                                         t in 0.0..1.0f64) {
        let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let f = FieldHandle::Vanilla(VanillaParams::init(5, 2, grid, Activation::Sigmoid, seed).unwrap());
        prop_assert_eq!(f.eval(&x, t).unwrap(), f.eval(&x, 0.0).unwrap());
    }

    #[test]
    fn w1_metric_axioms((a, b, c) in (1..24usize).prop_flat_map(|n| (cloud(n), cloud(n), cloud(n)))) {
        let ab = w1_empirical(&a, &b).unwrap();
        prop_assert_eq!(ab, w1_empirical(&b, &a).unwrap());
        prop_assert_eq!(w1_empirical(&a, &a).unwrap(), 0.0);
        prop_assert!(ab <= w1_empirical(&a, &c).unwrap() + w1_empirical(&c, &b).unwrap() + 1e-12);
    }

    #[test]
    fn w1_of_a_translate_is_the_shift(a in cloud(17), vx in -2.0..2.0f64, vy in -2.0..2.0f64) {
        let moved = a.map(|p| Ok(vec![p[0] + vx, p[1] + vy])).unwrap();
        let d = w1_empirical(&a, &moved).unwrap();
        prop_assert!((d - vx.hypot(vy)).abs() <= 1e-12);
    }

    #[test]
    fn flow_at_time_zero_is_identity(x in prop::array::uniform2(-3.0..3.0f64), which in 0..6usize) {
        let sys = BenchmarkSystem::new(SystemId::ALL[which]);
        prop_assert_eq!(sys.exact_flow(&x, 0.0).unwrap(), x.to_vec());
    }

    #[test]
    fn datasets_regenerate_bit_identically(seed in any::<u64>(), which in 0..6usize) {
        let sys = BenchmarkSystem::new(SystemId::ALL[which]);
        let pts = GridSpec::new(-1.0, 1.0, 3, 2).unwrap().points();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let a = generate_dataset(&sys, &pts, grid, seed).unwrap();
        let b = generate_dataset(&sys, &pts, grid, seed).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
