//! Property tests for projections, the slack update, the rate bound and
//! the inner sweep.

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ris_ee_core::channel::{apply_csi_error, synthesize_channels};
use ris_ee_core::objectives::{evaluate, jain_index, robust_rates, true_rates};
use ris_ee_core::solver::{inner_sweep, mu_from_violation, project_a, project_c, project_d, project_theta};
use ris_ee_core::{DesignVariables, FairnessSpec, Geometry, PathStats, PddState, PowerModel, SystemDims, C64};

fn entry() -> impl Strategy<Value = C64> {
    prop_oneof![
        1 => Just(C64::new(0.0, 0.0)),
        8 => (-1e3..1e3f64, -1e3..1e3f64).prop_map(|(re, im)| C64::new(re, im)),
        1 => (-1e-9..1e-9f64, -1e-9..1e-9f64).prop_map(|(re, im)| C64::new(re, im)),
    ]
}

fn matrix() -> impl Strategy<Value = Array2<C64>> {
    (1usize..5, 1usize..4)
        .prop_flat_map(|(r, c)| prop::collection::vec(entry(), r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap()))
}

fn vector() -> impl Strategy<Value = Array1<C64>> {
    prop::collection::vec(entry(), 1..16).prop_map(Array1::from)
}

proptest! {
    #[test]
    fn power_projection_is_feasible_and_idempotent(d in matrix(), p_max in 1e-3..1e3f64) {
        let p = project_d(&d, p_max);
        let power: f64 = p.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!(power <= p_max * (1.0 + 1e-12));
        let pp = project_d(&p, p_max);
        for (x, y) in pp.iter().zip(p.iter()) {
            prop_assert!((x - y).norm() <= 1e-12 * y.norm().max(1.0));
        }
    }

    #[test]
    fn analog_projection_is_feasible_and_idempotent(a in vector(), n_t in 1usize..9) {
        let p = project_a(&a, n_t);
        let scale = (n_t as f64).sqrt();
        for (z, orig) in p.iter().zip(a.iter()) {
            prop_assert!((z.norm() * scale - 1.0).abs() <= 1e-12);
            if orig.norm() > 0.0 {
                prop_assert!((z * scale - orig / orig.norm()).norm() <= 1e-12);
            }
        }
        let pp = project_a(&p, n_t);
        prop_assert!(pp.iter().zip(p.iter()).all(|(x, y)| (x - y).norm() <= 1e-15));
    }

    #[test]
    fn phase_projection_is_feasible_and_idempotent(t in vector()) {
        let p = project_theta(&t);
        prop_assert!(p.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12));
        let pp = project_theta(&p);
        prop_assert!(pp.iter().zip(p.iter()).all(|(x, y)| (x - y).norm() <= 1e-15));
    }

    #[test]
    fn combiner_projection_is_feasible_and_idempotent(c in matrix()) {
        let p = project_c(&c);
        for col in p.columns() {
            let n: f64 = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-12);
        }
        let pp = project_c(&p);
        prop_assert!(pp.iter().zip(p.iter()).all(|(x, y)| (x - y).norm() <= 1e-15));
    }

    #[test]
    fn slack_is_nonnegative_and_closes_the_gap(v in -1e3..1e3f64, gamma in 0.0..1e2f64, omega in 1e-6..1e2f64) {
        let mu = mu_from_violation(v, gamma, omega);
        prop_assert!(mu >= 0.0);
        // Residual equals -γω when the slack is active and v otherwise.
        let residual = v + mu;
        prop_assert!((residual - v.max(-gamma * omega)).abs() <= 1e-9 * (1.0 + v.abs() + gamma * omega));
    }

    #[test]
    fn jain_index_is_bounded(r in prop::collection::vec(0.0..10.0f64, 1..8)) {
        let k = r.len() as f64;
        let j = jain_index(&Array1::from(r).view());
        prop_assert!(j >= 1.0 / k - 1e-12 && j <= 1.0 + 1e-12);
    }
}

fn instance(seed: u64, beta: f64) -> (ris_ee_core::ChannelRealization, PowerModel, DesignVariables) {
    let dims = SystemDims::new(2, 2, 6, 2, 1, 2);
    let geo = Geometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ues = geo.sample_ue_positions(dims.k, &mut rng);
    let ch = synthesize_channels(&dims, &geo, &PathStats::default(), &ues, seed).unwrap();
    let ch = apply_csi_error(&ch, beta, seed ^ 0xABCD).unwrap();
    let pm = PowerModel::reference(dims.k);
    let vars = DesignVariables::random_feasible(&dims, pm.p_max, &mut rng);
    (ch, pm, vars)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn inner_sweep_never_lowers_the_lagrangian(seed in 0u64..1_000_000, rho in 0.3..1.0f64) {
        let (ch, pm, mut vars) = instance(seed, 0.1);
        let spec = FairnessSpec::new(rho, vec![1.0, 3.0]);
        let mut st = PddState { gamma: 0.5, omega: 1.0, ..PddState::default() };
        let mut h = evaluate(&vars, &ch, &pm, &spec, st.gamma, st.omega).unwrap().lagrangian;
        for _ in 0..5 {
            let (next, rec) = inner_sweep(&vars, &ch, &pm, &spec, &mut st).unwrap();
            prop_assert!(rec.lagrangian >= h - 1e-12);
            prop_assert!(next.mu >= 0.0);
            h = rec.lagrangian;
            vars = next;
        }
    }

    #[test]
    fn bound_is_exact_without_error(seed in 0u64..1_000_000) {
        let (ch, pm, vars) = instance(seed, 0.0);
        let lb = robust_rates(&vars, &ch, &pm).unwrap();
        let tr = true_rates(&vars, &ch, &pm).unwrap();
        for (a, b) in lb.iter().zip(tr.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12));
        }
    }
}
