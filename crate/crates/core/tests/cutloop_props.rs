use diagcut::cutloop::{run_augmented_loop, run_cutting_loop, LoopParams};
use diagcut::instances::{gen_boxqp, gen_integer_qp};
use diagcut::linalg;
use diagcut::master::{build_master, solve_master, MasterOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn every_pooled_cut_separated_its_master_point(n in 3usize..12, p in 0.2f64..=1.0, seed in 0u64..200) {
        let inst = gen_integer_qp(n, p, seed).unwrap();
        let params = LoopParams::default();
        let report = run_cutting_loop(&inst, &params).unwrap();
        let pool = &report.diag_cut_pool;
        prop_assert_eq!(pool.len(), report.diag_cuts);

        let mut model = build_master(&inst, MasterOptions::default()).unwrap();
        model.add_diag_cut(pool[0].clone()).unwrap();
        for cut in &pool[1..] {
            let sol = solve_master(&model, &params.barrier).unwrap();
            let tol = params.violation_tol * (1.0 + sol.v.abs());
            let excess = model.cut_rhs(&cut.d, &sol.x, &sol.y) - sol.v;
            prop_assert!(excess > tol, "{excess} <= {tol}");
            model.add_diag_cut(cut.clone()).unwrap();
        }

        let norm = linalg::spectral_norm(&inst.q).unwrap();
        for (i, a) in pool.iter().enumerate() {
            let lmin = linalg::min_eigenvalue(&inst.q.add_diag(&a.d)).unwrap();
            prop_assert!(lmin >= -1e-8 * norm, "cut {i}: {lmin}");
            for b in &pool[..i] {
                prop_assert!(a.d != b.d);
            }
        }
    }

    #[test]
    fn linear_cuts_hold_at_box_points(n in 4usize..10, density in 0.3f64..=1.0, seed in 0u64..200) {
        let inst = gen_boxqp(n, density, seed).unwrap();
        let params = LoopParams { max_outer_iter: 40, ..LoopParams::default() };
        let report = run_augmented_loop(&inst, &params).unwrap();
        let model = build_master(&inst, MasterOptions { psd_split: true }).unwrap();
        let plus = &model.psd_split().unwrap().plus;
        let scale = 1.0 + inst.q.max_abs() * (n * n) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..400 {
            let x: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.5) { rng.random_range(0..=1) as f64 } else { rng.random_range(0.0..=1.0) })
                .collect();
            let v = inst.q.quad_form(&x);
            let tau = v - plus.quad_form(&x);
            for cut in &report.linear_cut_pool {
                prop_assert!(cut.violation(&x, tau, v) <= 1e-8 * scale);
            }
        }
    }
}
