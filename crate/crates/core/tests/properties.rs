mod common;

use std::sync::Arc;

use common::*;
use nalgebra::{DMatrix, DVector};
use possfilter::filter::{filter_single, predict, predict_function, prune, run_filter, update, FilterOptions, FilterState};
use possfilter::gaussian::{gaussian_product, kalman_update, GaussianObservationFactor, GaussianTransition};
use possfilter::grid_oracle::{atom_distance, sup_marginal, tabulate, JointTable};
use possfilter::model::{simulate, ConditionalPossibility, GridKernel, LinearGaussianDynamics, ObservationMap, ObservedInfo, Scenario};
use possfilter::outer_measure::{FiniteMap, FiniteOuterMeasure, MeasurableMap, TestFunction};
use possfilter::possibility::{
    Fallback, GaussianPossibility, Grid, GridPossibility, IndicatorPossibility, MaxMixture, PossibilityFunction, Region,
};
use possfilter::smoother::{backward_conditional, backward_smooth, joint_smooth_grid, BackwardConditional, JOINT_CAP};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_gaussian(r: &mut ChaCha8Rng, d: usize) -> GaussianPossibility {
    let m = DVector::from_fn(d, |_, _| r.random_range(-2.0..2.0));
    GaussianPossibility::new(m, spd(r, d, 0.2)).unwrap()
}

fn random_function(r: &mut ChaCha8Rng, d: usize) -> PossibilityFunction {
    match r.random_range(0..3) {
        0 => random_gaussian(r, d).into(),
        1 => {
            let k = r.random_range(1..4);
            let mut comps: Vec<(f64, GaussianPossibility)> = (0..k).map(|_| (r.random_range(0.1..1.0), random_gaussian(r, d))).collect();
            comps[0].0 = 1.0;
            MaxMixture::new(comps).unwrap().into()
        }
        _ => {
            let lo = DVector::from_fn(d, |_, _| r.random_range(-2.0..0.0));
            let hi = DVector::from_fn(d, |i, _| lo[i] + r.random_range(0.1..3.0));
            IndicatorPossibility::boxed(lo, hi).unwrap().into()
        }
    }
}

fn test_points(r: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<DVector<f64>> {
    (0..n).map(|_| DVector::from_fn(d, |_, _| r.random_range(-3.0..3.0))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_family_has_supremum_one(seed in any::<u64>(), d in 1usize..4) {
        let mut r = rng(seed);
        let f = random_function(&mut r, d);
        prop_assert_eq!(f.sup_over(&Region::Whole, Fallback::NONE).unwrap().value, 1.0);
        let mode = f.mode();
        prop_assert!((f.evaluate(&mode).unwrap() - 1.0).abs() < 1e-9);
        let g = Arc::new(Grid::indexed(6));
        let v = normalized(&mut r, 6, 0.3);
        let gf = grid_fn(&g, v);
        prop_assert_eq!(gf.sup_over(&Region::Points(g.points().to_vec()), Fallback::NONE).unwrap().value, 1.0);
    }

    #[test]
    fn product_commutes(seed in any::<u64>(), d in 1usize..3) {
        let mut r = rng(seed);
        let (f, g) = loop {
            let f = random_function(&mut r, d);
            let g = random_function(&mut r, d);
            // box against a smooth function has no closed form
            let boxy = |h: &PossibilityFunction| matches!(h, PossibilityFunction::Indicator(_));
            if boxy(&f) == boxy(&g) {
                break (f, g);
            }
        };
        let fg = f.product(&g, Fallback::NONE).unwrap();
        let gf = g.product(&f, Fallback::NONE).unwrap();
        match (fg, gf) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                prop_assert!((a.scale - b.scale).abs() <= 1e-12);
                for x in test_points(&mut r, d, 50) {
                    prop_assert!((a.base.evaluate(&x).unwrap() - b.base.evaluate(&x).unwrap()).abs() <= 1e-12);
                }
            }
            _ => prop_assert!(false, "one order found overlapping supports, the other did not"),
        }
    }

    #[test]
    fn product_with_vacuous_is_identity(seed in any::<u64>(), d in 1usize..4) {
        let mut r = rng(seed);
        let f = random_function(&mut r, d);
        let p = f.product(&PossibilityFunction::vacuous(d), Fallback::NONE).unwrap().unwrap();
        prop_assert_eq!(p.scale, 1.0);
        prop_assert_eq!(&p.base, &f);
    }

    #[test]
    fn dagger_identity(seed in any::<u64>(), d in 1usize..4) {
        let mut r = rng(seed);
        let f: PossibilityFunction = random_gaussian(&mut r, d).into();
        let g = random_function(&mut r, d);
        if matches!(g, PossibilityFunction::Indicator(_)) {
            return Ok(());
        }
        let p = f.product(&g, Fallback::NONE).unwrap().unwrap();
        for x in test_points(&mut r, d, 100) {
            let lhs = p.scale * p.base.evaluate(&x).unwrap();
            let rhs = f.evaluate(&x).unwrap() * g.evaluate(&x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10, "{} vs {}", lhs, rhs);
        }
    }

    #[test]
    fn log_evaluate_matches_direct_solve(seed in any::<u64>(), d in 1usize..5) {
        let mut r = rng(seed);
        let g = random_gaussian(&mut r, d);
        let inv = g.spread().clone().try_inverse().unwrap();
        for x in test_points(&mut r, d, 20) {
            let e = &x - g.mean();
            let direct = -0.5 * (e.transpose() * &inv * &e)[(0, 0)];
            prop_assert!((g.log_evaluate(&x).unwrap() - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn outer_measure_axioms(seed in any::<u64>(), d in 1usize..3, k in 1usize..5) {
        let mut r = rng(seed);
        let ws = weights(&mut r, k);
        let p = FiniteOuterMeasure::from_weighted(ws.into_iter().map(|w| (w, random_function(&mut r, d))).collect()).unwrap();
        prop_assert!((p.outer_eval(&TestFunction::One, Fallback::NONE).unwrap() - 1.0).abs() <= 1e-12);
        let lo = DVector::from_fn(d, |_, _| r.random_range(-3.0..1.0));
        let hi = DVector::from_fn(d, |i, _| lo[i] + r.random_range(0.1..3.0));
        let axis = r.random_range(0..d);
        let cut: f64 = r.random_range(lo[axis]..hi[axis]);
        let (mut a_hi, mut b_lo) = (hi.clone(), lo.clone());
        a_hi[axis] = cut;
        b_lo[axis] = cut.next_up();
        let eval = |lo: &DVector<f64>, hi: &DVector<f64>| p.outer_eval(&TestFunction::Box { lo: lo.clone(), hi: hi.clone() }, Fallback::NONE).unwrap();
        let (whole, a, b) = (eval(&lo, &hi), eval(&lo, &a_hi), eval(&b_lo, &hi));
        prop_assert!(a <= whole && b <= whole);
        prop_assert!(whole <= a + b);
    }

    #[test]
    fn fuse_commutes(seed in any::<u64>(), n in 2usize..8, k in 1usize..4, l in 1usize..4) {
        let mut r = rng(seed);
        let g = Arc::new(Grid::indexed(n));
        let p = grid_measure(&mut r, &g, k, 0.0);
        let q = grid_measure(&mut r, &g, l, 0.0);
        let pq = p.fuse(&q, Fallback::NONE).unwrap();
        let qp = q.fuse(&p, Fallback::NONE).unwrap();
        prop_assert!((pq.compatibility - qp.compatibility).abs() <= 1e-12);
        let a = tabulate(&pq.measure, &g, 1e-12).unwrap();
        let b = tabulate(&qp.measure, &g, 1e-12).unwrap();
        prop_assert!(atom_distance(&a, &b) <= 1e-12);
    }

    #[test]
    fn gaussian_fuse_commutes(seed in any::<u64>(), d in 1usize..3) {
        let mut r = rng(seed);
        let p = FiniteOuterMeasure::from_weighted(vec![(0.3, random_gaussian(&mut r, d).into()), (0.7, random_gaussian(&mut r, d).into())]).unwrap();
        let q = FiniteOuterMeasure::single(random_gaussian(&mut r, d));
        let pq = p.fuse(&q, Fallback::NONE).unwrap();
        let qp = q.fuse(&p, Fallback::NONE).unwrap();
        prop_assert!((pq.compatibility - qp.compatibility).abs() <= 1e-12);
        for a in pq.measure.atoms() {
            let hit = qp.measure.atoms().iter().any(|b| (a.weight - b.weight).abs() <= 1e-12 && a.function.approx_eq(&b.function, 1e-9));
            prop_assert!(hit);
        }
    }

    #[test]
    fn pushforward_and_pullback_duality(seed in any::<u64>(), n in 2usize..10, m in 1usize..6) {
        let mut r = rng(seed);
        let m = m.min(n);
        let domain = Arc::new(Grid::indexed(n));
        let codomain = Arc::new(Grid::indexed(m));
        // surjective so that pullbacks keep their supremum
        let mut table: Vec<usize> = (0..n).map(|i| if i < m { i } else { r.random_range(0..m) }).collect();
        for i in (1..n).rev() {
            table.swap(i, r.random_range(0..=i));
        }
        let xi = FiniteMap::new(domain.clone(), codomain.clone(), table).unwrap();
        let map = MeasurableMap::Finite(xi.clone());

        let atoms = r.random_range(1..4);
        let p = grid_measure(&mut r, &domain, atoms, 0.3);
        let pushed = p.pushforward(&map).unwrap();
        prop_assert_eq!(pushed.atoms().iter().map(|a| a.weight).collect::<Vec<_>>(), p.atoms().iter().map(|a| a.weight).collect::<Vec<_>>());
        let targets: Vec<usize> = (0..m).filter(|_| r.random_bool(0.5)).collect();
        let b = TestFunction::Points(targets.iter().map(|&j| codomain.point(j).clone()).collect());
        let pre = TestFunction::Points(xi.preimage(&targets).iter().map(|&i| domain.point(i).clone()).collect());
        prop_assert_eq!(pushed.outer_eval(&b, Fallback::NONE).unwrap(), p.outer_eval(&pre, Fallback::NONE).unwrap());

        let atoms = r.random_range(1..4);
        let q = grid_measure(&mut r, &codomain, atoms, 0.3);
        let pulled = q.pullback(&map).unwrap();
        let sources: Vec<usize> = (0..n).filter(|_| r.random_bool(0.5)).collect();
        let a = TestFunction::Points(sources.iter().map(|&i| domain.point(i).clone()).collect());
        let image = TestFunction::Points(xi.image(&sources).iter().map(|&j| codomain.point(j).clone()).collect());
        prop_assert_eq!(pulled.outer_eval(&a, Fallback::NONE).unwrap(), q.outer_eval(&image, Fallback::NONE).unwrap());

        let id = MeasurableMap::Finite(FiniteMap::new(domain.clone(), domain.clone(), (0..n).collect()).unwrap());
        prop_assert_eq!(p.pushforward(&id).unwrap(), p);
    }

    #[test]
    fn conditional_factorization(seed in any::<u64>(), n in 1usize..7, m in 1usize..7) {
        let mut r = rng(seed);
        let (gx, gy) = (Arc::new(Grid::indexed(n)), Arc::new(Grid::indexed(m)));
        let raw = normalized(&mut r, n * m, 0.3);
        let table = JointTable::new(vec![gx, gy], raw.clone()).unwrap();
        let (marginal, scale) = sup_marginal(&table, 0).unwrap();
        prop_assert_eq!(scale, 1.0);
        for i in 0..n {
            let fi = marginal.values()[i];
            prop_assert_eq!(fi, raw[i * m..(i + 1) * m].iter().cloned().fold(0.0, f64::max));
            if fi > 0.0 {
                for j in 0..m {
                    let cond = raw[i * m + j] / fi;
                    prop_assert!(cond <= 1.0);
                    prop_assert!((cond * fi - raw[i * m + j]).abs() <= f64::EPSILON * raw[i * m + j]);
                }
            }
        }
    }

    #[test]
    fn joseph_form_agrees(seed in any::<u64>(), d in 1usize..5, k in 1usize..4) {
        let mut r = rng(seed);
        let k = k.min(d);
        let sys = linear_system(&mut r, d, k);
        let y = DVector::from_fn(k, |_, _| r.random_range(-2.0..2.0));
        let obs = GaussianObservationFactor::new(sys.o.clone(), sys.r.clone(), y).unwrap();
        let (_, p, _) = kalman_update(&sys.m0, &sys.p0, &obs).unwrap();
        let s = &sys.o * &sys.p0 * sys.o.transpose() + &sys.r;
        let gain = &sys.p0 * sys.o.transpose() * s.try_inverse().unwrap();
        let ikh = DMatrix::identity(d, d) - &gain * &sys.o;
        let joseph = &ikh * &sys.p0 * ikh.transpose() + &gain * &sys.r * gain.transpose();
        prop_assert!((&p - &joseph).amax() <= 1e-10);
        prop_assert!((&p - p.transpose()).amax() == 0.0);
        prop_assert!(p.clone().cholesky().is_some());
    }

    #[test]
    fn gaussian_product_round_trip(seed in any::<u64>(), d in 1usize..4) {
        let mut r = rng(seed);
        let sys = linear_system(&mut r, d, 1);
        let g = GaussianTransition::new(sys.f.clone(), sys.q.clone()).unwrap();
        let f = GaussianPossibility::new(sys.m0.clone(), sys.p0.clone()).unwrap();
        let (pred, cond) = gaussian_product(&g, &f).unwrap();
        for _ in 0..20 {
            let x = DVector::from_fn(d, |_, _| r.random_range(-2.0..2.0));
            let xp = DVector::from_fn(d, |_, _| r.random_range(-2.0..2.0));
            let lhs = pred.evaluate(&x).unwrap() * cond.at(&x).unwrap().evaluate(&xp).unwrap();
            let rhs = g.evaluate(&xp, &x).unwrap() * f.evaluate(&xp).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10, "{} vs {}", lhs, rhs);
        }
    }

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>(), d in 1usize..3) {
        let mut r = rng(seed);
        let sys = linear_system(&mut r, d, 1);
        let truth = LinearGaussianDynamics { x0: sys.m0.clone(), f: sys.f.clone(), q: sys.q.clone(), o: sys.o.clone(), r: Some(sys.r.clone()) };
        let prior = FiniteOuterMeasure::single(gaussian(&sys.m0, &sys.p0));
        let tr: possfilter::model::TransitionSpec = ConditionalPossibility::Gaussian(GaussianTransition::new(sys.f.clone(), sys.q.clone()).unwrap()).into();
        let s = Scenario::homogeneous(prior, tr, vec![ObservedInfo::vacuous(d); 11], seed).unwrap();
        let a = simulate(&s, &truth).unwrap();
        let b = simulate(&s, &truth).unwrap();
        prop_assert_eq!(&a, &b);
        let other = Scenario { seed: seed.wrapping_add(1), ..s };
        prop_assert_ne!(&simulate(&other, &truth).unwrap(), &a);
    }

    #[test]
    fn predict_keeps_atoms_and_weights(seed in any::<u64>(), n in 2usize..9, k in 1usize..5) {
        let mut r = rng(seed);
        let g = Arc::new(Grid::indexed(n));
        let state = FilterState::new(grid_measure(&mut r, &g, k, 0.3));
        let tr = ConditionalPossibility::Grid(grid_kernel(&mut r, &g, &g, 0.3)).into();
        let next = predict(&state, &tr).unwrap();
        prop_assert_eq!(next.posterior.len(), state.posterior.len());
        for (a, b) in next.posterior.atoms().iter().zip(state.posterior.atoms()) {
            prop_assert_eq!(a.weight, b.weight);
            let top = g.points().iter().map(|x| a.function.evaluate(x).unwrap()).fold(0.0, f64::max);
            prop_assert!((top - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn two_predicts_equal_composed_kernel(seed in any::<u64>(), n in 2usize..9) {
        let mut r = rng(seed);
        let g = Arc::new(Grid::indexed(n));
        let f = grid_fn(&g, normalized(&mut r, n, 0.3));
        let k1 = grid_kernel(&mut r, &g, &g, 0.3);
        let k2 = grid_kernel(&mut r, &g, &g, 0.3);
        let composed = DMatrix::from_fn(n, n, |i, j| (0..n).map(|l| k1.matrix()[(i, l)] * k2.matrix()[(l, j)]).fold(0.0, f64::max));
        let k12 = GridKernel::new(g.clone(), g.clone(), composed).unwrap();
        let two = predict_function(&predict_function(&f, &ConditionalPossibility::Grid(k1)).unwrap(), &ConditionalPossibility::Grid(k2)).unwrap();
        let one = predict_function(&f, &ConditionalPossibility::Grid(k12)).unwrap();
        for x in g.points() {
            // (a·b)·c against a·(b·c): equal up to rounding of the reassociated products
            prop_assert!((two.evaluate(x).unwrap() - one.evaluate(x).unwrap()).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn update_normalizes_weights(seed in any::<u64>(), n in 2usize..8, horizon in 0usize..4) {
        let mut r = rng(seed);
        let s = grid_scenario(&mut r, n, horizon, 3, 3);
        for st in run_filter(&s, FilterOptions::exact()).unwrap() {
            let total: f64 = st.posterior.atoms().iter().map(|a| a.weight).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(st.compatibility > 0.0 && st.compatibility <= 1.0);
        }
    }

    #[test]
    fn single_atom_step_matches_pipeline(seed in any::<u64>(), n in 2usize..9) {
        let mut r = rng(seed);
        let g = Arc::new(Grid::indexed(n));
        let f = grid_fn(&g, normalized(&mut r, n, 0.2));
        let k = ConditionalPossibility::Grid(grid_kernel(&mut r, &g, &g, 0.2));
        let h = grid_fn(&g, normalized(&mut r, n, 0.0));
        let direct = filter_single(&f, &k, &h, &ObservationMap::Identity(1), Fallback::NONE).unwrap();
        let obs = ObservedInfo::new(ObservationMap::Identity(1), FiniteOuterMeasure::single(h)).unwrap();
        let state = update(&predict(&FilterState::new(FiniteOuterMeasure::single(f)), &k.into()).unwrap(), &obs, Fallback::NONE).unwrap();
        let piped = state.single().unwrap();
        for x in g.points() {
            prop_assert!((direct.evaluate(x).unwrap() - piped.evaluate(x).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn prune_matches_sort(seed in any::<u64>(), k in 1usize..20, max_atoms in 1usize..10, min_exp in 1i32..4) {
        let mut r = rng(seed);
        let g = Arc::new(Grid::indexed(3));
        let mut raw: Vec<f64> = (0..k).map(|_| 10f64.powf(-r.random_range(0.0..5.0))).collect();
        if k > 2 {
            raw[1] = raw[0];
        }
        let total: f64 = raw.iter().sum();
        let ws: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let fns: Vec<PossibilityFunction> = (0..k).map(|i| grid_fn(&g, vec![1.0, (i as f64 + 1.0) / (k as f64 + 2.0), 0.0])).collect();
        let p = FiniteOuterMeasure::from_weighted(ws.iter().cloned().zip(fns.iter().cloned()).collect()).unwrap();
        let min_weight = 10f64.powi(-min_exp);
        let pruned = prune(&FilterState::new(p), max_atoms, min_weight);

        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| ws[j].partial_cmp(&ws[i]).unwrap().then(i.cmp(&j)));
        let mut keep: Vec<usize> = order.iter().enumerate().filter(|(rank, &i)| *rank == 0 || ws[i] >= min_weight).map(|(_, &i)| i).take(max_atoms).collect();
        keep.sort();
        let kept_total: f64 = keep.iter().map(|&i| ws[i]).sum();
        prop_assert_eq!(pruned.posterior.len(), keep.len());
        for (a, &i) in pruned.posterior.atoms().iter().zip(&keep) {
            prop_assert_eq!(&a.function, &fns[i]);
            prop_assert!((a.weight - ws[i] / kept_total).abs() <= 1e-12);
        }
    }

    #[test]
    fn backward_smoother_properties(seed in any::<u64>(), n in 2usize..6, horizon in 0usize..4) {
        let mut r = rng(seed);
        let s = grid_scenario(&mut r, n, horizon, 1, 1);
        let filtered = run_filter(&s, FilterOptions::exact()).unwrap();
        let backward = backward_smooth(&filtered, &s.transitions).unwrap();
        let joint = joint_smooth_grid(&s, JOINT_CAP).unwrap();
        let g = Grid::indexed(n);
        for t in 0..=horizon {
            let a = tabulate(&backward.marginals[t], &g, 1e-12).unwrap();
            let b = tabulate(&joint.marginals[t], &g, 1e-12).unwrap();
            prop_assert!(atom_distance(&a, &b) <= 1e-12);
        }
        let last = tabulate(&filtered[horizon].posterior, &g, 1e-12).unwrap();
        prop_assert!(atom_distance(&last, &tabulate(&backward.marginals[horizon], &g, 1e-12).unwrap()) == 0.0);
        for t in 0..horizon {
            if let BackwardConditional::Grid { matrix, .. } = backward_conditional(filtered[t].single().unwrap(), &s.transitions[t]).unwrap() {
                for row in matrix.row_iter() {
                    prop_assert_eq!(row.max(), 1.0);
                }
            }
        }
    }
}

#[test]
fn gaussian_smoothed_spreads_shrink() {
    for seed in 0..20u64 {
        let mut r = rng(seed);
        let d = 1 + (seed as usize % 3);
        let sys = linear_system(&mut r, d, 1);
        let tr: possfilter::model::TransitionSpec = ConditionalPossibility::Gaussian(GaussianTransition::new(sys.f.clone(), sys.q.clone()).unwrap()).into();
        let obs = (0..=30)
            .map(|_| ObservedInfo::from_measurement(DVector::from_fn(1, |_, _| r.random_range(-1.0..1.0)), sys.r.clone(), sys.o.clone()).unwrap())
            .collect();
        let s = Scenario::homogeneous(FiniteOuterMeasure::single(gaussian(&sys.m0, &sys.p0)), tr, obs, seed).unwrap();
        let filtered = run_filter(&s, FilterOptions::exact()).unwrap();
        let smoothed = backward_smooth(&filtered, &s.transitions).unwrap();
        for t in 0..=30 {
            let (PossibilityFunction::Gaussian(sm), PossibilityFunction::Gaussian(fi)) = (smoothed.marginal_function(t).unwrap(), filtered[t].single().unwrap()) else {
                panic!("Gaussian expected");
            };
            assert!(sm.spread().clone().cholesky().is_some());
            assert_eq!(sm.spread(), &sm.spread().transpose());
            for i in 0..d {
                assert!(sm.spread()[(i, i)] <= fi.spread()[(i, i)] + 1e-9);
            }
        }
    }
}

#[test]
fn grid_kernel_rows_are_checked() {
    let g = Arc::new(Grid::indexed(2));
    assert!(GridKernel::new(g.clone(), g.clone(), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.9, 0.2])).is_err());
    assert!(GaussianTransition::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, -1.0)).is_err());
    assert!(GridPossibility::new(g, vec![0.5, 0.0]).is_err());
}
