use std::sync::Arc;

use hjblab::config::Config;
use hjblab::expr::Dims;
use hjblab::grid::{SpaceTimeGrid, SpatialGrid, TimeGrid};
use hjblab::hjb::{solve_hjb, HjbOptions};
use hjblab::problem::{registry, ControlSet, ExprCoefficients, LipschitzConstants, ProblemSpec};
use hjblab::value::{compute_value_dpp, read_field, write_field, DppOptions, ValueField};
use hjblab::verify::mollify;
use proptest::prelude::*;

fn grid(half: f64, dx: f64, t_end: f64, steps: usize) -> SpaceTimeGrid {
    SpaceTimeGrid::new(
        TimeGrid::new(0.0, t_end, steps).unwrap(),
        SpatialGrid::symmetric_1d(half, dx).unwrap(),
    )
}

#[test]
fn field_files_round_trip() {
    let spec = registry::drift_control().unwrap();
    let w = solve_hjb(&spec, &grid(2.0, 0.25, 1.0, 200), &HjbOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (csv, json) = write_field(&w, dir.path(), "w").unwrap();
    let back = read_field(&csv, &json).unwrap();
    assert_eq!(back.values, w.values);
    assert_eq!(back.argmin, w.argmin);
    assert_eq!(back.problem_hash, spec.hash());
}

#[test]
fn config_drives_hjb_and_dpp_to_the_same_field() {
    let cfg = Config::parse(
        r#"{"schema": 1, "problem": {"benchmark": "drift_control"}, "seed": 3,
            "grid": {"dx": 0.1}, "dpp": {"paths": 10000, "slabs": 10}}"#,
    )
    .unwrap();
    let spec = cfg.problem().unwrap();
    let h = solve_hjb(&spec, &cfg.hjb_grid(&spec).unwrap(), &cfg.hjb).unwrap();
    let d = compute_value_dpp(&spec, &cfg.dpp_grid(&spec).unwrap(), &cfg.dpp_options()).unwrap();
    let gap = d.max_gap_at(&h, 0.0, &[-1.0], &[1.0]);
    assert!(gap < 0.06, "{gap}");
    // both pick the control pushing towards the origin away from it
    assert_eq!(h.argmin_at(0, h.grid.space.nearest(&[-2.0])), Some(2));
    assert_eq!(d.argmin_at(0, d.grid.space.nearest(&[2.0])), Some(0));
}

fn quadratic(a: f64, c: f64) -> ProblemSpec {
    let coef = ExprCoefficients::parse(Dims::new(1, 1, 1), &["0"], &["1"], "0", &format!("{a:?}*x1^2 + {c:?}")).unwrap();
    ProblemSpec::new(
        "quadratic",
        1.0,
        LipschitzConstants { l1: 2.0 * a.abs() * 3.0 + 1.0, l2: 0.0, l3: 0.0 },
        ControlSet::trivial(1),
        Arc::new(coef),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // the central second difference is exact on quadratics
    #[test]
    fn hjb_is_exact_on_quadratic_terminal_data(a in 0.0f64..2.0, c in -1.0f64..1.0) {
        let w = solve_hjb(&quadratic(a, c), &grid(3.0, 0.25, 1.0, 40), &HjbOptions::default()).unwrap();
        let v = w.interp(0.0, &[0.5]);
        prop_assert!((v - (a * 0.25 + a + c)).abs() < 1e-10, "{v}");
    }

    // time is clamped at the ends of the interval, so only space is affine
    #[test]
    fn mollifier_reproduces_affine_fields(s in -2.0f64..2.0, c in -1.0f64..1.0) {
        let g = grid(1.0, 0.02, 1.0, 50);
        let f = ValueField::from_fn(g, |_, x| c + s * x[0]);
        let m = mollify(&f, 0.1).unwrap();
        prop_assert!(m.sup_error(&f, &[-0.5], &[0.5]) < 1e-10);
        let mut grad = [0.0];
        m.gradient(0.5, &[0.1], &mut grad);
        prop_assert!((grad[0] - s).abs() < 1e-9);
    }

    #[test]
    fn config_round_trips_through_json(seed in any::<u64>(), dx in 0.01f64..0.5, paths in 2usize..100_000) {
        let mut cfg = Config::for_benchmark("sigma_z");
        cfg.seed = seed;
        cfg.grid.dx = dx;
        cfg.dpp.paths = paths;
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(Config::parse(&text).unwrap(), cfg);
    }
}

#[test]
fn dpp_rejects_a_grid_that_misses_the_horizon() {
    let spec = registry::heat().unwrap();
    assert!(compute_value_dpp(&spec, &grid(1.0, 0.5, 0.5, 2), &DppOptions::default()).is_err());
}
