//! Filtering and smoothing on a three-state grid, with the brute-force joint for comparison.

use possfilter::filter::{run_filter, FilterOptions};
use possfilter::format::parse_scenario;
use possfilter::grid_oracle::{brute_joint, sup_marginal};
use possfilter::possibility::PossibilityFunction;
use possfilter::smoother::{backward_smooth, joint_smooth_grid, JOINT_CAP};

fn values(f: Option<&PossibilityFunction>) -> Vec<f64> {
    match f {
        Some(PossibilityFunction::Grid(g)) => g.values().to_vec(),
        other => panic!("expected a grid possibility, got {other:?}"),
    }
}

fn main() -> possfilter::Result<()> {
    let scenario = parse_scenario(include_str!("../fixtures/three_state.toml"))?;
    let filtered = run_filter(&scenario, FilterOptions::exact())?;
    let backward = backward_smooth(&filtered, &scenario.transitions)?;
    let joint = joint_smooth_grid(&scenario, JOINT_CAP)?;
    let table = brute_joint(&scenario)?;

    println!("joint max {:.6}, product of compatibilities {:.6}", table.max(), backward.normalizer);
    for t in 0..=scenario.horizon {
        let state = &filtered[t];
        let filt = state.posterior.atoms()[0].function.clone();
        let (oracle, _) = sup_marginal(&table, t)?;
        println!("t={t}");
        println!("  filtered  {:?}", scenario_values(&filt, &oracle));
        println!("  backward  {:?}", values(backward.marginal_function(t)));
        println!("  joint     {:?}", values(joint.marginal_function(t)));
        println!("  oracle    {:?}", oracle.values());
    }
    Ok(())
}

fn scenario_values(f: &PossibilityFunction, on: &possfilter::possibility::GridPossibility) -> Vec<f64> {
    on.grid().points().iter().map(|p| f.evaluate(p).unwrap()).collect()
}
