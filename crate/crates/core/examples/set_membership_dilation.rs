//! Bounded-error estimation: prediction dilates the feasible set, box observations cut it.

use std::sync::Arc;

use possfilter::filter::{predict_function, run_filter, FilterOptions};
use possfilter::format::parse_scenario;
use possfilter::model::{ConditionalPossibility, SetValuedMap};
use possfilter::possibility::{state, Grid, IndicatorPossibility, PossibilityFunction, Support};

fn describe(f: &PossibilityFunction) -> String {
    match f {
        PossibilityFunction::Indicator(i) => match i.support() {
            Support::Box { lo, hi } => format!("[{}, {}]", lo[0], hi[0]),
            Support::Points(p) => format!("{:?}", p.iter().map(|x| x[0]).collect::<Vec<_>>()),
        },
        other => format!("{other:?}"),
    }
}

fn main() -> possfilter::Result<()> {
    let scenario = parse_scenario(include_str!("../fixtures/interval.toml"))?;
    for s in run_filter(&scenario, FilterOptions::default())? {
        println!("t={} feasible {}", s.t, describe(&s.posterior.atoms()[0].function));
    }

    // On a finite space each state maps to a set of successors; prediction is the union.
    let grid = Arc::new(Grid::indexed(5));
    let successors = |xs: &[f64]| IndicatorPossibility::points(xs.iter().map(|x| state(&[*x])).collect());
    let g = SetValuedMap::new(
        grid.clone(),
        vec![successors(&[0.0, 1.0])?, successors(&[2.0])?, successors(&[2.0, 3.0])?, successors(&[4.0])?, successors(&[0.0])?],
    )?;
    let prior: PossibilityFunction = successors(&[0.0, 2.0])?.into();
    let predicted = predict_function(&prior, &ConditionalPossibility::SetValued(g))?;
    println!("{} dilates to {}", describe(&prior), describe(&predicted));
    Ok(())
}
