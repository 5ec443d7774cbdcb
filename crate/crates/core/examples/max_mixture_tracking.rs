//! A bimodal prior carried as two weighted Gaussian atoms, and as a single max-mixture.

use nalgebra::{DMatrix, DVector};
use possfilter::filter::{run_filter, FilterOptions};
use possfilter::gaussian::GaussianTransition;
use possfilter::model::{ConditionalPossibility, ObservedInfo, Scenario};
use possfilter::outer_measure::FiniteOuterMeasure;
use possfilter::possibility::{GaussianPossibility, MaxMixture};

fn main() -> possfilter::Result<()> {
    let left = GaussianPossibility::scalar(-3.0, 1.0)?;
    let right = GaussianPossibility::scalar(3.0, 1.0)?;
    let transition = ConditionalPossibility::Gaussian(GaussianTransition::scalar(1.0, 0.2)?);
    let ys = [0.4, 1.9, 2.7, 3.1];
    let observations: Vec<ObservedInfo> = ys
        .iter()
        .map(|y| ObservedInfo::from_measurement(DVector::from_element(1, *y), DMatrix::from_element(1, 1, 2.0), DMatrix::identity(1, 1)))
        .collect::<possfilter::Result<_>>()?;

    let two_atoms = FiniteOuterMeasure::from_weighted(vec![(0.5, left.clone().into()), (0.5, right.clone().into())])?;
    let mixture = FiniteOuterMeasure::single(MaxMixture::new(vec![(1.0, left), (1.0, right)])?);

    for (name, prior) in [("two atoms", two_atoms), ("max-mixture", mixture)] {
        let scenario = Scenario::homogeneous(prior, transition.clone().into(), observations.clone(), 0)?;
        let states = run_filter(&scenario, FilterOptions::default())?;
        println!("{name}");
        for s in &states {
            let weights: Vec<String> = s.posterior.atoms().iter().map(|a| format!("{:.4}", a.weight)).collect();
            println!("  t={} map {:>7.4} compatibility {:.4} weights [{}]", s.t, s.map_estimate()[0], s.compatibility, weights.join(", "));
        }
    }
    Ok(())
}
