//! Push an outer measure on a planar grid to distance from the origin, and pull a test back.

use std::sync::Arc;

use possfilter::outer_measure::{FiniteMap, FiniteOuterMeasure, MeasurableMap, TestFunction};
use possfilter::possibility::{state, Fallback, GaussianPossibility, Grid, GridPossibility, PossibilityFunction};

fn main() -> possfilter::Result<()> {
    let ticks: Vec<f64> = (-8..=8).map(|i| f64::from(i) * 0.25).collect();
    let plane = Arc::new(Grid::product(&[&Grid::scalar(&ticks)?, &Grid::scalar(&ticks)?])?);

    let blob: PossibilityFunction = GaussianPossibility::new(state(&[0.5, 0.25]), nalgebra::DMatrix::identity(2, 2) * 0.3)?.into();
    let values = plane.points().iter().map(|p| blob.evaluate(p)).collect::<possfilter::Result<Vec<_>>>()?;
    let on_grid = GridPossibility::from_raw(plane.clone(), values)?.expect("positive somewhere").base;
    let p = FiniteOuterMeasure::single(on_grid);

    // Radius rounded to the nearest half unit.
    let radius = FiniteMap::from_fn(plane.clone(), |x| state(&[(x.norm() * 2.0).round() / 2.0]))?;
    let map = MeasurableMap::Finite(radius.clone());
    let pushed = p.pushforward(&map)?;

    for r in radius.codomain().points().iter().take(6) {
        println!("radius {:>4}: {:.4}", r[0], pushed.point_value(r)?);
    }

    // Disk of radius at most 1: evaluate on the image and on the preimage.
    let inner: Vec<usize> = (0..radius.codomain().len()).filter(|&j| radius.codomain().point(j)[0] <= 1.0).collect();
    let on_image = TestFunction::Points(inner.iter().map(|&j| radius.codomain().point(j).clone()).collect());
    let on_plane = TestFunction::Points(radius.preimage(&inner).iter().map(|&i| plane.point(i).clone()).collect());
    println!(
        "disk: pushed {:.6}, original on preimage {:.6}",
        pushed.outer_eval(&on_image, Fallback::NONE)?,
        p.outer_eval(&on_plane, Fallback::NONE)?
    );
    Ok(())
}
