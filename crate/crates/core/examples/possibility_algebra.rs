//! Products, suprema and rescaling of possibility functions.

use nalgebra::DMatrix;
use possfilter::possibility::{state, Fallback, GaussianPossibility, IndicatorPossibility, MaxMixture, PossibilityFunction, Region};

fn main() -> possfilter::Result<()> {
    let a = GaussianPossibility::scalar(0.0, 1.0)?;
    let b = GaussianPossibility::scalar(2.0, 1.0)?;

    // The product of two Gaussian possibilities is Gaussian up to a scale; the scale is its supremum.
    let (ab, scale) = a.product(&b)?;
    println!("N(0,1) * N(2,1) = {scale:.6} x N({:.3}, {:.3})", ab.mean()[0], ab.spread()[(0, 0)]);

    let f: PossibilityFunction = a.clone().into();
    for x in [-1.0, 0.0, 0.5, 2.0] {
        println!("f({x}) = {:.6}", f.evaluate(&state(&[x]))?);
    }

    let sup = f.sup_over(&Region::Box { lo: state(&[1.0]), hi: state(&[3.0]) }, Fallback::NONE)?;
    println!("sup of f over [1, 3] = {:.6} (exact: {})", sup.value, sup.exact);

    // A box indicator times a Gaussian has no closed form; the grid fallback approximates it.
    let boxed: PossibilityFunction = IndicatorPossibility::interval(1.0, 3.0)?.into();
    if let Some(p) = f.product(&boxed, Fallback::grid(2001))? {
        println!("f * 1[1,3]: scale {:.6}, mode {:.4}, approximate {}", p.scale, p.base.mode()[0], p.approximate);
    }

    let mix = MaxMixture::new(vec![
        (1.0, GaussianPossibility::new(state(&[-2.0, 0.0]), DMatrix::identity(2, 2))?),
        (0.6, GaussianPossibility::new(state(&[2.0, 1.0]), DMatrix::identity(2, 2) * 0.5)?),
    ])?;
    let mix: PossibilityFunction = mix.into();
    println!("max-mixture mode {:?}, value at (2, 1) = {:.3}", mix.mode().as_slice(), mix.evaluate(&state(&[2.0, 1.0]))?);
    Ok(())
}
