//! The possibilistic Gaussian filter next to a covariance Kalman filter on the same data.

use possfilter::filter::{run_filter, FilterOptions};
use possfilter::format::parse_scenario;
use possfilter::model::{ConditionalPossibility, TransitionSpec};
use possfilter::possibility::PossibilityFunction;

fn main() -> possfilter::Result<()> {
    let scenario = parse_scenario(include_str!("../fixtures/linear_gaussian.toml"))?;
    let states = run_filter(&scenario, FilterOptions::exact())?;

    let PossibilityFunction::Gaussian(prior) = &scenario.prior.atoms()[0].function else { unreachable!() };
    let TransitionSpec::Possibility(ConditionalPossibility::Gaussian(g)) = &scenario.transitions[0] else { unreachable!() };
    let (f, q) = (g.f(), g.q());
    let o = nalgebra::DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let r = 0.25;

    let mut m = prior.mean().clone();
    let mut p = prior.spread().clone();
    let mut worst = 0.0f64;
    for (t, s) in states.iter().enumerate() {
        if t > 0 {
            m = f * &m;
            p = f * &p * f.transpose() + q;
        }
        let PossibilityFunction::Gaussian(h) = &scenario.observations[t].atoms().atoms()[0].function else { unreachable!() };
        let s_inn = (&o * &p * o.transpose())[(0, 0)] + r;
        let k = &p * o.transpose() / s_inn;
        m += &k * (h.mean()[0] - (&o * &m)[0]);
        p = &p - &k * &o * &p;

        let PossibilityFunction::Gaussian(ours) = &s.posterior.atoms()[0].function else { unreachable!() };
        worst = worst.max((ours.mean() - &m).amax()).max((ours.spread() - &p).amax());
        if t % 10 == 0 {
            println!("t={t:>2} mean {:>8.4} {:>8.4}  kalman {:>8.4} {:>8.4}", ours.mean()[0], ours.mean()[1], m[0], m[1]);
        }
    }
    println!("largest deviation over {} steps: {worst:e}", states.len());
    Ok(())
}
