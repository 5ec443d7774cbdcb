//! Particle filtering a known Markov chain with possibilistic observations as potentials,
//! against the exact discrete filter.

use possfilter::filter::run_particle_filter;
use possfilter::format::parse_scenario;
use possfilter::grid_oracle::{discrete_filter, stochastic_matrices};
use possfilter::possibility::Grid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> possfilter::Result<()> {
    let scenario = parse_scenario(include_str!("../fixtures/hmm_five_state.toml"))?;
    let grid = Grid::indexed(5);
    let potentials = scenario
        .observations
        .iter()
        .map(|o| grid.points().iter().map(|x| o.potential(x)).collect::<possfilter::Result<Vec<_>>>())
        .collect::<possfilter::Result<Vec<_>>>()?;
    let exact = discrete_filter(&[0.2; 5], &stochastic_matrices(&scenario)?, &potentials)?;

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let particles = run_particle_filter(&scenario, 20_000, &mut rng)?;
    for (t, (p, e)) in particles.iter().zip(&exact).enumerate().step_by(4) {
        let est = p.probabilities(&grid);
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
        println!("t={t:>2} particles {}  exact {}", fmt(&est), fmt(e));
    }
    Ok(())
}
