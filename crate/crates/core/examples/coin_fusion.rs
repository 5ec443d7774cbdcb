//! Two independent reports that a coin favours tails, fused.

use possfilter::format::parse_outer_measure;
use possfilter::outer_measure::TestFunction;
use possfilter::possibility::{state, Fallback};

fn main() -> possfilter::Result<()> {
    let a = parse_outer_measure(include_str!("../fixtures/coin_a.txt"))?;
    let b = parse_outer_measure(include_str!("../fixtures/coin_b.txt"))?;
    let tails = TestFunction::Points(vec![state(&[0.0])]);
    println!("each source: P(tails) = {}", a.outer_eval(&tails, Fallback::NONE)?);

    let fused = a.fuse(&b, Fallback::NONE)?;
    println!("compatibility {}", fused.compatibility);
    for atom in fused.measure.atoms() {
        println!("  weight {:<6} on {:?}", atom.weight, atom.function.mode().as_slice());
    }
    println!("fused: P(tails) = {}", fused.measure.outer_eval(&tails, Fallback::NONE)?);
    Ok(())
}
