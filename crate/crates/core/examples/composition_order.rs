//! Nesting conditional outer measures forward or backward in time gives different answers
//! unless the steps are independent.

use possfilter::outer_measure::CompositionFixture;

fn main() -> possfilter::Result<()> {
    let dependent = CompositionFixture::dependent();
    println!("dependent: forward {} reverse {}", dependent.forward()?, dependent.reverse()?);
    let separable = CompositionFixture::separable();
    println!("separable: forward {} reverse {}", separable.forward()?, separable.reverse()?);
    Ok(())
}
