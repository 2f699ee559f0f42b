//! Sample-size planning: Chebyshev repetition bounds against the exact
//! two-point confidence and an empirical failure rate.

use qcorr::statistics::{chebyshev_repetitions, confidence_two_point, empirical_failure_rate, BoundQuery, BoundVariant};

fn main() -> qcorr::Result<()> {
    for m in 1..=4 {
        let q = BoundQuery::new(m, 1.2, 0.1, 0.95);
        let real = chebyshev_repetitions(&q, BoundVariant::Real)?;
        let complex = chebyshev_repetitions(&q, BoundVariant::Complex)?;
        println!("m = {m}: real R = {}, complex R = {}", real.repetitions, complex.repetitions);
    }
    let r = chebyshev_repetitions(&BoundQuery::new(2, 1.0, 0.1, 0.95), BoundVariant::Real)?.repetitions;
    let rate = empirical_failure_rate(2, 1.0, 0.1, r, 1_000, 1, BoundVariant::Real)?;
    println!("observed failure rate at R = {r}: {rate:.4} (bound 0.05)");
    for r in [1, 10, 100, 1000] {
        println!("P(|mean of {r} products| < 0.25) = {:.5}", confidence_two_point(0.5, r, 1.0)?);
    }
    Ok(())
}
