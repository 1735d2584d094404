//! Finite-difference check of every parameter gradient of a small model
//! through the full training objective.

use v2sfm::harness::gradcheck_full;

fn main() -> v2sfm::Result<()> {
    let r = gradcheck_full(16, 1, 1)?;
    println!(
        "{} coordinates, max relative error {:.3e}, {} at non-smooth points",
        r.checked,
        r.max_rel_error,
        r.excluded.len()
    );
    if let Some(w) = &r.worst {
        println!("worst coordinate: {w:?}");
    }
    println!("{}", if r.passes(1e-4) { "pass" } else { "FAIL" });
    Ok(())
}
