//! Verify every loss gradient against central finite differences,
//! including the double-backprop gradient penalty and the composite
//! objective.
//!
//! Run with: cargo run --example gradcheck

fn main() -> regionsynth::Result<()> {
    let entries = regionsynth::gradcheck::run_suite(5, false)?;
    let mut ok = true;
    for e in &entries {
        println!(
            "{:<28} max rel err {:>12.3e}  {}",
            e.name,
            e.max_rel_err,
            if e.passed() { "ok" } else { "FAIL" }
        );
        ok &= e.passed();
    }
    assert!(ok, "gradient check failed");
    Ok(())
}
