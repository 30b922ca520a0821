//! Shows when the accuracy monitor raises a defense trigger.

use robustops::monitor::{check_degradation, DEFAULT_THRESHOLD};
use robustops::Result;

fn main() -> Result<()> {
    for (baseline, observed) in [(0.990, 0.985), (0.990, 0.940), (0.990, 0.935), (0.990, 0.334), (0.95, 0.97)] {
        let r = check_degradation(baseline, observed, DEFAULT_THRESHOLD)?;
        println!(
            "baseline {baseline:.3} observed {observed:.3}  drop {:>6.2} points  {}",
            r.drop_points,
            if r.triggered { "TRIGGER" } else { "ok" }
        );
    }
    Ok(())
}
