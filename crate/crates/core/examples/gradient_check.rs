//! Central-difference gradient checks for SRU, SRU++ and the full encoder,
//! plus a deliberately broken gradient to show the check catching it.

use srupp_encoder::harness::gradcheck::{
    gradcheck, gradcheck_with_fault, Fault, ModelKind, GRADCHECK_TOLERANCE,
};

fn main() -> srupp_encoder::Result<()> {
    for kind in [ModelKind::Sru, ModelKind::Srupp, ModelKind::Encoder] {
        for seed in 0..3 {
            let r = gradcheck(kind, seed)?;
            println!(
                "{:<8} seed {seed}: max_rel_err {:.2e} over {} scalars (worst {}[{}])  {}",
                kind.name(),
                r.max_rel_err,
                r.checked,
                r.worst_param,
                r.worst_index,
                if r.passed() { "ok" } else { "FAILED" }
            );
        }
    }
    let r = gradcheck_with_fault(ModelKind::Srupp, 0, Fault::FlipAlphaGradient)?;
    println!(
        "with the alpha gradient sign-flipped: max_rel_err {:.2e} at {} (tolerance {GRADCHECK_TOLERANCE:e})",
        r.max_rel_err, r.worst_param
    );
    Ok(())
}
