//! Gradient inversion against shared gradients.
//!
//! The attacker minimizes `J = ‖g* − ∂l(F(X̃), ỹ)/∂θ‖²` over a dummy image,
//! optionally a soft label and, when the projector was withheld, a guessed
//! projector. `∇ᵥJ = −2 (∂g/∂v)ᵀ r` with `r = g* − g` is a Hessian-vector
//! product; it is obtained by central differences of the first-order backward
//! pass along `r`: `∇ᵥJ ≈ −(∇ᵥl(θ + εr) − ∇ᵥl(θ − εr)) / ε`.

mod capture;
mod dlg;
mod output;

pub use capture::{capture_gradients, victim_model, CapturedGradients, ShareScope};
pub use dlg::{
    attack_objective, dlg_attack, objective_gradient, AttackConfig, AttackInit, AttackMode, AttackResult,
    GradientMethod, LabelStrategy, Optimizer, Victim,
};
pub use output::{attack_metrics, pgm_bytes, trace_csv, write_pgm};
