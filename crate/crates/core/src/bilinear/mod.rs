//! Bilinear transduction heads and the actor/critic approximators built on them.
//!
//! A bilinear head embeds the delta `Δs = s − s̃` and the anchor `s̃` separately
//! and combines the embeddings with per-channel inner products. Critics append
//! the action to both inputs. Plain MLP approximators share the same interface so
//! that training code is agnostic to the variant.

mod actor_critic;
mod approx;
mod head;
mod probe;

pub use actor_critic::{Actor, Critic, CriticGrads, CriticTapes};
pub use approx::{ApproxConfig, ApproxGrads, ApproxInput, ApproxKind, ApproxTape, Approximator};
pub use head::{BilinearConfig, BilinearGrads, BilinearHead, BilinearTape};
pub use probe::{ooc_generalization_probe, OocProbeConfig, OocProbeResult, OocSplit};
