//! Campaign configuration and the snapshot loop.

/// Placeholder until the solver stack lands.
pub fn crate_name() -> &'static str {
    "cfmec-harness"
}
