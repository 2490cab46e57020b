//! Protocol specifications shipped with the crate.

/// Three-message Needham-Schroeder public-key protocol with two sessions
/// (A with B, B with C) and mutual authentication goals.
pub const NSPK: &str = include_str!("../protocols/nspk.ab");

/// NSPK with a secrecy goal on the responder nonce, single session.
pub const NSPK_SECRECY: &str = include_str!("../protocols/nspk_secrecy.ab");

/// A one-step plaintext protocol.
pub const PLAINTEXT_TOY: &str = include_str!("../protocols/plaintext_toy.ab");
