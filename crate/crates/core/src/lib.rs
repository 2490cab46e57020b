//! Explicit-state model checking of security protocols with an optional
//! message-inspection intruder that prunes attack actions ahead of search.

pub mod checker;
pub mod commands;
pub mod fixtures;
pub mod intruder;
pub mod mi;
pub mod protocol;
pub mod terms;
