//! Objects layered on store-collect: atomic snapshot, generalized lattice
//! agreement, and the simple regular objects (max register, abort flag, set).

pub mod lattice;
pub mod simple;
pub mod snapshot;
