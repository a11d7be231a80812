//! Virtual clock, event scheduling and the stochastic connection model that
//! mediates every node-to-node interaction.

pub mod clock;
pub mod network;

pub use clock::{format_ms, ms_to_us, us_to_ms, Micros, VirtualClock};
pub use network::{
    connect, ConnectionOutcome, ContactLoad, DelayRange, NetworkParams, NodeIndex, OutcomeKind,
    OverheadScope,
};
