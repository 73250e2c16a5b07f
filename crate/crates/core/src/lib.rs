//! History-based distributed capabilities: security automata, capability
//! tickets, the authorization and resource servers, an executable model of
//! the protocol, and the wire transport.

pub mod catalog;
pub mod sa;
pub mod auth;
pub mod clock;
pub mod crosscheck;
pub mod denial;
pub mod model;
pub mod policy;
pub mod resource;
pub mod service;
pub mod ticket;
pub mod transport;
