//! Deterministic, desk-scale simulation of a master/worker PaaS deployed on a
//! load-balanced cloud provider.
//!
//! The crate is `no_std` (with `alloc`) and performs no IO. Everything runs on a
//! single virtual-time event loop, so a `(seed, scenario)` pair fully determines
//! every emitted trace. The `paas-sim` crate layers configuration files, CSV and
//! trace output, and a CLI on top.
//!
//! Layout:
//! - [`uri`], [`message`], [`work`], [`instance`], [`clock`]: shared domain types.
//! - [`netsim`]: event queue, endpoints, round-robin load balancers, latency.
//! - [`proxy`]: the message proxy that forwards to a worker's internal endpoint.
//! - [`master`]: membership, FIFO scheduling, rescheduling and accounting.
//! - [`worker`]: work-unit execution, heartbeats and the workload registry.
//! - [`provisioning`]: resource pool, deployment lifecycle, scaling policies.
//! - [`storage`]: blob store and notification queues for file transfer.
//! - [`models`]: client-side Task and Thread programming models, Mandelbrot app.
//! - [`sim`]: wires all actors together for both deployment modes.
//! - [`experiments`]: the scaled benchmark scenarios.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod clock;
pub mod experiments;
pub mod instance;
pub mod master;
pub mod message;
pub mod models;
pub mod netsim;
pub mod provisioning;
pub mod proxy;
pub mod sim;
pub mod storage;
pub mod uri;
pub mod work;
pub mod worker;

pub use clock::{Millis, VirtualClock};
pub use instance::InstanceSize;
pub use message::{authenticate, Message, MessageId, MessageKind, Payload, SharedKey};
pub use uri::{EndpointAddr, NodeUri, UriError};
pub use work::{AppId, AppState, Application, Model, UnitId, UnitState, WorkUnit};
