//! Federated averaging over simulated UAV clients.

mod client;
mod log;
mod server;
mod update;

pub use client::{client_local_train, partition_clients, ClientState, RoundConfig, Swarm};
pub use log::{FederationLog, RoundEntry};
pub use server::{
    aggregate, evaluate_global, pretrain_epoch_seed, pretrain_global, run_federation,
    select_clients, GlobalEvaluation, Loopback, PublicSet, Transport,
};
pub use update::{find_embedded, ClientUpdate};
