//! Honion deployment, snooping-relay attribution and reporting.
//!
//! A honion is a short-lived onion service whose address is never published.
//! Any visit to it can only come from a party that learned the address from
//! the descriptor, which in practice means one of the HSDir relays that
//! stored it. This crate places honions on the HSDir ring, simulates
//! deployments, builds the bipartite visit/relay graph, finds the smallest
//! relay set that explains every visit and summarizes the result.

pub mod collector;
pub mod detector;
pub mod graph;
pub mod pipeline;
pub mod planner;
pub mod records;
pub mod report;
pub mod ring;
pub mod simulator;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ring(#[from] ring::RingError),
    #[error(transparent)]
    Planner(#[from] planner::PlannerError),
    #[error(transparent)]
    Records(#[from] records::JsonlError),
    #[error(transparent)]
    Simulation(#[from] simulator::SimError),
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Detect(#[from] detector::DetectError),
    #[error(transparent)]
    Collector(#[from] collector::CollectorError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error("{0}")]
    Input(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
