//! Three-party audit protocol over newline-delimited JSON on TCP.
//!
//! The [`server::Server`] stores files as versioned EB-trees and answers
//! challenges; the [`tpa::Tpa`] holds manifests and checks proofs; the
//! [`client`] uploads, mutates and keeps the auditor's manifest current.
//!
//! Transport is plain TCP. Deploy behind a trusted network or tunnel.

pub mod audit;
pub mod client;
pub mod error;
pub mod server;
pub mod service;
pub mod tpa;
pub mod wire;

pub use audit::{derive_positions, handle_challenge, verify_bundle, Failure, Verdict, DEFAULT_K};
pub use client::{push_manifest, request_audit, Client, FileSession};
pub use error::{Error, Result};
pub use server::Server;
pub use service::{Handler, ServiceHandle, DEFAULT_PORT};
pub use tpa::Tpa;
pub use wire::{ErrorCode, Message};
