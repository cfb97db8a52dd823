//! Client/server boundary: a detection server hosting one detector per
//! session, and a paced client that streams samples and logs wire timings.
//!
//! Every message is one JSON object per line. A session starts with `init`;
//! the server answers each `sample` with a `reply` (or an `error`) carrying
//! its receive, send and processing timestamps.

mod client;
mod server;
pub mod wire;

pub use client::{run_client, ClientConfig, ClientLog, SampleRecord};
pub use server::{serve, ServerConfig, ServerHandle};
pub use wire::{DetectReply, ErrorReply, InitRequest, SamplePush, WireMessage};
