//! Stand-alone mock peer for the wire protocol.
//!
//! `cargo run --example mock_server -- [ADDR] [ANSWER]` serves scripted plans
//! and answers every detector question with ANSWER (default `Yes`).

use planwatch::config::SimConfig;
use planwatch::protocol::{MockBehavior, MockServer};

fn main() {
    let mut args = std::env::args().skip(1);
    let addr = args.next().unwrap_or_else(|| "127.0.0.1:7878".into());
    let answer = args.next().unwrap_or_else(|| "Yes".into());
    let server = MockServer::bind(&addr, MockBehavior::Scripted { cfg: SimConfig::default(), answer })
        .unwrap_or_else(|e| panic!("cannot listen on {addr}: {e}"));
    eprintln!("listening on {}", server.endpoint());
    server.wait();
}
