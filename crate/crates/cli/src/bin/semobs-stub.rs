//! Scripted inference server for local testing.

use std::time::Duration;

use clap::Parser;
use semobs_cli::stub::{StubScript, StubServer};

#[derive(Debug, Parser)]
#[command(name = "semobs-stub", version, about = "Scripted stand-in for a VLM inference server")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8077")]
    bind: String,
    /// Text returned for every /infer request.
    #[arg(long, default_value = "Normal")]
    answer: String,
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    /// HTTP status for /infer responses.
    #[arg(long, default_value_t = 200)]
    status: u16,
}

fn main() {
    let args = Args::parse();
    let script = StubScript {
        answer: args.answer,
        delay: Duration::from_millis(args.delay_ms),
        status: args.status,
    };
    match StubServer::start(&args.bind, script) {
        Ok(server) => {
            println!("listening on {}", server.url());
            server.join();
        }
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", args.bind);
            std::process::exit(1);
        }
    }
}
