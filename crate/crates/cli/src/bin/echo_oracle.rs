//! A reference external oracle for the stdio protocol. It scores a
//! sequence by its length, or by its residue composition, and can be told
//! to misbehave in specific ways for conformance testing.
//!
//! ```text
//! echo-oracle [--name NAME] [--direction maximize|minimize]
//!             [--score length|composition]
//!             [--mode ok|malformed|misaligned|misordered|nondeterministic|crash|silent]
//! ```

use std::io::{self, BufRead, Write};

use clap::{Parser, ValueEnum};
use serde_json::{json, Value};

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Mode {
    Ok,
    Malformed,
    Misaligned,
    Misordered,
    Nondeterministic,
    Crash,
    Silent,
}

#[derive(Clone, Copy, ValueEnum)]
enum Score {
    Length,
    Composition,
}

#[derive(Parser)]
#[command(name = "echo-oracle")]
struct Args {
    #[arg(long, default_value = "echo-length")]
    name: String,
    #[arg(long, default_value = "maximize")]
    direction: String,
    #[arg(long, value_enum, default_value_t = Score::Length)]
    score: Score,
    #[arg(long, value_enum, default_value_t = Mode::Ok)]
    mode: Mode,
}

const ALPHABET: &str = "ACDEFGHIKLMNPQRSTVWY";

fn score(seq: &str, how: Score) -> f64 {
    match how {
        Score::Length => seq.len() as f64,
        Score::Composition => {
            let total: usize = seq.chars().filter_map(|c| ALPHABET.find(c)).sum();
            total as f64 / seq.len().max(1) as f64
        }
    }
}

fn main() {
    let args = Args::parse();
    if args.mode == Mode::Silent {
        std::thread::sleep(std::time::Duration::from_secs(3600));
        return;
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let hello = json!({"type": "hello", "name": args.name, "direction": args.direction});
    writeln!(out, "{hello}").unwrap();
    out.flush().unwrap();

    let mut requests = 0u64;
    for line in io::stdin().lock().lines() {
        let Ok(line) = line else { break };
        let msg: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("echo-oracle: unreadable request: {e}");
                std::process::exit(2);
            }
        };
        match msg["type"].as_str() {
            Some("bye") => break,
            Some("score") => {}
            other => {
                eprintln!("echo-oracle: unknown message type {other:?}");
                std::process::exit(2);
            }
        }
        requests += 1;
        let id = msg["id"].as_u64().unwrap_or(0);
        let seqs: Vec<&str> = msg["sequences"].as_array().map_or(Vec::new(), |a| a.iter().filter_map(Value::as_str).collect());
        let mut values: Vec<f64> = seqs.iter().map(|s| score(s, args.score)).collect();
        let reply = match args.mode {
            Mode::Crash => {
                eprintln!("echo-oracle: simulated crash on request {id}");
                std::process::exit(1);
            }
            Mode::Malformed => {
                writeln!(out, "this is not json").unwrap();
                out.flush().unwrap();
                continue;
            }
            Mode::Misaligned => {
                values.pop();
                json!({"type": "scores", "id": id, "values": values})
            }
            Mode::Misordered => json!({"type": "scores", "id": id + 1, "values": values}),
            Mode::Nondeterministic => {
                for v in values.iter_mut() {
                    *v += requests as f64 * 0.5;
                }
                json!({"type": "scores", "id": id, "values": values})
            }
            Mode::Ok | Mode::Silent => json!({"type": "scores", "id": id, "values": values}),
        };
        writeln!(out, "{reply}").unwrap();
        out.flush().unwrap();
    }
}
