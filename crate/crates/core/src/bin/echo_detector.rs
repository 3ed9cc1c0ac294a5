//! Minimal protocol peer used to exercise the subprocess detector client.
//!
//! Usage: `scriptorium-echo-detector [MODE]` where MODE is one of `ok`
//! (default), `batch`, `bad-score`, `remote-error`, `silent`, `garbage`, or
//! `crash-after=N` (acknowledge N train calls, then exit on the next one), or
//! `batch-hold=N` (batch mode, but prediction answers are withheld until N
//! predict requests have arrived, so a client that waits after each request
//! stalls).
//! Predictions are one fixed neume box per requested image.

use std::io::{self, BufRead, Write};
use std::process::exit;

use scriptorium::detector::protocol::{PredictionItem, Request, Response, WireDetection};

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "ok".into());
    let crash_after: Option<usize> = mode.strip_prefix("crash-after=").and_then(|n| n.parse().ok());
    let hold: usize = mode.strip_prefix("batch-hold=").and_then(|n| n.parse().ok()).unwrap_or(1);
    if mode == "silent" {
        // never greets; the client must time out
        std::thread::sleep(std::time::Duration::from_secs(600));
        return;
    }
    let say = |r: Response| emit(&r.to_line());
    say(Response::Hello { batch: mode == "batch" || mode.starts_with("batch-hold=") });

    let mut held = Vec::new();

    let mut trained = 0usize;
    for line in io::stdin().lock().lines() {
        let Ok(line) = line else { exit(1) };
        let request = match Request::parse(&line) {
            Ok(r) => r,
            Err(e) => {
                say(Response::Error { error: e.to_string() });
                continue;
            }
        };
        match request {
            Request::Train { .. } => {
                if crash_after == Some(trained) {
                    exit(3);
                }
                trained += 1;
                match mode.as_str() {
                    "remote-error" => say(Response::Error { error: "out of memory".into() }),
                    "garbage" => {
                        emit("this is not json");
                        return;
                    }
                    _ => say(Response::Trained),
                }
            }
            Request::Predict { images } => {
                let score = if mode == "bad-score" { 1.5 } else { 0.5 };
                let items = images
                    .into_iter()
                    .map(|img| PredictionItem {
                        image_id: img.image_id,
                        detections: vec![WireDetection { category_id: 0, bbox: [10.0, 10.0, 50.0, 50.0], score }],
                    })
                    .collect();
                held.push(Response::Predictions { items });
                if held.len() >= hold {
                    for r in held.drain(..) {
                        say(r);
                    }
                }
            }
            Request::Shutdown {} => return,
        }
    }
}

fn emit(line: &str) {
    let mut out = io::stdout().lock();
    writeln!(out, "{line}").and_then(|_| out.flush()).unwrap_or_else(|_| exit(1));
}
