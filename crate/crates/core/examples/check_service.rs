//! Starts the check service on an ephemeral port, sends two requests and
//! shuts down.

use std::sync::Arc;

use guardian::enforce::service::{router, ServiceState};
use guardian::enforce::EnforceConfig;
use guardian::policy::{read_policy, PolicyRepository, Snapshot};
use serde_json::json;

fn main() -> guardian::Result<()> {
    let policy = read_policy(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/read_file_policy.json").as_ref())?;
    let repo = Arc::new(PolicyRepository::from_snapshot(Snapshot::from_policies([policy])?));
    let state = Arc::new(ServiceState::new(repo, None, EnforceConfig::default()));

    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        tokio::runtime::Runtime::new().unwrap().block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router(state)).await.unwrap();
        })
    });
    let url = format!("http://{}/v1/check", rx.recv().unwrap());
    let client = reqwest::blocking::Client::new();
    for (input, prior) in [("./Cars/Sedan.txt", vec!["list_files"]), ("/etc/passwd", vec!["list_files"])] {
        let body = json!({
            "agent_role": "Senior Data Researcher",
            "tool_name": "read_file",
            "tool_input": input,
            "input_tokens": 2000,
            "output_tokens": 100,
            "timestamp": 1_748_944_800_000i64,
            "idle_ms": 2000,
            "processing_ms": 5000,
            "prior_tools": prior,
        });
        let reply: serde_json::Value = client.post(&url).json(&body).send().and_then(|r| r.json()).expect("service reply");
        println!("{input}: {reply}");
    }
    Ok(())
}
