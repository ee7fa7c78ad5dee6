#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use bst_cli::serve::{router, serve, ServeState};
use bst_core::eval::{
    aggregate_fluency, aggregate_meaning, read_judgments, read_tasks, render_fluency, render_meaning, TaskKind,
};
use serde_json::Value;

/// A running annotation server on an ephemeral port.
pub struct Server {
    pub base: String,
    pub client: reqwest::blocking::Client,
}

impl Server {
    pub fn start(tasks: &Path, log: &Path) -> bst_core::Result<Server> {
        let state = Arc::new(ServeState::open(tasks, log)?);
        let app = router(state, None);
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                serve(listener, app).await.unwrap();
            });
        });
        let addr = rx.recv().unwrap();
        Ok(Server {
            base: format!("http://{addr}"),
            client: reqwest::blocking::Client::new(),
        })
    }

    pub fn get(&self, path: &str) -> reqwest::blocking::Response {
        self.client.get(format!("{}{path}", self.base)).send().unwrap()
    }

    pub fn post_raw(&self, body: &str) -> reqwest::blocking::Response {
        self.client
            .post(format!("{}/api/judgments", self.base))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .unwrap()
    }

    pub fn post(&self, submission: &Value) -> reqwest::blocking::Response {
        self.post_raw(&submission.to_string())
    }
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Outcome of replaying one fixture through the server.
pub struct Replay {
    pub rendered: String,
    pub expected_text: String,
    /// `(label, counts)` for meaning; `(label, n, sums)` flattened for fluency.
    pub rows: Vec<Value>,
    pub expected_rows: Vec<Value>,
    /// HTTP statuses of the scripted submissions that were not 201.
    pub rejected: Vec<u16>,
}

/// Posts every scripted submission of a fixture to a fresh server, then
/// tabulates the judgment log it wrote.
pub fn replay_fixture(name: &str, work: &Path) -> Replay {
    let dir = fixture(name);
    let log = work.join(format!("{name}.judgments.jsonl"));
    let server = Server::start(&dir.join("tasks.jsonl"), &log).unwrap();
    let mut rejected = Vec::new();
    for line in std::fs::read_to_string(dir.join("submissions.jsonl")).unwrap().lines() {
        let status = server.post_raw(line).status().as_u16();
        if status != 201 {
            rejected.push(status);
        }
    }
    let tasks = read_tasks(&dir.join("tasks.jsonl")).unwrap();
    let judgments = read_judgments(&log).unwrap();
    let (rendered, rows) = if tasks[0].kind == TaskKind::MeaningAb {
        let t = aggregate_meaning(&tasks, &judgments, true).unwrap();
        let rows = t
            .rows
            .iter()
            .map(|r| {
                let label = match r.bucket {
                    None => r.experiment.clone(),
                    Some(b) => format!("{} {}", r.experiment, b.label()),
                };
                for (c, p) in r.counts.iter().zip(r.percent) {
                    let want = if r.n == 0 { 0.0 } else { 100.0 * *c as f64 / r.n as f64 };
                    assert_eq!(p, want, "{label}");
                }
                serde_json::json!([label, r.counts])
            })
            .collect();
        (render_meaning(&t), rows)
    } else {
        let t = aggregate_fluency(&tasks, &judgments).unwrap();
        let by_row: Vec<Value> = t
            .rows
            .iter()
            .map(|r| {
                let sums: Vec<i64> = (0..2)
                    .map(|s| r.mean[s].map_or(0, |m| (m * r.n[s] as f64).round() as i64))
                    .collect();
                for s in 0..2 {
                    let want = (r.n[s] > 0).then(|| sums[s] as f64 / r.n[s] as f64);
                    assert_eq!(r.mean[s], want, "{}", r.label);
                }
                serde_json::json!([r.label, r.n, sums])
            })
            .collect();
        (render_fluency(&t), by_row)
    };
    let expected: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
    Replay {
        rendered,
        expected_text: std::fs::read_to_string(dir.join("expected.txt")).unwrap(),
        rows,
        expected_rows: expected["rows"].as_array().unwrap().clone(),
        rejected,
    }
}

pub const FIXTURES: [&str; 3] = ["meaning-buckets", "meaning-experiments", "fluency"];
