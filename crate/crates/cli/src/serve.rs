//! The annotation service. The judgment log on disk is the record; memory
//! holds only an index of which (task, annotator) pairs it already contains.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bst_core::eval::{read_judgments, read_tasks, AnnotationTask, Judgment, JudgmentSubmission};
use bst_core::{Error, Result};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

const PLACEHOLDER: &str = "<!doctype html><title>bst</title><p>Annotation API at /api.</p>\n";

struct Index {
    judged: HashSet<(usize, String)>,
    per_annotator: BTreeMap<String, usize>,
    total: usize,
    log: File,
}

pub struct ServeState {
    tasks: Vec<AnnotationTask>,
    by_id: HashMap<String, usize>,
    index: Mutex<Index>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub tasks: usize,
    pub judgments: usize,
    pub annotators: BTreeMap<String, usize>,
    /// Present when the request names an annotator.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub remaining: Option<usize>,
}

#[derive(Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn reject(status: StatusCode, reason: impl ToString) -> Response {
    (status, Json(ErrorBody { error: reason.to_string() })).into_response()
}

impl ServeState {
    /// Loads the tasks and rebuilds the index from an existing log, which
    /// must only reference known tasks and hold each pair once.
    pub fn open(tasks_path: &Path, log_path: &Path) -> Result<Self> {
        let tasks = read_tasks(tasks_path)?;
        let mut by_id = HashMap::with_capacity(tasks.len());
        for (i, t) in tasks.iter().enumerate() {
            if by_id.insert(t.id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("task id `{}` appears twice", t.id)));
            }
        }
        let mut judged = HashSet::new();
        let mut per_annotator = BTreeMap::new();
        let existing = read_judgments(log_path)?;
        for j in &existing {
            let &i = by_id.get(&j.task_id).ok_or_else(|| Error::UnknownTask(j.task_id.clone()))?;
            tasks[i].check(&j.verdict)?;
            if !judged.insert((i, j.annotator.clone())) {
                return Err(Error::DuplicateJudgment {
                    task: j.task_id.clone(),
                    annotator: j.annotator.clone(),
                });
            }
            *per_annotator.entry(j.annotator.clone()).or_insert(0) += 1;
        }
        if let Some(p) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(p).map_err(|source| Error::Io {
                path: p.display().to_string(),
                source,
            })?;
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log_path)
            .map_err(|source| Error::Io {
                path: log_path.display().to_string(),
                source,
            })?;
        Ok(Self {
            tasks,
            by_id,
            index: Mutex::new(Index {
                judged,
                per_annotator,
                total: existing.len(),
                log,
            }),
        })
    }

    /// First task in file order the annotator has not judged.
    pub fn next_for(&self, annotator: &str) -> Option<&AnnotationTask> {
        let index = self.index.lock().unwrap();
        (0..self.tasks.len())
            .find(|&i| !index.judged.contains(&(i, annotator.to_string())))
            .map(|i| &self.tasks[i])
    }

    /// Validates and appends one judgment.
    pub fn submit(&self, sub: JudgmentSubmission) -> Result<Judgment> {
        if sub.annotator.trim().is_empty() {
            return Err(Error::InvalidJudgment("annotator id is empty".into()));
        }
        let &i = self
            .by_id
            .get(&sub.task_id)
            .ok_or_else(|| Error::UnknownTask(sub.task_id.clone()))?;
        self.tasks[i].check(&sub.verdict)?;
        let mut index = self.index.lock().unwrap();
        let key = (i, sub.annotator.clone());
        if index.judged.contains(&key) {
            return Err(Error::DuplicateJudgment {
                task: sub.task_id,
                annotator: sub.annotator,
            });
        }
        let judgment = Judgment {
            task_id: sub.task_id,
            annotator: sub.annotator,
            verdict: sub.verdict,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
        };
        let mut line = serde_json::to_vec(&judgment).map_err(|source| Error::Json {
            context: "judgment".into(),
            source,
        })?;
        line.push(b'\n');
        index
            .log
            .write_all(&line)
            .and_then(|_| index.log.sync_data())
            .map_err(|source| Error::Io {
                path: "judgment log".into(),
                source,
            })?;
        index.judged.insert(key);
        *index.per_annotator.entry(judgment.annotator.clone()).or_insert(0) += 1;
        index.total += 1;
        Ok(judgment)
    }

    pub fn progress(&self, annotator: Option<&str>) -> Progress {
        let index = self.index.lock().unwrap();
        Progress {
            tasks: self.tasks.len(),
            judgments: index.total,
            annotators: index.per_annotator.clone(),
            remaining: annotator.map(|a| self.tasks.len() - index.per_annotator.get(a).copied().unwrap_or(0)),
        }
    }
}

async fn next_task(State(state): State<Arc<ServeState>>, Query(q): Query<AnnotatorQuery>) -> Response {
    let Some(annotator) = q.annotator.filter(|a| !a.trim().is_empty()) else {
        return reject(StatusCode::BAD_REQUEST, "missing `annotator` query parameter");
    };
    match state.next_for(&annotator) {
        Some(task) => Json(task.payload()).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn post_judgment(State(state): State<Arc<ServeState>>, body: Bytes) -> Response {
    let sub: JudgmentSubmission = match serde_json::from_slice(&body) {
        Ok(s) => s,
        Err(e) => return reject(StatusCode::BAD_REQUEST, format!("malformed judgment: {e}")),
    };
    match state.submit(sub) {
        Ok(j) => (StatusCode::CREATED, Json(j)).into_response(),
        Err(e @ Error::DuplicateJudgment { .. }) => reject(StatusCode::CONFLICT, e),
        Err(e @ (Error::UnknownTask(_) | Error::InvalidJudgment(_))) => reject(StatusCode::BAD_REQUEST, e),
        Err(e) => {
            log::error!("{e}");
            reject(StatusCode::INTERNAL_SERVER_ERROR, e)
        }
    }
}

async fn progress(State(state): State<Arc<ServeState>>, Query(q): Query<AnnotatorQuery>) -> Json<Progress> {
    Json(state.progress(q.annotator.as_deref()))
}

/// The API routes, plus static files from `static_dir` at `/` when given.
pub fn router(state: Arc<ServeState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/judgments", post(post_judgment))
        .route("/api/progress", get(progress))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { axum::response::Html(PLACEHOLDER) })),
    }
}

/// Serves until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}
