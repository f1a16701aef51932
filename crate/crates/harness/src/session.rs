//! Local HTTP session that lets a person answer the learner's queries.
//!
//! Endpoints:
//! - `GET /state`: status, pending query, layout hint and progress counters.
//! - `POST /answer` with `{"answer": "yes" | "no", "id": <query id>}`; the id
//!   is optional, but when given it must match the pending query. 409 when
//!   no query is pending or the id is stale.
//! - `GET /learned`: the learned constraints so far.
//! - `POST /abort`: stops the run and writes a checkpoint. 409 when the run
//!   is already over.
//! - `GET /events`: server-sent events, one `state` payload per change.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;

use acq_core::acquisition::{Acquisition, Convergence};
use acq_core::benchmarks::Layout;
use acq_core::error::{AcqError, OracleError};
use acq_core::model::{Assignment, Constraint};
use acq_core::oracle::{self, Answer, ChannelOracle, Oracle, PendingQuery, Phase, Progress};
use anyhow::Result;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, watch};

use crate::checkpoint::Checkpoint;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    Finished { convergence: Convergence },
    Aborted { checkpoint: PathBuf },
    Failed { error: String },
}

impl SessionStatus {
    pub fn is_over(&self) -> bool {
        *self != SessionStatus::Running
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub var: u32,
    pub value: i32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryView {
    pub id: u64,
    pub phase: Phase,
    pub assignment: Vec<Binding>,
}

impl QueryView {
    fn new(q: &PendingQuery) -> Self {
        QueryView {
            id: q.id,
            phase: q.phase,
            assignment: bindings(&q.assignment),
        }
    }

    pub fn to_assignment(&self) -> Assignment {
        self.assignment
            .iter()
            .map(|b| (acq_core::model::Var(b.var), b.value))
            .collect()
    }
}

fn bindings(e: &Assignment) -> Vec<Binding> {
    e.iter()
        .map(|(v, x)| Binding { var: v.0, value: x })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressView {
    pub learned: usize,
    pub bias_remaining: usize,
    pub queries: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateView {
    pub status: SessionStatus,
    pub pending: Option<QueryView>,
    pub layout: Layout,
    pub progress: ProgressView,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintView {
    pub relation: String,
    pub scope: Vec<u32>,
    pub text: String,
}

impl ConstraintView {
    fn new(c: &Constraint) -> Self {
        ConstraintView {
            relation: c.relation().to_string(),
            scope: c.scope().iter().map(|v| v.0).collect(),
            text: c.to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub answer: Answer,
    #[serde(default)]
    pub id: Option<u64>,
}

struct Inner {
    status: SessionStatus,
    pending: Option<PendingQuery>,
    answers: Option<mpsc::SyncSender<Answer>>,
    learned: Vec<Constraint>,
    progress: ProgressView,
}

struct Shared {
    inner: Mutex<Inner>,
    layout: Layout,
    events: broadcast::Sender<String>,
    done: watch::Sender<bool>,
}

impl Shared {
    fn view(&self) -> StateView {
        let g = self.inner.lock().expect("session lock");
        StateView {
            status: g.status.clone(),
            pending: g.pending.as_ref().map(QueryView::new),
            layout: self.layout.clone(),
            progress: g.progress.clone(),
        }
    }

    fn publish(&self) {
        if let Ok(s) = serde_json::to_string(&self.view()) {
            let _ = self.events.send(s);
        }
    }
}

/// The oracle used by the acquisition thread: forwards queries to the
/// service and mirrors progress into the shared state.
struct SessionOracle {
    chan: ChannelOracle,
    shared: Arc<Shared>,
}

impl Oracle for SessionOracle {
    fn ask(&mut self, e: &Assignment, phase: Phase) -> Result<Answer, OracleError> {
        self.chan.ask(e, phase)
    }

    fn observe(&mut self, p: &Progress<'_>) {
        let mut g = self.shared.inner.lock().expect("session lock");
        g.learned = p.learned.iter().cloned().collect();
        g.progress = ProgressView {
            learned: p.learned.len(),
            bias_remaining: p.bias_remaining,
            queries: p.queries,
        };
    }
}

/// A running session: the HTTP service plus the acquisition thread.
pub struct SessionHandle {
    pub addr: SocketAddr,
    shared: Arc<Shared>,
    acquisition: Option<thread::JoinHandle<Acquisition>>,
    server: Option<thread::JoinHandle<()>>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
}

impl SessionHandle {
    pub fn state(&self) -> StateView {
        self.shared.view()
    }

    /// Waits for the acquisition to end, stops the service and returns the
    /// final acquisition state.
    pub fn join(mut self) -> Result<Acquisition> {
        let acq = self
            .acquisition
            .take()
            .expect("joined once")
            .join()
            .map_err(|_| anyhow::anyhow!("acquisition thread panicked"))?;
        self.stop();
        Ok(acq)
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.server.take() {
            let _ = h.join();
        }
    }
}

impl Drop for SessionHandle {
    fn drop(&mut self) {
        let _ = self.shared.inner.lock().map(|mut g| g.answers.take());
        self.stop();
    }
}

/// Starts a session on `addr` (port 0 picks a free port).
pub fn start(
    acq: Acquisition,
    layout: Layout,
    benchmark: Option<String>,
    checkpoint: PathBuf,
    addr: SocketAddr,
) -> Result<SessionHandle> {
    let (chan, endpoint) = oracle::channel();
    let (events, _) = broadcast::channel(64);
    let (done, _) = watch::channel(false);
    let shared = Arc::new(Shared {
        inner: Mutex::new(Inner {
            status: SessionStatus::Running,
            pending: None,
            answers: Some(endpoint.answers),
            learned: acq.state.learned.iter().cloned().collect(),
            progress: ProgressView {
                learned: acq.state.learned.len(),
                bias_remaining: acq.state.bias.len(),
                queries: acq.state.log.len(),
            },
        }),
        layout,
        events,
        done,
    });

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(1)
        .enable_all()
        .build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (shutdown, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
    let app = router(shared.clone());
    let server = thread::spawn(move || {
        runtime.block_on(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = shutdown_rx.await;
                })
                .await;
        });
    });

    let bridge_shared = shared.clone();
    let queries = endpoint.queries;
    thread::spawn(move || {
        while let Ok(q) = queries.recv() {
            {
                let mut g = bridge_shared.inner.lock().expect("session lock");
                if g.status.is_over() || g.answers.is_none() {
                    continue;
                }
                g.pending = Some(q);
            }
            bridge_shared.publish();
        }
    });

    let acq_shared = shared.clone();
    let acquisition = thread::spawn(move || {
        let mut acq = acq;
        let mut oracle = SessionOracle {
            chan,
            shared: acq_shared.clone(),
        };
        let outcome = acq.run(&mut oracle);
        drop(oracle);
        let status = match outcome {
            Ok(c) => SessionStatus::Finished { convergence: c },
            Err(AcqError::Oracle(OracleError::SessionClosed)) => {
                let cp = Checkpoint::new(benchmark, acq.clone());
                match cp.save(&checkpoint) {
                    Ok(()) => SessionStatus::Aborted { checkpoint },
                    Err(e) => SessionStatus::Failed {
                        error: format!("checkpoint not written: {e}"),
                    },
                }
            }
            Err(e) => SessionStatus::Failed {
                error: e.to_string(),
            },
        };
        {
            let mut g = acq_shared.inner.lock().expect("session lock");
            g.status = status;
            g.pending = None;
            g.answers = None;
            g.learned = acq.state.learned.iter().cloned().collect();
            g.progress = ProgressView {
                learned: acq.state.learned.len(),
                bias_remaining: acq.state.bias.len(),
                queries: acq.state.log.len(),
            };
        }
        acq_shared.publish();
        acq_shared.done.send_replace(true);
        acq
    });

    Ok(SessionHandle {
        addr,
        shared,
        acquisition: Some(acquisition),
        server: Some(server),
        shutdown: Some(shutdown),
    })
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/answer", post(post_answer))
        .route("/learned", get(get_learned))
        .route("/abort", post(post_abort))
        .route("/events", get(get_events))
        .with_state(shared)
}

fn conflict(msg: &str) -> Response {
    (StatusCode::CONFLICT, Json(serde_json::json!({ "error": msg }))).into_response()
}

async fn get_state(State(s): State<Arc<Shared>>) -> Json<StateView> {
    Json(s.view())
}

async fn get_learned(State(s): State<Arc<Shared>>) -> Json<Vec<ConstraintView>> {
    let g = s.inner.lock().expect("session lock");
    Json(g.learned.iter().map(ConstraintView::new).collect())
}

async fn post_answer(State(s): State<Arc<Shared>>, Json(req): Json<AnswerRequest>) -> Response {
    let id = {
        let mut g = s.inner.lock().expect("session lock");
        let Some(q) = g.pending.as_ref() else {
            return conflict("no pending query");
        };
        if req.id.is_some_and(|id| id != q.id) {
            return conflict("answer refers to a different query");
        }
        let id = q.id;
        let Some(tx) = g.answers.as_ref() else {
            return conflict("session is over");
        };
        if tx.send(req.answer).is_err() {
            return conflict("session is over");
        }
        g.pending = None;
        id
    };
    s.publish();
    Json(serde_json::json!({ "accepted": id })).into_response()
}

async fn post_abort(State(s): State<Arc<Shared>>) -> Response {
    {
        let mut g = s.inner.lock().expect("session lock");
        if g.status.is_over() {
            return conflict("session is over");
        }
        g.answers = None;
    }
    let mut rx = s.done.subscribe();
    let _ = rx.wait_for(|d| *d).await;
    Json(s.view()).into_response()
}

async fn get_events(
    State(s): State<Arc<Shared>>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = s.events.subscribe();
    let first = serde_json::to_string(&s.view()).unwrap_or_default();
    let stream = futures::stream::unfold((Some(first), rx), |(first, mut rx)| async move {
        if let Some(f) = first {
            return Some((Ok(Event::default().event("state").data(f)), (None, rx)));
        }
        loop {
            match rx.recv().await {
                Ok(data) => return Some((Ok(Event::default().event("state").data(data)), (None, rx))),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
