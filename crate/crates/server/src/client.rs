//! Blocking client of the challenges server.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use autolab_core::evaluator::EvaluationReport;

use crate::http::{BenchmarkUpload, EvaluatorRegistration, ResultBody, StartBody, SEQ_HEADER};
use crate::state::{Assignment, Job, Leaderboard, SubmitRequest};
use crate::store::PostOutcome;

pub const ENV_SERVER: &str = "AUTOLAB_SERVER_ADDR";
pub const ENV_TOKEN: &str = "AUTOLAB_TOKEN";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach server: {0}")]
    Network(String),
    #[error("not authorized ({status}): {message}")]
    Auth { status: u16, message: String },
    #[error("server answered {status}: {message}")]
    Http { status: u16, message: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Auth { status, .. } | ClientError::Http { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// A decoded response body and the server's event-log sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply<T> {
    pub body: T,
    pub seq: u64,
}

#[derive(Clone)]
pub struct Client {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

/// Accepts `host:port` as well as a full URL.
pub fn normalize_url(addr: &str) -> String {
    let a = addr.trim_end_matches('/');
    if a.starts_with("http://") || a.starts_with("https://") {
        a.to_string()
    } else {
        format!("http://{a}")
    }
}

impl Client {
    pub fn new(server: &str, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .new_agent();
        Self { base: normalize_url(server), token, agent }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn finish<T: DeserializeOwned>(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Reply<T>, ClientError> {
        let mut resp = resp.map_err(|e| ClientError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let seq = resp
            .headers()
            .get(SEQ_HEADER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ClientError::Protocol(format!("response without {SEQ_HEADER}")))?;
        let text = resp.body_mut().read_to_string().map_err(|e| ClientError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            let message = serde_json::from_str::<Value>(&text)
                .ok()
                .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
                .unwrap_or(text);
            return Err(if status == 401 {
                ClientError::Auth { status, message }
            } else {
                ClientError::Http { status, message }
            });
        }
        let body = serde_json::from_str(&text).map_err(|e| ClientError::Protocol(format!("{e}: {text}")))?;
        Ok(Reply { body, seq })
    }

    fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, &str)]) -> Result<Reply<T>, ClientError> {
        let mut req = self.agent.get(self.url(path));
        for (k, v) in query {
            req = req.query(*k, *v);
        }
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        Self::finish(req.call())
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<Reply<T>, ClientError> {
        let mut req = self.agent.post(self.url(path));
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        Self::finish(req.send_json(body))
    }

    fn field<T: DeserializeOwned>(r: Reply<Value>, key: &str) -> Result<Reply<T>, ClientError> {
        let v = r.body.get(key).cloned().unwrap_or(Value::Null);
        let body = serde_json::from_value(v).map_err(|e| ClientError::Protocol(format!("field {key}: {e}")))?;
        Ok(Reply { body, seq: r.seq })
    }

    pub fn upload_benchmark(&self, spec_toml: &str) -> Result<Reply<String>, ClientError> {
        Self::field(self.post("/benchmarks", &BenchmarkUpload::Spec(spec_toml.into()))?, "id")
    }

    pub fn upload_dag(&self, dag_toml: &str) -> Result<Reply<String>, ClientError> {
        Self::field(self.post("/benchmarks", &BenchmarkUpload::Dag(dag_toml.into()))?, "id")
    }

    pub fn register_evaluator(&self, id: &str, caps: &[String]) -> Result<Reply<String>, ClientError> {
        let body = EvaluatorRegistration { id: id.into(), caps: caps.to_vec() };
        Self::field(self.post("/evaluators", &body)?, "id")
    }

    /// Returns the ids of the queued jobs.
    pub fn submit(&self, req: &SubmitRequest) -> Result<Reply<Vec<String>>, ClientError> {
        Self::field(self.post("/submissions", req)?, "jobs")
    }

    pub fn claim(&self, evaluator: &str, caps: Option<&[String]>) -> Result<Reply<Option<Assignment>>, ClientError> {
        let joined = caps.map(|c| c.join(","));
        let mut q = vec![("evaluator", evaluator)];
        if let Some(c) = &joined {
            q.push(("caps", c));
        }
        Self::field(self.get("/jobs/claim", &q)?, "assignment")
    }

    pub fn start(&self, job: &str, evaluator: &str) -> Result<Reply<Job>, ClientError> {
        self.post(&format!("/jobs/{job}/start"), &StartBody { evaluator: evaluator.into() })
    }

    pub fn post_result(&self, job: &str, evaluator: &str, report: &EvaluationReport) -> Result<Reply<PostOutcome>, ClientError> {
        let body = ResultBody { evaluator: evaluator.into(), report: report.clone() };
        self.post(&format!("/jobs/{job}/result"), &body)
    }

    pub fn job(&self, id: &str) -> Result<Reply<Job>, ClientError> {
        self.get(&format!("/jobs/{id}"), &[])
    }

    pub fn leaderboard(&self, benchmark: &str) -> Result<Reply<Leaderboard>, ClientError> {
        self.get(&format!("/benchmarks/{benchmark}/leaderboard"), &[])
    }
}
