//! Wire-protocol client (and a serving helper) for external scorers.
//!
//! The protocol is newline-delimited JSON over a byte stream. On connect the
//! server sends a handshake `{"class_count": n, "columns": [...]}`; after
//! that each request `{"id": i, "features": [...]}` is answered by exactly one
//! response `{"id": i, "probs": [...]}`. Ids echo; responses may arrive out of
//! order and are matched by id. Probabilities are validated at this boundary,
//! never repaired.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::{MaceError, Result};
use crate::model::{validate_probs, Classifier};
use crate::tabular::{ColumnKind, Instance, Schema, Value};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Serialize, Deserialize)]
pub struct Handshake {
    pub class_count: usize,
    pub columns: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRequest {
    id: u64,
    features: Vec<Json>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreResponse {
    id: u64,
    probs: Vec<f64>,
}

fn instance_to_features(x: &Instance, schema: &Schema) -> Vec<Json> {
    x.values
        .iter()
        .enumerate()
        .map(|(c, v)| match v {
            Value::Cat(id) => Json::String(schema.column(c).categories[*id].clone()),
            Value::Con(x) => serde_json::json!(x),
        })
        .collect()
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
    pending: HashMap<u64, Vec<f64>>,
}

/// A [`Classifier`] backed by a remote scorer process.
pub struct RemoteScorer {
    schema: Schema,
    class_count: usize,
    conn: Mutex<Connection>,
}

impl RemoteScorer {
    /// Connect and perform the handshake. `timeout` bounds each read.
    pub fn connect<A: ToSocketAddrs>(addr: A, schema: Schema, timeout: Duration) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| MaceError::Transport(format!("connect failed: {e}")))?;
        stream
            .set_read_timeout(Some(timeout))
            .map_err(|e| MaceError::Transport(e.to_string()))?;
        let writer = stream
            .try_clone()
            .map_err(|e| MaceError::Transport(e.to_string()))?;
        let mut reader = BufReader::new(stream);

        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| MaceError::Transport(format!("handshake read failed: {e}")))?;
        let hs: Handshake = serde_json::from_str(line.trim())
            .map_err(|e| MaceError::Protocol(format!("bad handshake: {e}")))?;
        if hs.class_count < 2 {
            return Err(MaceError::Protocol(format!(
                "scorer declares {} classes",
                hs.class_count
            )));
        }
        let expected: Vec<String> = schema.columns().iter().map(|c| c.name.clone()).collect();
        if hs.columns != expected {
            return Err(MaceError::Protocol(format!(
                "scorer columns {:?} do not match schema {:?}",
                hs.columns, expected
            )));
        }
        Ok(RemoteScorer {
            schema,
            class_count: hs.class_count,
            conn: Mutex::new(Connection {
                reader,
                writer,
                next_id: 0,
                pending: HashMap::new(),
            }),
        })
    }
}

impl Classifier for RemoteScorer {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn predict_proba(&self, x: &Instance) -> Result<Vec<f64>> {
        let features = instance_to_features(x, &self.schema);
        let mut conn = self.conn.lock().expect("scorer connection poisoned");
        let id = conn.next_id;
        conn.next_id += 1;

        let request = ScoreRequest { id, features };
        let mut payload =
            serde_json::to_string(&request).map_err(|e| MaceError::Protocol(e.to_string()))?;
        payload.push('\n');
        conn.writer
            .write_all(payload.as_bytes())
            .map_err(|e| MaceError::Transport(format!("write failed: {e}")))?;

        let probs = loop {
            if let Some(probs) = conn.pending.remove(&id) {
                break probs;
            }
            let mut line = String::new();
            let n = conn
                .reader
                .read_line(&mut line)
                .map_err(|e| MaceError::Transport(format!("read failed: {e}")))?;
            if n == 0 {
                return Err(MaceError::Transport("scorer closed the connection".into()));
            }
            let resp: ScoreResponse = serde_json::from_str(line.trim())
                .map_err(|e| MaceError::Protocol(format!("malformed response: {e}")))?;
            if resp.id == id {
                break resp.probs;
            }
            if resp.id > conn.next_id {
                return Err(MaceError::Protocol(format!(
                    "response id {} was never requested",
                    resp.id
                )));
            }
            conn.pending.insert(resp.id, resp.probs);
        };
        drop(conn);

        validate_probs(&probs, self.class_count)?;
        Ok(probs)
    }
}

/// Serve a local classifier over the protocol on one accepted connection.
/// Runs until the peer disconnects. Used by `serve-check` test doubles and by
/// anyone wanting to expose a demo model to another process.
pub fn serve_connection(stream: TcpStream, model: &dyn Classifier, schema: &Schema) -> Result<()> {
    let mut writer = stream
        .try_clone()
        .map_err(|e| MaceError::Transport(e.to_string()))?;
    let reader = BufReader::new(stream);

    let hs = Handshake {
        class_count: model.class_count(),
        columns: schema.columns().iter().map(|c| c.name.clone()).collect(),
    };
    let mut line = serde_json::to_string(&hs).map_err(|e| MaceError::Protocol(e.to_string()))?;
    line.push('\n');
    writer
        .write_all(line.as_bytes())
        .map_err(|e| MaceError::Transport(e.to_string()))?;

    for request in reader.lines() {
        let request = request.map_err(|e| MaceError::Transport(e.to_string()))?;
        if request.trim().is_empty() {
            continue;
        }
        let req: ScoreRequest = serde_json::from_str(&request)
            .map_err(|e| MaceError::Protocol(format!("malformed request: {e}")))?;
        let x = features_to_instance(&req.features, schema)?;
        let probs = model.predict_proba(&x)?;
        let resp = ScoreResponse { id: req.id, probs };
        let mut line =
            serde_json::to_string(&resp).map_err(|e| MaceError::Protocol(e.to_string()))?;
        line.push('\n');
        writer
            .write_all(line.as_bytes())
            .map_err(|e| MaceError::Transport(e.to_string()))?;
    }
    Ok(())
}

fn features_to_instance(features: &[Json], schema: &Schema) -> Result<Instance> {
    if features.len() != schema.len() {
        return Err(MaceError::Protocol(format!(
            "expected {} features, got {}",
            schema.len(),
            features.len()
        )));
    }
    let mut values = Vec::with_capacity(features.len());
    for (c, f) in features.iter().enumerate() {
        let col = schema.column(c);
        let v = match (f, col.kind) {
            (Json::String(s), ColumnKind::Categorical) => {
                let id = schema.category_index(c, s).ok_or_else(|| {
                    MaceError::Protocol(format!("unknown category {s:?} for {:?}", col.name))
                })?;
                Value::Cat(id)
            }
            (Json::Number(n), ColumnKind::Continuous) => {
                Value::Con(n.as_f64().ok_or_else(|| {
                    MaceError::Protocol(format!("non-finite number for {:?}", col.name))
                })?)
            }
            _ => {
                return Err(MaceError::Protocol(format!(
                    "feature {c} has the wrong type for column {:?}",
                    col.name
                )))
            }
        };
        values.push(v);
    }
    Ok(Instance::new(values))
}
