use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use super::{
    BackendError, CacheKey, CallOutcome, CallRecord, CompletionBackend, EmbeddingBackend, ModelRequest, Reply,
};

/// Appends [`CallRecord`]s to a JSON Lines file, one line per logical call.
pub struct Recorder {
    out: Mutex<BufWriter<File>>,
}

impl Recorder {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append(&self, record: &CallRecord) -> io::Result<()> {
        let line = serde_json::to_string(record)?;
        let mut out = self.out.lock().unwrap();
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()
    }
}

struct Slot {
    outcomes: VecDeque<(CallOutcome, u32)>,
    last: (CallOutcome, u32),
}

/// Serves responses from a recording without touching the network.
///
/// Responses for a repeated key are served in recorded order; once they run
/// out the last one repeats. Cache hits in the recording are skipped since
/// they duplicate an earlier live response.
pub struct ReplayBackend {
    slots: Mutex<HashMap<CacheKey, Slot>>,
}

impl ReplayBackend {
    pub fn from_file(path: impl AsRef<Path>) -> io::Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CallRecord = serde_json::from_str(&line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
            records.push(record);
        }
        Ok(Self::from_records(records))
    }

    pub fn from_records(records: impl IntoIterator<Item = CallRecord>) -> Self {
        let mut slots: HashMap<CacheKey, Slot> = HashMap::new();
        let mut hits: Vec<CallRecord> = Vec::new();
        for r in records {
            if r.cache_hit {
                hits.push(r);
                continue;
            }
            let entry = (r.outcome, r.retries);
            match slots.get_mut(&r.key) {
                Some(slot) => {
                    slot.outcomes.push_back(entry.clone());
                    slot.last = entry;
                }
                None => {
                    slots.insert(
                        r.key,
                        Slot {
                            outcomes: VecDeque::from([entry.clone()]),
                            last: entry,
                        },
                    );
                }
            }
        }
        // A recording made against a warm cache may hold only hits for a key.
        for r in hits {
            slots.entry(r.key).or_insert_with(|| {
                let entry = (r.outcome, r.retries);
                Slot {
                    outcomes: VecDeque::from([entry.clone()]),
                    last: entry,
                }
            });
        }
        Self {
            slots: Mutex::new(slots),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn next(&self, key: &CacheKey) -> Result<(CallOutcome, u32), BackendError> {
        let mut slots = self.slots.lock().unwrap();
        let slot = slots
            .get_mut(key)
            .ok_or_else(|| BackendError::ReplayMiss(key.to_string()))?;
        Ok(slot.outcomes.pop_front().unwrap_or_else(|| slot.last.clone()))
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, request: &ModelRequest) -> Result<Reply, BackendError> {
        match self.next(&request.key())? {
            (CallOutcome::Ok(text), retries) => Ok(Reply {
                text,
                prior_retries: retries,
            }),
            (CallOutcome::Refusal(m), _) => Err(BackendError::Refusal(m)),
            (CallOutcome::Failed(m), _) => Err(BackendError::Replayed(m)),
        }
    }
}

impl EmbeddingBackend for ReplayBackend {
    fn embed_batch(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        texts
            .iter()
            .map(|t| {
                let req = ModelRequest::embedding(model, t.clone());
                match self.next(&req.key())? {
                    (CallOutcome::Ok(encoded), _) => serde_json::from_str(&encoded)
                        .map_err(|e| BackendError::Protocol(format!("recorded embedding: {e}"))),
                    (CallOutcome::Refusal(m), _) => Err(BackendError::Refusal(m)),
                    (CallOutcome::Failed(m), _) => Err(BackendError::Replayed(m)),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::super::{Gateway, GatewayError, RetryPolicy, ScriptedBackend};
    use super::*;

    #[test]
    fn record_then_replay_without_backend() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calls.jsonl");
        let live = Arc::new(ScriptedBackend::from_results(vec![
            Ok("alpha".into()),
            Err(BackendError::Transport("blip".into())),
            Ok("beta".into()),
            Err(BackendError::Refusal("nope".into())),
        ]));
        let gw = Gateway::new(live)
            .with_retry(RetryPolicy::immediate(2))
            .with_recorder(Recorder::create(&path).unwrap());
        let a = gw.complete(&ModelRequest::completion("m", "one")).unwrap();
        let b = gw.complete(&ModelRequest::completion("m", "two")).unwrap();
        let c = gw.complete(&ModelRequest::completion("m", "three")).unwrap_err();
        assert_eq!(b.retries, 1);

        let lines = std::fs::read_to_string(&path).unwrap();
        assert_eq!(lines.lines().count(), 3);

        let replay = Arc::new(ReplayBackend::from_file(&path).unwrap());
        let gw = Gateway::new(replay);
        let a2 = gw.complete(&ModelRequest::completion("m", "one")).unwrap();
        let b2 = gw.complete(&ModelRequest::completion("m", "two")).unwrap();
        let c2 = gw.complete(&ModelRequest::completion("m", "three")).unwrap_err();
        assert_eq!(a2.text, a.text);
        assert_eq!((b2.text.as_str(), b2.retries), (b.text.as_str(), b.retries));
        assert_eq!(c2, c);

        let miss = gw.complete(&ModelRequest::completion("m", "unknown")).unwrap_err();
        assert!(matches!(miss, GatewayError::ReplayMiss(_)));
    }

    #[test]
    fn recorded_failures_replay_with_identical_messages() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calls.jsonl");
        let live = Arc::new(ScriptedBackend::from_results(vec![
            Err(BackendError::Transport("down".into()));
            3
        ]));
        let gw = Gateway::new(live)
            .with_retry(RetryPolicy::immediate(2))
            .with_recorder(Recorder::create(&path).unwrap());
        let original = gw.complete(&ModelRequest::completion("m", "x")).unwrap_err();

        let gw = Gateway::new(Arc::new(ReplayBackend::from_file(&path).unwrap()));
        let replayed = gw.complete(&ModelRequest::completion("m", "x")).unwrap_err();
        assert_eq!(original.to_string(), replayed.to_string());
    }

    #[test]
    fn repeated_keys_serve_in_order_then_repeat_last() {
        let req = ModelRequest::completion("m", "p");
        let mk = |text: &str| CallRecord {
            key: req.key(),
            request: req.clone(),
            outcome: CallOutcome::Ok(text.into()),
            latency_ms: 0,
            retries: 0,
            timestamp_ms: 0,
            cache_hit: false,
        };
        let replay = ReplayBackend::from_records([mk("a"), mk("b")]);
        let got: Vec<_> = (0..3).map(|_| replay.complete(&req).unwrap().text).collect();
        assert_eq!(got, ["a", "b", "b"]);
    }
}
