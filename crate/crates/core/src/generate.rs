//! Batches of independent chat-completion calls with an append-only,
//! resumable record store.
//!
//! Each call sends exactly the system and user text of one [`PromptBundle`];
//! nothing from earlier calls is carried into later requests. Records are
//! keyed by `(case_id, strategy, call_index)` within a run, and a rerun only
//! issues calls whose key has no successful record yet.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hashing;
use crate::http::JsonClient;
use crate::prompt::{PromptBundle, Strategy};
use crate::retry::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmParams {
    pub model: String,
    pub seed: i64,
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl Default for LlmParams {
    fn default() -> Self {
        LlmParams {
            model: "gpt-4".into(),
            seed: 123,
            temperature: 0.0,
            top_p: 0.000001,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
        }
    }
}

impl LlmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Wire payload for one chat-completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub seed: i64,
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl ChatRequest {
    pub fn new(bundle: &PromptBundle, params: &LlmParams) -> Self {
        ChatRequest {
            model: params.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: bundle.system_text.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: bundle.user_text.clone(),
                },
            ],
            seed: params.seed,
            temperature: params.temperature,
            top_p: params.top_p,
            frequency_penalty: params.frequency_penalty,
            presence_penalty: params.presence_penalty,
        }
    }

    fn user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub metadata: BTreeMap<String, Value>,
}

pub trait ChatClient: Send + Sync {
    /// `call_index` identifies the call for logging and for the stub's
    /// determinism; it is not part of the request payload.
    fn complete(&self, request: &ChatRequest, call_index: u32) -> Result<ChatResponse>;
}

/// Offline client emitting pseudo-notes assembled from fixed sentence
/// templates. Words are drawn from the prompt's own vocabulary with an RNG
/// keyed by `(prompt hash, call index, seed)`.
#[derive(Debug, Clone)]
pub struct StubChatClient {
    seed: u64,
}

pub fn stub_chat_client(seed: u64) -> StubChatClient {
    StubChatClient { seed }
}

const STOP_WORDS: &[&str] = &[
    "about", "above", "after", "also", "been", "before", "being", "because", "become", "cases",
    "clinical", "code", "codes", "concept", "details", "each", "example", "examples", "following",
    "from", "have", "history", "into", "illness", "knowledge", "material", "note", "only",
    "output", "patient", "present", "resemble", "retrieved", "role", "step", "subclass", "that",
    "their", "them", "then", "there", "these", "they", "think", "this", "those", "together",
    "were", "what", "when", "which", "with", "worked", "write", "writing", "your",
];

/// Words of the case-specific part of the prompt: everything from the
/// patient line on, or the whole text when there is none.
fn vocabulary(user_text: &str) -> Vec<String> {
    let start = user_text.find("Patient: ").unwrap_or(0);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for w in hashing::words(&user_text[start..]) {
        let w = w.to_lowercase();
        if w.len() >= 4
            && w.chars().all(|c| c.is_alphabetic())
            && !STOP_WORDS.contains(&w.as_str())
            && seen.insert(w.clone())
        {
            out.push(w);
        }
    }
    out
}

fn subject(user_text: &str) -> String {
    user_text
        .lines()
        .find_map(|l| l.strip_prefix("Patient: "))
        .map(|d| format!("A {}", d.trim()))
        .unwrap_or_else(|| "The patient".into())
}

impl StubChatClient {
    pub fn generate(&self, prompt_hash: &str, call_index: u32, user_text: &str) -> String {
        let mut rng = hashing::rng_for(&[
            prompt_hash.as_bytes(),
            &call_index.to_le_bytes(),
            &self.seed.to_le_bytes(),
        ]);
        let mut vocab = vocabulary(user_text);
        if vocab.is_empty() {
            vocab.push("discomfort".into());
        }
        let word = |rng: &mut rand_chacha::ChaCha8Rng| vocab.choose(rng).cloned().unwrap_or_default();
        let mut sentences = vec![format!(
            "{} presented with {} and {}.",
            subject(user_text),
            word(&mut rng),
            word(&mut rng)
        )];
        let mut order: Vec<usize> = (0..6).collect();
        let n = rng.random_range(3..=6);
        for i in 0..n {
            let j = rng.random_range(i..order.len());
            order.swap(i, j);
            let r = &mut rng;
            let sentence = match order[i] {
                0 => format!("The symptoms had progressed over the previous weeks with {}.", word(r)),
                1 => format!(
                    "Physical examination revealed {} {} without {}.",
                    word(r),
                    word(r),
                    word(r)
                ),
                2 => format!("There was a prior history of {}.", word(r)),
                3 => format!("Laboratory studies showed {} and {}.", word(r), word(r)),
                4 => format!("Imaging demonstrated {} {}.", word(r), word(r)),
                _ => format!("The patient was admitted for evaluation of {}.", word(r)),
            };
            sentences.push(sentence);
        }
        sentences.join(" ")
    }
}

impl ChatClient for StubChatClient {
    fn complete(&self, request: &ChatRequest, call_index: u32) -> Result<ChatResponse> {
        let user = request.user_text();
        let system = request
            .messages
            .iter()
            .find(|m| m.role == "system")
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let hash = hashing::digest_hex(&[system.as_bytes(), user.as_bytes()]);
        let mut metadata = BTreeMap::new();
        metadata.insert("provider".into(), Value::from("stub"));
        metadata.insert("stub_seed".into(), Value::from(self.seed));
        Ok(ChatResponse {
            text: self.generate(&hash, call_index, user),
            metadata,
        })
    }
}

/// Client for an OpenAI-compatible chat-completions endpoint.
pub struct HttpChatClient {
    endpoint: String,
    client: JsonClient,
}

pub const ENDPOINT_VAR: &str = "LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "LLM_API_KEY";

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Result<Self> {
        Ok(HttpChatClient {
            endpoint: endpoint.into(),
            client: JsonClient::new(api_key, Duration::from_secs(300)).map_err(Error::Chat)?,
        })
    }

    /// Reads `LLM_ENDPOINT` and `LLM_API_KEY`.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| Error::Config(format!("{ENDPOINT_VAR} is not set")))?;
        HttpChatClient::new(endpoint, std::env::var(API_KEY_VAR).ok())
    }
}

fn response_text(v: &Value) -> Option<String> {
    v.pointer("/choices/0/message/content")
        .or_else(|| v.pointer("/choices/0/text"))
        .or_else(|| v.get("text"))
        .or_else(|| v.get("content"))
        .and_then(Value::as_str)
        .map(str::to_owned)
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest, _call_index: u32) -> Result<ChatResponse> {
        let v: Value = self.client.post(&self.endpoint, request).map_err(Error::Chat)?;
        let text = response_text(&v).ok_or_else(|| Error::Chat("response has no text".into()))?;
        let mut metadata = BTreeMap::new();
        for key in ["id", "model", "system_fingerprint", "usage"] {
            if let Some(val) = v.get(key) {
                metadata.insert(key.to_owned(), val.clone());
            }
        }
        // Providers are free to ignore the seed; keep what was asked for.
        metadata.insert("seed_requested".into(), Value::from(request.seed));
        Ok(ChatResponse { text, metadata })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub case_id: String,
    pub strategy: Strategy,
    pub call_index: u32,
    pub prompt_hash: String,
    pub generated_text: String,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
    /// Unix epoch milliseconds.
    pub timestamp_ms: u64,
    #[serde(default)]
    pub provider_metadata: BTreeMap<String, Value>,
}

impl RunRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            case_id: self.case_id.clone(),
            strategy: self.strategy,
            call_index: self.call_index,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub case_id: String,
    pub strategy: Strategy,
    pub call_index: u32,
}

const RECORDS_FILE: &str = "records.jsonl";
const INDEX_FILE: &str = "index.tsv";

/// Append-only store for one run id: `records.jsonl` holds one record per
/// line, `index.tsv` lists the key, status and byte offset of each line.
/// A later record for the same key supersedes the earlier one.
#[derive(Debug)]
pub struct RunStore {
    run_id: String,
    dir: PathBuf,
    records: BTreeMap<RecordKey, RunRecord>,
    records_file: File,
    index_file: File,
    offset: u64,
}

impl RunStore {
    /// Opens or creates `<root>/<run_id>/`. A torn final line left by an
    /// interrupted write is dropped.
    pub fn open(root: &Path, run_id: &str) -> Result<RunStore> {
        if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id.starts_with('.') {
            return Err(Error::InvalidParam(format!("bad run id {run_id:?}")));
        }
        let dir = root.join(run_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let records_path = dir.join(RECORDS_FILE);
        let (records, offset) = read_records(&records_path)?;
        let records_file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records_path)
            .map_err(|e| Error::io(&records_path, e))?;
        records_file
            .set_len(offset)
            .map_err(|e| Error::io(&records_path, e))?;
        let index_path = dir.join(INDEX_FILE);
        rewrite_index(&index_path, &records)?;
        let index_file = OpenOptions::new()
            .append(true)
            .open(&index_path)
            .map_err(|e| Error::io(&index_path, e))?;
        Ok(RunStore {
            run_id: run_id.to_owned(),
            dir,
            records: records.into_iter().map(|(k, (_, r))| (k, r)).collect(),
            records_file,
            index_file,
            offset,
        })
    }

    /// Opens an existing run without creating anything.
    pub fn open_existing(root: &Path, run_id: &str) -> Result<RunStore> {
        let dir = root.join(run_id);
        if !dir.join(RECORDS_FILE).is_file() {
            return Err(Error::RunStore {
                path: dir,
                message: "no such run".into(),
            });
        }
        RunStore::open(root, run_id)
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &RecordKey) -> Option<&RunRecord> {
        self.records.get(key)
    }

    pub fn is_done(&self, key: &RecordKey) -> bool {
        self.records.get(key).is_some_and(RunRecord::is_ok)
    }

    pub fn failed_count(&self) -> usize {
        self.records.values().filter(|r| !r.is_ok()).count()
    }

    pub fn append(&mut self, record: RunRecord) -> Result<()> {
        if record.run_id != self.run_id {
            return Err(Error::InvalidParam(format!(
                "record for run {} appended to run {}",
                record.run_id, self.run_id
            )));
        }
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        let records_path = self.dir.join(RECORDS_FILE);
        self.records_file
            .write_all(line.as_bytes())
            .and_then(|_| self.records_file.flush())
            .map_err(|e| Error::io(&records_path, e))?;
        let index_path = self.dir.join(INDEX_FILE);
        self.index_file
            .write_all(index_line(&record, self.offset).as_bytes())
            .map_err(|e| Error::io(&index_path, e))?;
        self.offset += line.len() as u64;
        self.records.insert(record.key(), record);
        Ok(())
    }
}

fn index_line(r: &RunRecord, offset: u64) -> String {
    let status = match r.status {
        RecordStatus::Ok => "ok",
        RecordStatus::Failed => "failed",
    };
    format!("{}\t{}\t{}\t{status}\t{offset}\n", r.case_id, r.strategy, r.call_index)
}

type Loaded = BTreeMap<RecordKey, (u64, RunRecord)>;

fn read_records(path: &Path) -> Result<(Loaded, u64)> {
    let mut out = BTreeMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((out, 0)),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut offset = 0u64;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        if !buf.ends_with('\n') {
            log::warn!("{}: dropping incomplete trailing record", path.display());
            break;
        }
        let record: RunRecord = serde_json::from_str(buf.trim_end()).map_err(|e| Error::RunStore {
            path: path.to_path_buf(),
            message: format!("byte {offset}: {e}"),
        })?;
        out.insert(record.key(), (offset, record));
        offset += n as u64;
    }
    Ok((out, offset))
}

fn rewrite_index(path: &Path, records: &Loaded) -> Result<()> {
    let mut rows: Vec<&(u64, RunRecord)> = records.values().collect();
    rows.sort_by_key(|(offset, _)| *offset);
    let body: String = rows.iter().map(|(o, r)| index_line(r, *o)).collect();
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub n_calls: u32,
    pub max_in_flight: usize,
    pub min_request_delay: Duration,
    pub retry: RetryPolicy,
    /// Checked before each call; once set no new calls start.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl BatchConfig {
    pub fn new(n_calls: u32) -> Self {
        BatchConfig {
            n_calls,
            max_in_flight: 4,
            min_request_delay: Duration::ZERO,
            retry: RetryPolicy::default(),
            cancel: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    /// All stored records of this (case, strategy), ordered by call index.
    pub records: Vec<RunRecord>,
    /// Calls actually sent during this invocation.
    pub issued: usize,
    /// Calls that exhausted their retries during this invocation.
    pub failed: usize,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Spaces out request starts by at least the configured delay.
struct Pacer {
    delay: Duration,
    last: Mutex<Option<Instant>>,
}

impl Pacer {
    fn wait(&self) {
        if self.delay.is_zero() {
            return;
        }
        let mut last = self.last.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(t) = *last {
            let ready = t + self.delay;
            let now = Instant::now();
            if ready > now {
                thread::sleep(ready - now);
            }
        }
        *last = Some(Instant::now());
    }
}

/// Issues the calls of `bundle` that `store` has no successful record for.
pub fn run_batch(
    bundle: &PromptBundle,
    params: &LlmParams,
    config: &BatchConfig,
    client: &dyn ChatClient,
    store: &mut RunStore,
) -> Result<BatchOutcome> {
    if config.n_calls == 0 {
        return Err(Error::InvalidParam("n_calls must be at least 1".into()));
    }
    params.validate()?;
    let request = ChatRequest::new(bundle, params);
    let prompt_hash = bundle.prompt_hash();
    let key = |call_index| RecordKey {
        case_id: bundle.target_case_id.clone(),
        strategy: bundle.strategy,
        call_index,
    };
    let pending: Vec<u32> = (0..config.n_calls)
        .filter(|&i| !store.is_done(&key(i)))
        .collect();

    let next = AtomicUsize::new(0);
    let pacer = Pacer {
        delay: config.min_request_delay,
        last: Mutex::new(None),
    };
    let cancelled = || {
        config
            .cancel
            .as_ref()
            .is_some_and(|c| c.load(Ordering::SeqCst))
    };
    let (tx, rx) = mpsc::channel::<RunRecord>();
    let workers = config.max_in_flight.clamp(1, pending.len().max(1));
    let mut issued = 0;
    let mut failed = 0;
    let mut write_error = None;

    thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending, pacer, request) = (&next, &pending, &pacer, &request);
            let prompt_hash = &prompt_hash;
            let cancelled = &cancelled;
            scope.spawn(move || loop {
                if cancelled() {
                    break;
                }
                let slot = next.fetch_add(1, Ordering::SeqCst);
                let Some(&call_index) = pending.get(slot) else {
                    break;
                };
                let mut attempts = 0;
                let result = config.retry.run(|a| {
                    attempts = a + 1;
                    pacer.wait();
                    client.complete(request, call_index)
                });
                let (text, status, error, metadata) = match result {
                    Ok(resp) => (resp.text, RecordStatus::Ok, None, resp.metadata),
                    Err((e, _)) => (
                        String::new(),
                        RecordStatus::Failed,
                        Some(e.to_string()),
                        BTreeMap::new(),
                    ),
                };
                let record = RunRecord {
                    run_id: String::new(),
                    case_id: bundle.target_case_id.clone(),
                    strategy: bundle.strategy,
                    call_index,
                    prompt_hash: prompt_hash.clone(),
                    generated_text: text,
                    status,
                    error,
                    attempts,
                    timestamp_ms: now_ms(),
                    provider_metadata: metadata,
                };
                if tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for mut record in rx {
            issued += 1;
            if !record.is_ok() {
                failed += 1;
                log::error!(
                    "{} {} call {} failed: {}",
                    record.case_id,
                    record.strategy,
                    record.call_index,
                    record.error.as_deref().unwrap_or("")
                );
            }
            record.run_id = store.run_id().to_owned();
            if let Err(e) = store.append(record) {
                write_error.get_or_insert(e);
                if let Some(c) = &config.cancel {
                    c.store(true, Ordering::SeqCst);
                }
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }

    let records = (0..config.n_calls)
        .filter_map(|i| store.get(&key(i)).cloned())
        .collect();
    Ok(BatchOutcome {
        records,
        issued,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(case: &str, strategy: Strategy) -> PromptBundle {
        PromptBundle {
            strategy,
            system_text: "sys".into(),
            user_text: "Write a note.\n\nPatient: 54-year-old female\nICD codes: K08.109\n\n\
                        Example 1:\nEdentulous mandible with mucosal irritation from dentures.\n"
                .into(),
            example_case_ids: vec!["ex".into()],
            kg_codes: vec![],
            target_case_id: case.into(),
        }
    }

    fn quick(n: u32) -> BatchConfig {
        BatchConfig {
            retry: RetryPolicy::immediate(5),
            ..BatchConfig::new(n)
        }
    }

    #[test]
    fn default_params() {
        let p = LlmParams::default();
        assert_eq!(p.model, "gpt-4");
        assert_eq!(p.seed, 123);
        assert_eq!(p.temperature, 0.0);
        assert_eq!(p.top_p, 0.000001);
        assert_eq!((p.frequency_penalty, p.presence_penalty), (0.0, 0.0));
        p.validate().unwrap();
        let bad = LlmParams {
            top_p: 0.0,
            ..LlmParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = LlmParams {
            temperature: -0.1,
            ..LlmParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn wire_payload_shape() {
        let req = ChatRequest::new(&bundle("B", Strategy::CotSs), &LlmParams::default());
        let v = serde_json::to_value(&req).unwrap();
        for key in ["model", "messages", "seed", "temperature", "top_p", "frequency_penalty", "presence_penalty"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["messages"][1]["role"], "user");
    }

    #[test]
    fn stub_is_deterministic_and_varies() {
        let req = ChatRequest::new(&bundle("B", Strategy::CotSs), &LlmParams::default());
        let a = stub_chat_client(1);
        let t0 = a.complete(&req, 0).unwrap().text;
        assert_eq!(t0, a.complete(&req, 0).unwrap().text);
        assert_ne!(t0, a.complete(&req, 1).unwrap().text);
        assert_ne!(t0, stub_chat_client(2).complete(&req, 0).unwrap().text);
        assert!(t0.starts_with("A 54-year-old female presented with"));
    }

    #[test]
    fn response_text_shapes() {
        let openai = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": "hi"}}]});
        assert_eq!(response_text(&openai).as_deref(), Some("hi"));
        assert_eq!(response_text(&serde_json::json!({"text": "t"})).as_deref(), Some("t"));
        assert_eq!(response_text(&serde_json::json!({"x": 1})), None);
    }

    #[test]
    fn batch_persists_n_distinct_calls() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = RunStore::open(dir.path(), "r1").unwrap();
        let out = run_batch(
            &bundle("B", Strategy::CotSs),
            &LlmParams::default(),
            &quick(100),
            &stub_chat_client(9),
            &mut store,
        )
        .unwrap();
        assert_eq!(out.records.len(), 100);
        assert_eq!(out.issued, 100);
        let idx: BTreeSet<u32> = out.records.iter().map(|r| r.call_index).collect();
        assert_eq!(idx.len(), 100);
        drop(store);

        let reopened = RunStore::open(dir.path(), "r1").unwrap();
        let reloaded: Vec<RunRecord> = reopened.records().cloned().collect();
        let mut returned = out.records.clone();
        returned.sort_by_key(|r| r.key());
        assert_eq!(reloaded, returned);
        let index = fs::read_to_string(dir.path().join("r1").join(INDEX_FILE)).unwrap();
        assert_eq!(index.lines().count(), 100);
    }

    struct Counting<C> {
        inner: C,
        calls: AtomicUsize,
        stop_after: usize,
        cancel: Arc<AtomicBool>,
    }

    impl<C: ChatClient> ChatClient for Counting<C> {
        fn complete(&self, request: &ChatRequest, call_index: u32) -> Result<ChatResponse> {
            if self.calls.fetch_add(1, Ordering::SeqCst) + 1 >= self.stop_after {
                self.cancel.store(true, Ordering::SeqCst);
            }
            self.inner.complete(request, call_index)
        }
    }

    #[test]
    fn interrupted_batch_resumes_with_missing_calls_only() {
        let dir = tempfile::tempdir().unwrap();
        let cancel = Arc::new(AtomicBool::new(false));
        let client = Counting {
            inner: stub_chat_client(3),
            calls: AtomicUsize::new(0),
            stop_after: 40,
            cancel: cancel.clone(),
        };
        let b = bundle("B", Strategy::CotKg);
        let mut config = quick(100);
        config.max_in_flight = 1;
        config.cancel = Some(cancel);
        let mut store = RunStore::open(dir.path(), "r").unwrap();
        let first = run_batch(&b, &LlmParams::default(), &config, &client, &mut store).unwrap();
        assert_eq!(first.issued, 40);
        drop(store);

        let mut store = RunStore::open(dir.path(), "r").unwrap();
        let counter = Counting {
            inner: stub_chat_client(3),
            calls: AtomicUsize::new(0),
            stop_after: usize::MAX,
            cancel: Arc::new(AtomicBool::new(false)),
        };
        let second = run_batch(&b, &LlmParams::default(), &quick(100), &counter, &mut store).unwrap();
        assert_eq!(second.issued, 60);
        assert_eq!(counter.calls.load(Ordering::SeqCst), 60);
        assert_eq!(second.records.len(), 100);
    }

    #[test]
    fn torn_trailing_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = RunStore::open(dir.path(), "r").unwrap();
        run_batch(
            &bundle("B", Strategy::CotSs),
            &LlmParams::default(),
            &quick(5),
            &stub_chat_client(1),
            &mut store,
        )
        .unwrap();
        drop(store);
        let path = dir.path().join("r").join(RECORDS_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"run_id\":\"r\",\"case_").unwrap();
        drop(f);
        let mut store = RunStore::open(dir.path(), "r").unwrap();
        assert_eq!(store.len(), 5);
        let out = run_batch(
            &bundle("B", Strategy::CotSs),
            &LlmParams::default(),
            &quick(6),
            &stub_chat_client(1),
            &mut store,
        )
        .unwrap();
        assert_eq!(out.issued, 1);
        drop(store);
        assert_eq!(RunStore::open(dir.path(), "r").unwrap().len(), 6);
    }

    struct AlwaysFails(AtomicUsize);

    impl ChatClient for AlwaysFails {
        fn complete(&self, _: &ChatRequest, _: u32) -> Result<ChatResponse> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(Error::Chat("rate limited".into()))
        }
    }

    #[test]
    fn exhausted_retries_mark_failed_and_continue() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = RunStore::open(dir.path(), "r").unwrap();
        let client = AlwaysFails(AtomicUsize::new(0));
        let out = run_batch(
            &bundle("B", Strategy::CotSs),
            &LlmParams::default(),
            &quick(3),
            &client,
            &mut store,
        )
        .unwrap();
        assert_eq!(out.failed, 3);
        assert_eq!(client.0.load(Ordering::SeqCst), 15);
        assert!(out.records.iter().all(|r| r.status == RecordStatus::Failed && r.attempts == 5));
        assert_eq!(store.failed_count(), 3);

        // Failed calls are retried on the next run and superseded on success.
        let out = run_batch(
            &bundle("B", Strategy::CotSs),
            &LlmParams::default(),
            &quick(3),
            &stub_chat_client(1),
            &mut store,
        )
        .unwrap();
        assert_eq!((out.issued, out.failed), (3, 0));
        assert_eq!(store.failed_count(), 0);
    }

    #[test]
    fn rejects_zero_calls_and_bad_run_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = RunStore::open(dir.path(), "r").unwrap();
        assert!(run_batch(
            &bundle("B", Strategy::CotSs),
            &LlmParams::default(),
            &quick(0),
            &stub_chat_client(1),
            &mut store
        )
        .is_err());
        assert!(RunStore::open(dir.path(), "../x").is_err());
        assert!(RunStore::open_existing(dir.path(), "missing").is_err());
    }
}
