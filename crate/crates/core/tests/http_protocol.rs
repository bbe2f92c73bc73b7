// Wire-level checks for the remote providers against a local mock server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use serde_json::{json, Value};

use notegen::eval::{HttpTokenEmbedder, TokenEmbeddingProvider};
use notegen::generate::{ChatClient, ChatRequest, HttpChatClient, LlmParams};
use notegen::index::{EmbeddingProvider, HttpEmbedder};
use notegen::prompt::{PromptBundle, Strategy};

#[derive(Debug)]
struct Captured {
    path: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves `replies` in order, one per connection, and reports each request.
fn mock(replies: Vec<(u16, Value)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, reply) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_owned();
            let mut len = 0;
            let mut authorization = None;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (name, value) = h.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_owned()),
                    _ => {}
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            tx.send(Captured {
                path,
                authorization,
                body: serde_json::from_slice(&body).unwrap_or(Value::Null),
            })
            .unwrap();
            let payload = reply.to_string();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

#[test]
fn embed_request_and_response() {
    let (url, rx) = mock(vec![(
        200,
        json!({"model": "m", "dim": 3, "vectors": [[1.0, 0.0, 0.0], [0.0, 0.5, 0.5]]}),
    )]);
    let e = HttpEmbedder::new(format!("{url}/"), "ada").unwrap();
    assert_eq!(e.tag(), "ada");
    let v = e.embed(&["one".into(), "two".into()]).unwrap();
    assert_eq!(v, vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.5, 0.5]]);
    let req = rx.recv().unwrap();
    assert_eq!(req.path, "/embed");
    assert_eq!(req.body, json!({"model": "ada", "texts": ["one", "two"]}));
    assert_eq!(req.authorization, None);
}

#[test]
fn embed_rejects_inconsistent_replies() {
    let (url, _rx) = mock(vec![
        (200, json!({"model": "m", "dim": 3, "vectors": [[1.0, 0.0]]})),
        (200, json!({"model": "m", "dim": 2, "vectors": [[1.0, 0.0]]})),
        (503, json!({"error": "busy"})),
    ]);
    let e = HttpEmbedder::new(url, "ada").unwrap();
    let texts = ["a".to_owned()];
    assert!(e.embed(&texts).unwrap_err().to_string().contains("dim"));
    assert!(e.embed(&["a".into(), "b".into()]).is_err());
    assert!(e.embed(&texts).unwrap_err().to_string().contains("503"));
}

#[test]
fn embed_tokens_round_trip() {
    let (url, rx) = mock(vec![
        (
            200,
            json!({
                "model": "bert",
                "tokens": ["chest", "pain"],
                "vectors": [[1.0, 0.0], [0.0, 1.0]],
                "summary_vector": [0.6, 0.8],
                "truncated": true
            }),
        ),
        (200, json!({"tokens": [], "vectors": [], "summary_vector": [1.0]})),
    ]);
    let e = HttpTokenEmbedder::new(&url, "bert").unwrap();
    let t = e.embed_tokens("chest pain").unwrap();
    assert_eq!(t.tokens, ["chest", "pain"]);
    assert_eq!(t.summary_vector, [0.6, 0.8]);
    assert!(t.truncated);
    assert_eq!(t.mean_vector(), [0.5, 0.5]);
    let req = rx.recv().unwrap();
    assert_eq!(req.path, "/embed_tokens");
    assert_eq!(req.body, json!({"model": "bert", "text": "chest pain"}));
    assert!(e.embed_tokens("x").is_err());
}

fn bundle() -> PromptBundle {
    PromptBundle {
        strategy: Strategy::CotKg,
        system_text: "You are a clinician.".into(),
        user_text: "Patient: 54-year-old female\nCodes: K08.109".into(),
        example_case_ids: Vec::new(),
        kg_codes: vec!["K08.109".into()],
        target_case_id: "B".into(),
    }
}

#[test]
fn chat_sends_bearer_and_exact_payload() {
    let (url, rx) = mock(vec![(
        200,
        json!({
            "id": "cmpl-1",
            "model": "gpt-4-0613",
            "system_fingerprint": "fp_1",
            "choices": [{"message": {"role": "assistant", "content": "A 54-year-old woman presented."}}],
            "usage": {"total_tokens": 12}
        }),
    )]);
    let client = HttpChatClient::new(format!("{url}/v1/chat/completions"), Some("sk-test".into())).unwrap();
    let request = ChatRequest::new(&bundle(), &LlmParams::default());
    let resp = client.complete(&request, 0).unwrap();
    assert_eq!(resp.text, "A 54-year-old woman presented.");
    assert_eq!(resp.metadata["system_fingerprint"], "fp_1");
    assert_eq!(resp.metadata["seed_requested"], 123);
    assert_eq!(resp.metadata["usage"]["total_tokens"], 12);

    let req = rx.recv().unwrap();
    assert_eq!(req.path, "/v1/chat/completions");
    assert_eq!(req.authorization.as_deref(), Some("Bearer sk-test"));
    assert_eq!(req.body, serde_json::to_value(&request).unwrap());
    assert_eq!(req.body["messages"][0]["role"], "system");
    assert_eq!(req.body["messages"][1]["content"], bundle().user_text);
    assert_eq!(req.body["seed"], 123);
    assert_eq!(req.body["temperature"], 0.0);
}

#[test]
fn chat_errors_surface() {
    let (url, _rx) = mock(vec![(429, json!({"error": "rate"})), (200, json!({"choices": []}))]);
    let client = HttpChatClient::new(url, None).unwrap();
    let request = ChatRequest::new(&bundle(), &LlmParams::default());
    assert!(client.complete(&request, 0).unwrap_err().to_string().contains("429"));
    assert!(client.complete(&request, 1).is_err());
}
