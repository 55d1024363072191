//! HTTP clients against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use compactrag_core::backends::http::{OpenAiChat, OpenAiEmbedder, SidecarClient};
use compactrag_core::backends::{
    BackendError, ChatBackend, ChatMessage, Embedder, EntityAnnotator, RetryPolicy, Rewriter, SpanExtractor,
};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Request {
    path: String,
    auth: Option<String>,
    body: Value,
}

type Handler = dyn Fn(&Request) -> (u16, String) + Send + Sync;

struct Server {
    url: String,
    seen: Arc<Mutex<Vec<Request>>>,
}

impl Server {
    fn start(handler: impl Fn(&Request) -> (u16, String) + Send + Sync + 'static) -> Server {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        let handler: Arc<Handler> = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
                let (mut len, mut auth) = (0usize, None);
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
                        "authorization" => auth = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let req = Request { path, auth, body: serde_json::from_slice(&body).unwrap_or(Value::Null) };
                let (status, reply) = handler(&req);
                log.lock().unwrap().push(req);
                let head = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    reply.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        Server { url, seen }
    }

    fn requests(&self) -> Vec<Request> {
        self.seen.lock().unwrap().clone()
    }
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy { retries: 2, backoff: Duration::from_millis(1) }
}

#[test]
fn chat_reads_content_and_usage() {
    let server = Server::start(|_| {
        (200, json!({"choices":[{"message":{"role":"assistant","content":"Paris"}}],"usage":{"prompt_tokens":12,"completion_tokens":1}}).to_string())
    });
    let chat = OpenAiChat::new(&server.url, "m1", Some("sekret".into()), fast_retry()).unwrap();
    let r = chat.chat(&[ChatMessage::system("sys"), ChatMessage::user("Capital of France?")], 0.0).unwrap();
    assert_eq!((r.text.as_str(), r.prompt_tokens, r.completion_tokens), ("Paris", 12, 1));
    let req = &server.requests()[0];
    assert_eq!(req.path, "/v1/chat/completions");
    assert_eq!(req.auth.as_deref(), Some("Bearer sekret"));
    assert_eq!(req.body["model"], "m1");
    assert_eq!(req.body["messages"][1], json!({"role":"user","content":"Capital of France?"}));
    assert_eq!(req.body["temperature"], 0.0);
}

#[test]
fn chat_without_usage_counts_words() {
    let server = Server::start(|_| (200, json!({"choices":[{"message":{"content":"two words"}}]}).to_string()));
    let chat = OpenAiChat::new(&server.url, "m", None, fast_retry()).unwrap();
    let r = chat.chat(&[ChatMessage::user("one two three")], 0.0).unwrap();
    assert_eq!(r.completion_tokens, 2);
    assert!(r.prompt_tokens >= 3);
    assert!(server.requests()[0].auth.is_none());
}

#[test]
fn server_errors_are_retried_then_reported_as_transport() {
    let server = Server::start(|_| (503, "{}".into()));
    let chat = OpenAiChat::new(&server.url, "m", None, fast_retry()).unwrap();
    let err = chat.chat(&[ChatMessage::user("hi")], 0.0).unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err:?}");
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn transient_failure_recovers() {
    let calls = Arc::new(Mutex::new(0));
    let c = Arc::clone(&calls);
    let server = Server::start(move |_| {
        let mut n = c.lock().unwrap();
        *n += 1;
        if *n == 1 {
            (429, "{}".into())
        } else {
            (200, json!({"choices":[{"message":{"content":"ok"}}]}).to_string())
        }
    });
    let chat = OpenAiChat::new(&server.url, "m", None, fast_retry()).unwrap();
    assert_eq!(chat.chat(&[ChatMessage::user("hi")], 0.0).unwrap().text, "ok");
    assert_eq!(*calls.lock().unwrap(), 2);
}

#[test]
fn client_errors_and_garbage_are_protocol_errors() {
    let server = Server::start(|req| match req.body["model"].as_str() {
        Some("bad-request") => (400, "{\"error\":\"nope\"}".into()),
        _ => (200, "not json".into()),
    });
    for model in ["bad-request", "garbage"] {
        let chat = OpenAiChat::new(&server.url, model, None, fast_retry()).unwrap();
        let err = chat.chat(&[ChatMessage::user("hi")], 0.0).unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)), "{model}: {err:?}");
    }
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn unreachable_host_is_transport() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let chat = OpenAiChat::new(&format!("http://127.0.0.1:{port}"), "m", None, RetryPolicy::none()).unwrap();
    assert!(matches!(chat.chat(&[ChatMessage::user("hi")], 0.0), Err(BackendError::Transport(_))));
}

#[test]
fn bad_base_url_is_config() {
    assert!(matches!(OpenAiChat::new("ftp://x", "m", None, RetryPolicy::none()), Err(BackendError::Config(_))));
    assert!(matches!(SidecarClient::new("not a url", RetryPolicy::none()), Err(BackendError::Config(_))));
}

#[test]
fn embeddings_follow_index_order() {
    let server = Server::start(|_| {
        (200, json!({"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}).to_string())
    });
    let emb = OpenAiEmbedder::new(&server.url, "e", 2, None, fast_retry()).unwrap();
    let v = emb.embed(&["a".to_string(), "b".to_string()]).unwrap();
    assert_eq!(v[0].values, vec![1.0, 0.0]);
    assert_eq!(v[1].values, vec![0.0, 1.0]);
    let req = &server.requests()[0];
    assert_eq!(req.path, "/v1/embeddings");
    assert_eq!(req.body["input"], json!(["a", "b"]));
}

#[test]
fn embedding_dimension_mismatch_is_rejected() {
    let server = Server::start(|_| (200, json!({"data":[{"index":0,"embedding":[1.0,0.0,0.0]}]}).to_string()));
    let emb = OpenAiEmbedder::new(&server.url, "e", 2, None, fast_retry()).unwrap();
    assert!(emb.embed(&["a".to_string()]).is_err());
}

#[test]
fn sidecar_extract_checks_the_span() {
    let server = Server::start(|req| {
        let ok = req.body["question"] == "Which country?";
        let (answer, start) = if ok { ("France", 8) } else { ("Spain", 8) };
        (200, json!({"answer":answer,"context_index":0,"start":start,"end":start,"score":0.9}).to_string())
    });
    let side = SidecarClient::new(&server.url, fast_retry()).unwrap();
    let contexts = vec!["Q: Where? A: Paris, France".to_string()];
    let span = side.extract_span("Which country?", &contexts).unwrap();
    assert_eq!((span.answer_text.as_str(), span.context_index, span.score), ("France", 0, 0.9));
    assert_eq!(server.requests()[0].body["contexts"], json!(contexts));
    assert!(matches!(side.extract_span("Other?", &contexts), Err(BackendError::Protocol(_))));
    assert!(matches!(side.extract_span("Q?", &[]), Err(BackendError::InvalidInput(_))));
}

#[test]
fn sidecar_rewrite_round_trip() {
    let server = Server::start(|req| {
        let e = req.body["entities"][0].as_str().unwrap().to_string();
        (200, json!({"rewritten": format!("Where was {e} born?")}).to_string())
    });
    let side = SidecarClient::new(&server.url, fast_retry()).unwrap();
    let r = side.rewrite("Where was he born?", &["Albert Einstein".to_string()]).unwrap();
    assert_eq!(r.rewritten, "Where was Albert Einstein born?");
    assert_eq!(server.requests()[0].path, "/rewrite");
}

#[test]
fn sidecar_entities_are_checked_and_sorted() {
    let server = Server::start(|req| {
        if req.body["text"] == "Jaap Speyer directed it in 1919." {
            (
                200,
                json!({"mentions":[
                    {"surface":"1919","label":"DATE","char_start":27,"char_end":31},
                    {"surface":"Jaap Speyer","label":"PERSON","char_start":0,"char_end":11}
                ]})
                .to_string(),
            )
        } else {
            (200, json!({"mentions":[{"surface":"Nobody","label":"PERSON","char_start":0,"char_end":6}]}).to_string())
        }
    });
    let side = SidecarClient::new(&server.url, fast_retry()).unwrap();
    let m = side.annotate("Jaap Speyer directed it in 1919.").unwrap();
    assert_eq!(m.iter().map(|m| m.surface.as_str()).collect::<Vec<_>>(), ["Jaap Speyer", "1919"]);
    assert!(matches!(side.annotate("Someone else."), Err(BackendError::Protocol(_))));
}
