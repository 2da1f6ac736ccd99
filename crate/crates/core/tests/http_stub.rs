use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use latprompt::driver::{self, DriverError, EnvironmentConfig, RunConfig};
use latprompt::env::{EnvError, ProjectionMatrix};
use latprompt::llm::{
    BlackBox, BlackBoxConfig, Decoder, DecoderConfig, LlmError, PromptTemplates, RetryPolicy,
};
use latprompt::tasks::parse_task;
use serde_json::Value;

#[derive(Debug, Clone)]
struct Reply {
    status: u16,
    headers: Vec<(&'static str, String)>,
    body: String,
}

fn ok(body: Value) -> Reply {
    Reply {
        status: 200,
        headers: vec![("Content-Type", "application/json".into())],
        body: body.to_string(),
    }
}

fn status(code: u16) -> Reply {
    Reply {
        status: code,
        headers: Vec::new(),
        body: "stub error".into(),
    }
}

fn chat(text: &str) -> Reply {
    ok(serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}))
}

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves `script` in order, one reply per connection, repeating the last reply
/// once the script runs out.
fn serve(script: Vec<Reply>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                continue;
            }
            let path = request_line
                .split_whitespace()
                .nth(1)
                .unwrap_or("")
                .to_string();
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                authorization,
                body: serde_json::from_slice(&body).unwrap_or(Value::Null),
            });
            let reply = script[i.min(script.len() - 1)].clone();
            let mut head = format!(
                "HTTP/1.1 {} Stub\r\nContent-Length: {}\r\nConnection: close\r\n",
                reply.status,
                reply.body.len()
            );
            for (k, v) in &reply.headers {
                head.push_str(&format!("{k}: {v}\r\n"));
            }
            head.push_str("\r\n");
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(reply.body.as_bytes());
        }
    });
    (base, seen)
}

fn fast_retry(max_attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts,
        initial_backoff_ms: 1,
        max_backoff_ms: 5,
    }
}

fn http_blackbox(base: &str, retry: RetryPolicy, api_key_env: Option<&str>) -> BlackBox {
    let config = BlackBoxConfig::Http {
        base_url: format!("{base}/v1"),
        model: "stub-model".into(),
        temperature: 0.0,
        max_tokens: 16,
        timeout_ms: 5_000,
        api_key_env: api_key_env.map(str::to_string),
        retry,
    };
    BlackBox::from_config(&config, PromptTemplates::default()).unwrap()
}

#[test]
fn completion_request_shape_and_auth() {
    let (base, seen) = serve(vec![chat("  lost \n")]);
    std::env::set_var("LATPROMPT_STUB_KEY", "secret-token");
    let bb = http_blackbox(&base, fast_retry(1), Some("LATPROMPT_STUB_KEY"));
    let prompt = bb.templates().render_evaluation("flip it", "won");
    assert_eq!(bb.complete(&prompt).unwrap(), "lost");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(
        seen[0].authorization.as_deref(),
        Some("Bearer secret-token")
    );
    assert_eq!(seen[0].body["model"], "stub-model");
    assert_eq!(seen[0].body["temperature"], 0.0);
    assert_eq!(seen[0].body["messages"][0]["content"], prompt.as_str());
}

#[test]
fn rate_limit_is_retried() {
    let mut limited = status(429);
    limited.headers.push(("Retry-After", "0".into()));
    let (base, seen) = serve(vec![limited, status(503), chat("yes")]);
    let bb = http_blackbox(&base, fast_retry(4), None);
    assert_eq!(
        bb.complete("Instruction: x\n\nInput: y\nOutput:").unwrap(),
        "yes"
    );
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert_eq!(bb.query_count(), 1);
}

#[test]
fn retries_give_up_after_the_limit() {
    let (base, seen) = serve(vec![status(500)]);
    let bb = http_blackbox(&base, fast_retry(3), None);
    let err = bb.complete("anything").unwrap_err();
    assert!(
        matches!(err, LlmError::Transport { attempts: 3, .. }),
        "{err:?}"
    );
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (base, seen) = serve(vec![status(400), chat("never")]);
    let bb = http_blackbox(&base, fast_retry(5), None);
    let err = bb.complete("anything").unwrap_err();
    assert!(
        matches!(err, LlmError::Status { status: 400, .. }),
        "{err:?}"
    );
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_completion_is_a_protocol_error() {
    let (base, _) = serve(vec![ok(serde_json::json!({"unexpected": true}))]);
    let bb = http_blackbox(&base, fast_retry(2), None);
    assert!(matches!(
        bb.complete("x").unwrap_err(),
        LlmError::Protocol(_)
    ));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let bb = http_blackbox(&format!("http://127.0.0.1:{port}"), fast_retry(2), None);
    assert!(matches!(
        bb.complete("x").unwrap_err(),
        LlmError::Transport { attempts: 2, .. }
    ));
}

#[test]
fn decoder_protocol() {
    let cue = PromptTemplates::default().cue;
    let (base, seen) = serve(vec![
        status(502),
        ok(serde_json::json!({"instruction": format!("{cue} flip each word.\nmore text")})),
    ]);
    let config = DecoderConfig::Http {
        base_url: base,
        timeout_ms: 5_000,
        max_tokens: 32,
        retry: fast_retry(3),
    };
    let projection = ProjectionMatrix::new(3 * 4, 2, 9);
    let decoder = Decoder::from_config(&config, &projection, 3).unwrap();
    let z = projection.project(&[0.2, 0.9]).unwrap();
    let prompt = format!("Input: a\nOutput: b\n\n{cue}");
    assert_eq!(decoder.decode(&z, &prompt, None).unwrap(), "flip each word");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].path, "/v1/decode");
    let rows = seen[1].body["soft_prompt"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.as_array().unwrap().len() == 4));
    assert_eq!(seen[1].body["max_tokens"], 32);
    assert_eq!(seen[1].body["exemplar_prompt"], prompt.as_str());
}

#[test]
fn failure_mid_run_keeps_the_partial_trace() {
    // Two completions per step; the endpoint starts refusing on the seventh.
    let mut script: Vec<Reply> = (0..6).map(|_| chat("yes")).collect();
    script.push(status(401));
    let (base, _) = serve(script);
    let dir = tempfile::tempdir().unwrap();
    let task = serde_json::json!({
        "name": "stub",
        "metric": "exact-match",
        "exemplars": [{"input": "a", "output": "yes"}],
        "validation": [{"input": "a", "output": "yes"}, {"input": "b", "output": "yes"}],
        "test": [{"input": "c", "output": "yes"}],
    });
    let config = RunConfig {
        budget: 10,
        action_dim: 3,
        token_width: 8,
        validation_size: 2,
        exemplar_count: 1,
        audit: true,
        environment: EnvironmentConfig::Llm {
            decoder: DecoderConfig::Mock { grammar: None },
            blackbox: BlackBoxConfig::Http {
                base_url: format!("{base}/v1"),
                model: "m".into(),
                temperature: 0.0,
                max_tokens: 8,
                timeout_ms: 5_000,
                api_key_env: None,
                retry: fast_retry(2),
            },
            templates: PromptTemplates::default(),
            fan_out: 1,
            memoize: false,
        },
        ..RunConfig::default()
    };
    let spec = parse_task(&task.to_string(), 2, 1, 0).unwrap();
    let env = driver::build_environment(&config, Some(spec), Some(dir.path())).unwrap();
    let err = driver::run_optimization(&config, &env, Some(dir.path())).unwrap_err();
    match err {
        DriverError::Environment {
            step,
            source:
                EnvError::Llm(LlmError::PartialEvaluation {
                    completed, total, ..
                }),
        } => {
            assert_eq!(step, 4);
            assert_eq!((completed, total), (0, 2));
        }
        other => panic!("unexpected error {other:?}"),
    }
    let trace = latprompt::analysis::read_trace(&dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.len(), 3);
    assert!(trace.iter().all(|r| r.reward == 1.0));
    let audit = std::fs::read_to_string(dir.path().join("audit.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 6);
}
