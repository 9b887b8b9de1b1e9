mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use anchorcast::model_pool::{anchor_forecast, ModelSpec};
use anchorcast::toolkit::ToolkitConfig;
use anchorcast::workflow::{
    render_block, ArchMode, Engine, PromptTemplates, RemoteConfig, RemotePolicy, RunOptions, WorkflowConfig,
};
use anchorcast::{Mode, Window};
use common::fixture;

/// Minimal HTTP/1.1 server answering chat requests by model name. Returns
/// the endpoint and the captured requests (headers, body).
type Captured = Arc<Mutex<Vec<(String, String)>>>;

fn serve(forecast: String, connections: usize) -> (String, Captured) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(vec![]));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming().take(connections) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push_str(&line);
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            let body = String::from_utf8(body).unwrap();
            let req: serde_json::Value = serde_json::from_str(&body).unwrap();
            let content = match req["model"].as_str().unwrap() {
                "p" => "Use trend tools.\nTOOLS: trend_analysis, data_quality".to_string(),
                "f" => format!("Keeping the baseline.\n{forecast}"),
                _ => "VERDICT: PASS".to_string(),
            };
            log.lock().unwrap().push((headers, body));
            let reply = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
            let resp = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), seen)
}

#[test]
fn remote_policy_round_trip_over_http() {
    let f = fixture();
    let w = &f.windows.test[0];
    let base = anchor_forecast(&w.view(), &f.library).unwrap();
    let (endpoint, seen) = serve(render_block(&base.values), 3);
    let cfg = RemoteConfig {
        endpoint,
        planner_model: "p".into(),
        forecaster_model: "f".into(),
        reflector_model: "r".into(),
        timeout_secs: 10,
        ..Default::default()
    };
    let policy = RemotePolicy::http(cfg, Some("secret".into()), true);
    let tk = ToolkitConfig::default();
    let wf = WorkflowConfig { arch: ArchMode::Full, ..Default::default() };
    let templates = PromptTemplates::builtin();
    let engine = Engine { library: &f.library, memory: None, policy: &policy, toolkit: &tk, config: &wf, templates: &templates };
    let t = engine.run(&w.without_future(), Mode::Test, &RunOptions::default()).unwrap();
    assert!(t.is_valid());
    assert_eq!(t.final_values().unwrap(), base.values.as_slice());
    assert_eq!(t.policy_calls, 3);
    assert_eq!(t.exchanges.len(), 3);
    assert_eq!(t.exchanges[0].role, "planner");
    let names = t.attempts[0].schedule.names();
    assert!(names.contains(&"trend_analysis") && names.contains(&"data_quality"));
    let seen = seen.lock().unwrap();
    assert!(seen[0].0.to_ascii_lowercase().contains("authorization: bearer secret"));
    let body: serde_json::Value = serde_json::from_str(&seen[1].1).unwrap();
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
}

#[test]
fn unreachable_endpoint_is_a_planner_failure() {
    let f = fixture();
    // bind then drop to get a closed port
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = RemoteConfig { endpoint: format!("http://127.0.0.1:{port}/x"), timeout_secs: 2, ..Default::default() };
    let policy = RemotePolicy::http(cfg, None, false);
    let tk = ToolkitConfig::default();
    let wf = WorkflowConfig::default();
    let templates = PromptTemplates::builtin();
    let engine = Engine { library: &f.library, memory: None, policy: &policy, toolkit: &tk, config: &wf, templates: &templates };
    let err = engine.run(&f.windows.test[0], Mode::Test, &RunOptions::default()).unwrap_err();
    match err {
        anchorcast::Error::Workflow { kind: anchorcast::WorkflowFailure::PlannerUnavailable(_), partial: Some(p) } => {
            assert_eq!(p.policy_calls, 3)
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[cfg(unix)]
fn script(dir: &std::path::Path, name: &str, body: &str) -> String {
    use std::os::unix::fs::PermissionsExt;
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    p.to_string_lossy().into_owned()
}

#[cfg(unix)]
#[test]
fn external_plugin_models() {
    let dir = tempfile::tempdir().unwrap();
    // repeats the last lookback value
    let last = script(
        dir.path(),
        "last.sh",
        "#!/bin/sh\nv=$(tail -n 1)\ni=0\nwhile [ $i -lt \"$ANCHORCAST_HORIZON\" ]; do echo \"$v\"; i=$((i+1)); done\n",
    );
    let w = Window::univariate(&[1.0, 2.0, 3.5], None, 4).unwrap();
    let m = ModelSpec::External { name: "last".into(), command: last, args: vec![] }.build();
    assert_eq!(m.forecast(&w.view()).unwrap(), vec![3.5; 4]);

    let failing = script(dir.path(), "fail.sh", "#!/bin/sh\necho broken >&2\nexit 3\n");
    let m = ModelSpec::External { name: "fail".into(), command: failing, args: vec![] }.build();
    let err = m.forecast(&w.view()).unwrap_err().to_string();
    assert!(err.contains("fail"), "{err}");

    let short = script(dir.path(), "short.sh", "#!/bin/sh\ncat >/dev/null\necho 1\n");
    let m = ModelSpec::External { name: "short".into(), command: short, args: vec![] }.build();
    assert!(m.forecast(&w.view()).is_err());
}
