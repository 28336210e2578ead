mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use bbaudit::blackbox::{remote_model, FeatureKind, InputSchema, OutputSpace, QueryError, QuerySeed, RemoteEndpoint, TransportError};
use bbaudit::criteria::{estimate_statistical_parity, StatisticalParity};
use bbaudit::evidence::{DistributionSpec, Marginal};
use bbaudit::{collect, query_batch, ModelInput, QueryBudget, SamplingStrategy, Value};
use common::{per_input, serve};
use serde_json::json;

fn endpoint(url: &str, output: OutputSpace) -> RemoteEndpoint {
    RemoteEndpoint {
        url: url.into(),
        timeout_ms: 2_000,
        max_batch_size: 64,
        token_env: None,
        identity: Some("test endpoint".into()),
        deterministic: true,
        cost_per_query: 1.0,
        schema: InputSchema {
            features: BTreeMap::from([("x".into(), FeatureKind::Numeric { min: 0.0, max: 1.0, step: None })]),
            groups: vec!["G1".into(), "G2".into()],
        },
        output,
    }
}

fn grid() -> OutputSpace {
    OutputSpace::Grid { min: 0.0, max: 1.0, steps: 100 }
}

fn inputs(n: usize) -> Vec<ModelInput> {
    (0..n)
        .map(|i| ModelInput::new().with_feature("x", Value::Num(i as f64 / 100.0)).with_group(if i % 2 == 0 { "G1" } else { "G2" }))
        .collect()
}

fn seeds(n: usize) -> Vec<QuerySeed> {
    (0..n as u64).map(QuerySeed).collect()
}

#[test]
fn outputs_stay_in_input_order_across_batches() {
    let (url, log) = serve(per_input(|x| x["x"].clone()));
    let mut ep = endpoint(&url, grid());
    ep.max_batch_size = 4;
    let m = remote_model(&ep).unwrap();
    let xs = inputs(10);
    let out = query_batch(&m, &xs, &seeds(10)).unwrap();
    for (x, y) in xs.iter().zip(&out) {
        assert_eq!(y.as_ref().unwrap().num(), x.num("x"));
    }
    let sizes: Vec<usize> = log.lock().unwrap().iter().map(|s| s.body["inputs"].as_array().unwrap().len()).collect();
    assert_eq!(sizes, [4, 4, 2]);
    assert_eq!(log.lock().unwrap()[0].body["inputs"][1]["group"], json!("G2"));
}

#[test]
fn parity_audit_through_the_wire() {
    let (url, _) = serve(per_input(|x| json!(if x["group"] == "G1" { 1 } else { 0 })));
    let m = remote_model(&endpoint(&url, OutputSpace::Binary)).unwrap();
    let strategy = SamplingStrategy::Stratified {
        base: DistributionSpec {
            features: BTreeMap::from([("x".into(), Marginal::Uniform { min: 0.0, max: 1.0 })]),
            groups: None,
        },
        quotas: BTreeMap::from([("G1".into(), 40), ("G2".into(), 40)]),
    };
    let ev = collect(&m, &strategy, 80, &mut QueryBudget::unlimited(), 1).unwrap();
    assert!(!ev.replayable());
    let est = estimate_statistical_parity(&ev, &StatisticalParity { group_a: "G1".into(), group_b: "G2".into(), threshold: 0.1 }).unwrap();
    assert!((est.g_hat - 0.9).abs() < 1e-12);
}

#[test]
fn bearer_token_is_sent() {
    let (url, log) = serve(per_input(|_| json!(1)));
    std::env::set_var("REMOTE_TEST_TOKEN", "s3cret");
    let mut ep = endpoint(&url, OutputSpace::Binary);
    ep.token_env = Some("REMOTE_TEST_TOKEN".into());
    let m = remote_model(&ep).unwrap();
    query_batch(&m, &inputs(1), &seeds(1)).unwrap();
    assert_eq!(log.lock().unwrap()[0].authorization.as_deref(), Some("Bearer s3cret"));
}

#[test]
fn malformed_body_is_a_protocol_error() {
    let (url, _) = serve(Box::new(|_| (200, "not json".into())));
    let m = remote_model(&endpoint(&url, OutputSpace::Binary)).unwrap();
    let err = query_batch(&m, &inputs(2), &seeds(2)).unwrap_err();
    assert!(matches!(err, QueryError::Transport(TransportError::Protocol(_))), "{err:?}");
    assert!(!err.is_retryable());
}

#[test]
fn short_reply_is_a_protocol_error() {
    let (url, _) = serve(Box::new(|_| (200, json!({"outputs": [1]}).to_string())));
    let m = remote_model(&endpoint(&url, OutputSpace::Binary)).unwrap();
    let err = query_batch(&m, &inputs(3), &seeds(3)).unwrap_err();
    assert!(matches!(err, QueryError::Transport(TransportError::Protocol(_))), "{err:?}");
}

#[test]
fn server_error_status_is_retryable() {
    let (url, _) = serve(Box::new(|_| (503, "{}".into())));
    let m = remote_model(&endpoint(&url, OutputSpace::Binary)).unwrap();
    let err = query_batch(&m, &inputs(1), &seeds(1)).unwrap_err();
    assert_eq!(err, QueryError::Transport(TransportError::Status { code: 503 }));
    assert!(err.is_retryable());
}

#[test]
fn slow_server_times_out() {
    let (url, _) = serve(Box::new(|_| {
        std::thread::sleep(Duration::from_millis(600));
        (200, json!({"outputs": [1]}).to_string())
    }));
    let mut ep = endpoint(&url, OutputSpace::Binary);
    ep.timeout_ms = 100;
    let m = remote_model(&ep).unwrap();
    let err = query_batch(&m, &inputs(1), &seeds(1)).unwrap_err();
    assert!(matches!(err, QueryError::Transport(TransportError::Timeout { ms: 100 })), "{err:?}");
}

#[test]
fn out_of_space_replies_are_logged_as_anomalies() {
    let (url, _) = serve(per_input(|x| if x["group"] == "G1" { json!(2) } else { json!(0) }));
    let m = remote_model(&endpoint(&url, OutputSpace::Binary)).unwrap();
    let strategy = SamplingStrategy::Enumerate { inputs: inputs(6) };
    let ev = collect(&m, &strategy, 6, &mut QueryBudget::unlimited(), 0).unwrap();
    assert_eq!(ev.n(), 3);
    assert_eq!(ev.provenance.anomalies.len(), 3);
    assert_eq!(ev.provenance.anomalies[0].raw, "2");
    assert_eq!(ev.provenance.queries_spent, 6);
}

#[test]
fn unreachable_endpoint_is_an_io_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let m = remote_model(&endpoint(&url, OutputSpace::Binary)).unwrap();
    let err = query_batch(&m, &inputs(1), &seeds(1)).unwrap_err();
    assert!(matches!(err, QueryError::Transport(TransportError::Io(_))), "{err:?}");
}
