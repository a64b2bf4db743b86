use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use tcprobe::backend::wire::{spawn_server, ErrorBody, NextResponse};
use tcprobe::backend::{
    Backend, BackendDescriptor, BackendError, BackendKind, NoiseBackend, NoiseMode, OracleBackend,
    RemoteBackend,
};
use tcprobe::classifier::{classify, ClassifierConfig, PromptSpec};
use tcprobe::datasets::{TaskKind, TaskSampler};
use tcprobe::oracle::{common_words, Oracle};
use tcprobe::probe::probe;
use tcprobe::wordseg::BoundaryRule;

fn sampler() -> TaskSampler {
    TaskSampler::concat(TaskKind::ConcatLastLetter, &common_words()).unwrap()
}

fn local(sampler: &TaskSampler) -> Arc<OracleBackend> {
    Arc::new(OracleBackend::new(
        Oracle::from_grammar(sampler.grammar().clone()),
        50,
    ))
}

fn remote(url: &str) -> RemoteBackend {
    RemoteBackend::new(url, 50, Duration::from_secs(10), 2).unwrap()
}

#[test]
fn served_oracle_classifies_bit_exactly() {
    let sampler = sampler();
    let local = local(&sampler);
    let server = spawn_server(local.clone(), "127.0.0.1:0").unwrap();
    let remote = remote(&server.url());
    let config = ClassifierConfig::default();
    for ds in sampler.probe_datasets(20, 8, 21).unwrap() {
        let spec = PromptSpec::from_dataset(&ds);
        let sentence = ds.reference.answer_text();
        let a = classify(local.as_ref(), &spec, &sentence, &config).unwrap();
        let b = classify(&remote, &spec, &sentence, &config).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.words.iter().zip(&b.words) {
            assert_eq!(x.variance.to_bits(), y.variance.to_bits());
        }
    }
}

#[test]
fn served_oracle_probes_bit_exactly() {
    let sampler = sampler();
    let local = local(&sampler);
    let server = spawn_server(local.clone(), "127.0.0.1:0").unwrap();
    let remote = remote(&server.url());
    let rule = BoundaryRule::default();
    for ds in sampler.probe_datasets(3, 8, 2).unwrap() {
        assert_eq!(
            probe(local.as_ref(), &ds, &rule).unwrap(),
            probe(&remote, &ds, &rule).unwrap()
        );
    }
    assert_eq!(remote.info().unwrap(), local.info().unwrap());
}

#[test]
fn served_noise_matches_in_process() {
    let noise = Arc::new(NoiseBackend::new(4, NoiseMode::Prefix, 20));
    let server = spawn_server(noise.clone(), "127.0.0.1:0").unwrap();
    let remote = RemoteBackend::new(&server.url(), 20, Duration::from_secs(10), 0).unwrap();
    let prefix = noise.tokenize("one two three").unwrap();
    assert_eq!(remote.tokenize("one two three").unwrap(), prefix);
    assert_eq!(
        remote.next_distribution(&prefix).unwrap(),
        noise.next_distribution(&prefix).unwrap()
    );
}

fn post(url: &str, body: &str) -> (u16, Value) {
    let resp = reqwest::blocking::Client::new()
        .post(url)
        .header("content-type", "application/json")
        .body(body.to_owned())
        .send()
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().unwrap())
}

fn error_code(v: &Value) -> String {
    serde_json::from_value::<ErrorBody>(v.clone())
        .unwrap()
        .error
        .code
}

#[test]
fn malformed_and_invalid_requests_are_client_errors() {
    let sampler = sampler();
    let server = spawn_server(local(&sampler), "127.0.0.1:0").unwrap();
    let base = server.url();

    let (status, body) = post(&format!("{base}/v1/next"), "{not json");
    assert_eq!(status, 400);
    assert_eq!(error_code(&body), "malformed_request");

    let (status, body) = post(
        &format!("{base}/v1/next"),
        r#"{"token_ids": [1], "extra": 1}"#,
    );
    assert!((400..500).contains(&status));
    assert_eq!(error_code(&body), "malformed_request");

    let (status, body) = post(
        &format!("{base}/v1/next"),
        &json!({"token_ids": [4000000000u32], "top_k": 5}).to_string(),
    );
    assert_eq!(status, 400);
    assert_eq!(error_code(&body), "unknown_token");

    let (status, body) = post(
        &format!("{base}/v1/next"),
        &json!({"token_ids": [], "top_k": 5}).to_string(),
    );
    assert_eq!(status, 400);
    assert_eq!(error_code(&body), "invalid_request");

    let (status, body) = post(
        &format!("{base}/v1/batch_next"),
        &json!({"prefixes": [], "top_k": 5}).to_string(),
    );
    assert_eq!(status, 400);
    assert_eq!(error_code(&body), "invalid_request");

    let (_, toks) = post(
        &format!("{base}/v1/tokenize"),
        &json!({"text": "Hello world"}).to_string(),
    );
    let ids: Vec<u64> = toks["tokens"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["id"].as_u64().unwrap())
        .collect();
    let (status, body) = post(
        &format!("{base}/v1/next"),
        &json!({"token_ids": ids, "top_k": 5}).to_string(),
    );
    assert_eq!(status, 422);
    assert_eq!(error_code(&body), "off_template");
}

#[test]
fn probabilities_travel_as_decimal_strings() {
    let sampler = sampler();
    let local = local(&sampler);
    let server = spawn_server(local.clone(), "127.0.0.1:0").unwrap();
    let prefix = local
        .tokenize("Concatenate the last letters of the given words:")
        .unwrap();
    let ids: Vec<u32> = prefix.iter().map(|t| t.id).collect();
    let (status, body) = post(
        &format!("{}/v1/next", server.url()),
        &json!({"token_ids": ids, "top_k": 3}).to_string(),
    );
    assert_eq!(status, 200);
    let resp: NextResponse = serde_json::from_value(body).unwrap();
    assert_eq!(resp.support.len(), 3);
    assert_eq!(resp.support[0].p, "2.0000000000000001e-4");
    let d = resp.into_distribution().unwrap();
    assert_eq!(
        d,
        local.next_distribution(&prefix).unwrap().truncate_top_k(3)
    );
}

#[test]
fn remote_client_reports_protocol_errors_without_retrying() {
    let sampler = sampler();
    let server = spawn_server(local(&sampler), "127.0.0.1:0").unwrap();
    let remote = remote(&server.url());
    let toks = remote.tokenize("Hello world").unwrap();
    let err = remote.next_distribution(&toks).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err}");
    assert!(err.to_string().contains("off_template"));
}

#[test]
fn descriptors_connect() {
    let d = BackendDescriptor::parse("oracle:concat-last-letter").unwrap();
    assert_eq!(d.kind, BackendKind::Oracle("concat-last-letter".into()));
    let b = d.connect().unwrap();
    assert_eq!(b.info().unwrap().model_name, "oracle:concat-last-letter");
    let n = BackendDescriptor::parse("noise-position:3").unwrap();
    assert_eq!(
        n.kind,
        BackendKind::Noise {
            seed: 3,
            mode: NoiseMode::Position
        }
    );
    assert!(BackendDescriptor::parse("gpu:0").is_err());
    assert!(BackendDescriptor::parse("oracle:no-such-grammar")
        .unwrap()
        .connect()
        .is_err());
}
