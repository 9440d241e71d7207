mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use common::{dead_endpoint, MockServer, Response};
use guirc::sampler::{build_request_body, Decoding, ImagePayload, Sampler, SamplerConfig};
use guirc::RcConfig;

fn config(url: &str) -> SamplerConfig {
    let mut c = SamplerConfig::new(url, "mock-vlm");
    c.api_key = None;
    c.backoff_base = Duration::from_millis(20);
    c.timeout = Duration::from_secs(5);
    c
}

fn rc(k: usize) -> RcConfig {
    RcConfig {
        k_samples: k,
        ..RcConfig::default()
    }
}

fn image() -> ImagePayload {
    ImagePayload::from_bytes(b"\x89PNG", "image/png")
}

#[test]
fn n_equals_k_in_one_request() {
    let server = MockServer::start(|_, req| Response::echo(req, "[1,2,3,4]"));
    let sampler = Sampler::new(config(&server.url)).unwrap();
    let out = sampler.sample_k(&image(), "find ok", &rc(4));
    assert_eq!(out.texts, vec!["[1,2,3,4]"; 4]);
    assert!(out.is_complete());
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].n(), 4);
    assert_eq!(reqs[0].path, "/v1/chat/completions");
}

#[test]
fn request_body_shape() {
    let server = MockServer::start(|_, req| Response::echo(req, "(5, 5)"));
    let mut cfg = config(&server.url);
    cfg.api_key = Some("secret".into());
    cfg.max_tokens = 32;
    let sampler = Sampler::new(cfg).unwrap();
    let cfg = RcConfig {
        k_samples: 2,
        temperature: 0.5,
        top_p: 0.95,
        ..RcConfig::default()
    };
    sampler.sample_k(&image(), "click the gear", &cfg);
    let req = &server.requests()[0];
    let j = &req.json;
    assert_eq!(j["model"], "mock-vlm");
    assert_eq!(j["temperature"], 0.5);
    assert_eq!(j["top_p"], 0.95);
    assert_eq!(j["n"], 2);
    assert_eq!(j["max_tokens"], 32);
    let content = &j["messages"][0]["content"];
    assert_eq!(j["messages"][0]["role"], "user");
    assert_eq!(content[0]["type"], "image_url");
    assert_eq!(content[0]["image_url"]["url"], "data:image/png;base64,iVBORw==");
    assert_eq!(content[1]["type"], "text");
    assert_eq!(content[1]["text"], "click the gear");
    assert_eq!(req.header("authorization"), Some("Bearer secret"));
    assert_eq!(req.header("content-type"), Some("application/json"));
}

#[test]
fn bodies_are_byte_stable() {
    let server = MockServer::start(|_, req| Response::echo(req, "[0,0,1,1]"));
    let cfg = config(&server.url);
    let sampler = Sampler::new(cfg.clone()).unwrap();
    sampler.sample_k(&image(), "same prompt", &rc(3));
    sampler.sample_k(&image(), "same prompt", &rc(3));
    let reqs = server.requests();
    assert_eq!(reqs[0].body, reqs[1].body);
    let expected = build_request_body(
        &cfg,
        &image(),
        "same prompt",
        Decoding {
            temperature: 0.5,
            top_p: 0.95,
            n: 3,
        },
    );
    assert_eq!(reqs[0].body, expected);
}

#[test]
fn fanout_respects_concurrency() {
    let server = MockServer::with_delay(Duration::from_millis(60), |i, _| Response::choices(&[format!("({i}, {i})")]));
    let mut cfg = config(&server.url);
    cfg.use_n = false;
    cfg.concurrency = 3;
    let sampler = Sampler::new(cfg).unwrap();
    let out = sampler.sample_k(&image(), "p", &rc(9));
    assert_eq!(out.texts.len(), 9);
    assert!(out.is_complete());
    let reqs = server.requests();
    assert_eq!(reqs.len(), 9);
    assert!(reqs.iter().all(|r| r.n() == 1));
    assert!(server.max_inflight() <= 3, "max inflight {}", server.max_inflight());
    assert!(server.max_inflight() >= 2, "requests never overlapped");
    let bodies: std::collections::HashSet<&Vec<u8>> = reqs.iter().map(|r| &r.body).collect();
    assert_eq!(bodies.len(), 1);
}

#[test]
fn capped_n_is_topped_up() {
    let server = MockServer::start(|_, req| Response::choices(&vec!["[1,1,2,2]"; req.n().min(2)]));
    let sampler = Sampler::new(config(&server.url)).unwrap();
    let out = sampler.sample_k(&image(), "p", &rc(5));
    assert_eq!(out.texts.len(), 5);
    let ns: Vec<usize> = server.requests().iter().map(|r| r.n()).collect();
    assert_eq!(ns, vec![5, 3, 1]);
}

#[test]
fn retries_with_exponential_backoff() {
    let server = MockServer::start(|i, req| if i < 2 { Response::status(503) } else { Response::echo(req, "[3,3,9,9]") });
    let sampler = Sampler::new(config(&server.url)).unwrap();
    let out = sampler.sample_k(&image(), "p", &rc(2));
    assert_eq!(out.texts, vec!["[3,3,9,9]"; 2]);
    let reqs = server.requests();
    assert_eq!(reqs.len(), 3);
    let gap1 = reqs[1].at - reqs[0].at;
    let gap2 = reqs[2].at - reqs[1].at;
    assert!(gap1 >= Duration::from_millis(20), "{gap1:?}");
    assert!(gap2 >= Duration::from_millis(40), "{gap2:?}");
}

#[test]
fn rate_limit_is_retried_but_client_errors_are_not() {
    let hits = AtomicUsize::new(0);
    let server = MockServer::start(move |_, req| {
        if hits.fetch_add(1, Ordering::SeqCst) == 0 {
            Response::status(429)
        } else {
            Response::echo(req, "ok [1,1,2,2]")
        }
    });
    let sampler = Sampler::new(config(&server.url)).unwrap();
    assert_eq!(sampler.sample_k(&image(), "p", &rc(1)).texts.len(), 1);
    assert_eq!(server.requests().len(), 2);

    let bad = MockServer::start(|_, _| Response::status(400));
    let sampler = Sampler::new(config(&bad.url)).unwrap();
    let out = sampler.sample_k(&image(), "p", &rc(4));
    assert!(out.texts.is_empty());
    assert_eq!(out.gaps.len(), 1);
    assert_eq!(out.gaps[0].missing, 4);
    assert!(out.gaps[0].error.contains("400"));
    assert_eq!(bad.requests().len(), 1);
}

#[test]
fn persistent_failure_records_gaps() {
    let server = MockServer::start(|_, _| Response::status(500));
    let mut cfg = config(&server.url);
    cfg.max_retries = 2;
    cfg.use_n = false;
    cfg.concurrency = 2;
    let sampler = Sampler::new(cfg).unwrap();
    let out = sampler.sample_k(&image(), "p", &rc(3));
    assert!(out.texts.is_empty());
    assert_eq!(out.gaps.iter().map(|g| g.missing).sum::<usize>(), 3);
    assert_eq!(server.requests().len(), 9);
}

#[test]
fn partial_fanout_keeps_successes() {
    let server = MockServer::start(|i, _| if i % 2 == 0 { Response::choices(&["(1, 1)"]) } else { Response::status(404) });
    let mut cfg = config(&server.url);
    cfg.use_n = false;
    cfg.concurrency = 1;
    let sampler = Sampler::new(cfg).unwrap();
    let out = sampler.sample_k(&image(), "p", &rc(4));
    assert_eq!(out.texts, vec!["(1, 1)"; 2]);
    assert_eq!(out.gaps.len(), 2);
    assert!(out.texts.len() <= 4);
}

#[test]
fn unreachable_endpoint_gives_up() {
    let mut cfg = config(&dead_endpoint());
    cfg.max_retries = 2;
    let sampler = Sampler::new(cfg).unwrap();
    let out = sampler.sample_k(&image(), "p", &rc(4));
    assert!(out.texts.is_empty());
    assert_eq!(out.gaps.len(), 1);
    assert_eq!(out.gaps[0].missing, 4);
    assert!(out.gaps[0].error.contains("3 attempts"));
}

#[test]
fn greedy_uses_temperature_zero() {
    let server = MockServer::start(|i, req| if i == 0 { Response::status(502) } else { Response::echo(req, "(7, 8)") });
    let sampler = Sampler::new(config(&server.url)).unwrap();
    assert_eq!(sampler.greedy_baseline(&image(), "p").unwrap(), "(7, 8)");
    let reqs = server.requests();
    assert_eq!(reqs.len(), 2);
    for r in &reqs {
        assert_eq!(r.temperature(), 0.0);
        assert_eq!(r.n(), 1);
    }
}
