//! End-to-end ingest tests against the local stub server, including
//! fault injection for the retry policy.

mod common;

use std::time::Duration;

use common::{serve_volume, StubResponse, StubServer, PATH_TEMPLATE};
use emvox::ingest::{self, cutout_url, fetch_all, fetch_chunk, IngestError};
use emvox::volume::Extent3D;
use emvox::{CutoutSpec, FetchPolicy};

fn test_policy(parallelism: usize, max_retries: u32) -> FetchPolicy {
    FetchPolicy {
        parallelism,
        max_retries,
        backoff_base: Duration::from_millis(1),
        timeout: Duration::from_secs(10),
    }
}

fn spec_2x2x2() -> CutoutSpec {
    CutoutSpec {
        chunk_id: 0,
        token: "t".into(),
        resolution: 1,
        extent: Extent3D::new(0, 2, 0, 2, 0, 2).unwrap(),
    }
}

#[test]
fn fetch_chunk_returns_served_bytes() {
    let server = StubServer::start();
    let spec = spec_2x2x2();
    let path = cutout_url(&spec, PATH_TEMPLATE).unwrap();
    let body = vec![1u8, 2, 3, 4, 5, 6, 7, 8];
    server.route(&path, vec![StubResponse::Status(200, body.clone())]);

    let template = format!("{}{}", server.base(), PATH_TEMPLATE);
    let v = fetch_chunk(&spec, &template, &test_policy(1, 0)).unwrap();
    assert_eq!(v.voxels(), body.as_slice());
    assert_eq!(v.extent(), spec.extent);
    assert_eq!(server.hits(&path), 1);
}

#[test]
fn transient_500s_are_retried_until_success() {
    let server = StubServer::start();
    let spec = spec_2x2x2();
    let path = cutout_url(&spec, PATH_TEMPLATE).unwrap();
    server.route(
        &path,
        vec![
            StubResponse::Status(500, b"flaky".to_vec()),
            StubResponse::Status(500, b"flaky".to_vec()),
            StubResponse::Status(200, vec![9u8; 8]),
        ],
    );

    let template = format!("{}{}", server.base(), PATH_TEMPLATE);
    let v = fetch_chunk(&spec, &template, &test_policy(1, 2)).unwrap();
    assert_eq!(v.voxels(), &[9u8; 8]);
    assert_eq!(server.hits(&path), 3, "two failures plus the success");
}

#[test]
fn status_404_is_permanent_single_attempt() {
    let server = StubServer::start();
    let spec = spec_2x2x2();
    let path = cutout_url(&spec, PATH_TEMPLATE).unwrap();
    server.route(&path, vec![StubResponse::Status(404, b"gone".to_vec())]);

    let template = format!("{}{}", server.base(), PATH_TEMPLATE);
    let err = fetch_chunk(&spec, &template, &test_policy(1, 5)).unwrap_err();
    assert!(
        matches!(err, IngestError::HttpStatus { chunk_id: 0, status: 404 }),
        "{err}"
    );
    assert_eq!(server.hits(&path), 1, "4xx must not be retried");
}

#[test]
fn retries_exhaust_after_max_retries_plus_one_attempts() {
    let server = StubServer::start();
    let spec = spec_2x2x2();
    let path = cutout_url(&spec, PATH_TEMPLATE).unwrap();
    server.route(&path, vec![StubResponse::Status(503, b"down".to_vec())]);

    let template = format!("{}{}", server.base(), PATH_TEMPLATE);
    let err = fetch_chunk(&spec, &template, &test_policy(1, 2)).unwrap_err();
    match err {
        IngestError::FetchFailed { chunk_id, attempts, .. } => {
            assert_eq!(chunk_id, 0);
            assert_eq!(attempts, 3);
        }
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(server.hits(&path), 3);
}

#[test]
fn dropped_connections_count_as_transient() {
    let server = StubServer::start();
    let spec = spec_2x2x2();
    let path = cutout_url(&spec, PATH_TEMPLATE).unwrap();
    server.route(
        &path,
        vec![StubResponse::Close, StubResponse::Status(200, vec![3u8; 8])],
    );

    let template = format!("{}{}", server.base(), PATH_TEMPLATE);
    let v = fetch_chunk(&spec, &template, &test_policy(1, 1)).unwrap();
    assert_eq!(v.voxels(), &[3u8; 8]);
    assert_eq!(server.hits(&path), 2);
}

#[test]
fn wrong_payload_size_is_reported() {
    let server = StubServer::start();
    let spec = spec_2x2x2();
    let path = cutout_url(&spec, PATH_TEMPLATE).unwrap();
    server.route(&path, vec![StubResponse::Status(200, vec![0u8; 7])]);

    let template = format!("{}{}", server.base(), PATH_TEMPLATE);
    let err = fetch_chunk(&spec, &template, &test_policy(1, 2)).unwrap_err();
    assert!(
        matches!(err, IngestError::PayloadSize { expected: 8, got: 7, .. }),
        "{err}"
    );
}

#[test]
fn fetch_all_assembles_identically_at_any_parallelism() {
    let server = StubServer::start();
    let extent = Extent3D::new(0, 8, 0, 8, 0, 100).unwrap();
    let source = common::random_volume(extent, 42);
    let manifest = ingest::plan_chunks("t", 1, extent, 16).unwrap();
    assert_eq!(manifest.len(), 7);
    let template = serve_volume(&server, &manifest, &source);

    for parallelism in [1usize, 2, 8] {
        let v = fetch_all(&manifest, &template, &test_policy(parallelism, 0)).unwrap();
        assert_eq!(v.extent(), extent);
        assert_eq!(v.voxels(), source.voxels(), "parallelism {parallelism}");
    }
}

#[test]
fn fetch_all_reports_every_failed_chunk() {
    let server = StubServer::start();
    let extent = Extent3D::new(0, 4, 0, 4, 0, 64).unwrap();
    let source = common::random_volume(extent, 7);
    let manifest = ingest::plan_chunks("t", 1, extent, 16).unwrap();
    let template = serve_volume(&server, &manifest, &source);

    // Chunks 1 and 3 turn permanent-bad.
    for bad in [1usize, 3] {
        let path = cutout_url(&manifest.entries()[bad], PATH_TEMPLATE).unwrap();
        server.route(&path, vec![StubResponse::Status(404, b"gone".to_vec())]);
    }

    let err = fetch_all(&manifest, &template, &test_policy(4, 0)).unwrap_err();
    assert_eq!(err.failed_chunk_ids(), vec![1, 3], "{err}");
}

#[test]
fn fetch_all_retry_accounting_per_chunk() {
    let server = StubServer::start();
    let extent = Extent3D::new(0, 4, 0, 4, 0, 32).unwrap();
    let source = common::random_volume(extent, 8);
    let manifest = ingest::plan_chunks("t", 1, extent, 16).unwrap();
    let template = serve_volume(&server, &manifest, &source);

    // Chunk 0 fails twice before succeeding.
    let flaky = cutout_url(&manifest.entries()[0], PATH_TEMPLATE).unwrap();
    let body = source
        .subvolume(manifest.entries()[0].extent)
        .unwrap()
        .into_voxels();
    server.route(
        &flaky,
        vec![
            StubResponse::Status(500, Vec::new()),
            StubResponse::Status(500, Vec::new()),
            StubResponse::Status(200, body),
        ],
    );

    let v = fetch_all(&manifest, &template, &test_policy(2, 2)).unwrap();
    assert_eq!(v.voxels(), source.voxels());
    assert_eq!(server.hits(&flaky), 3);
}

#[test]
fn unreachable_host_fails_after_retries() {
    // Reserved TEST-NET-1 address; connections fail fast or time out.
    let spec = spec_2x2x2();
    let template = format!("http://127.0.0.1:1{}", PATH_TEMPLATE);
    let policy = FetchPolicy {
        parallelism: 1,
        max_retries: 1,
        backoff_base: Duration::from_millis(1),
        timeout: Duration::from_millis(500),
    };
    let err = fetch_chunk(&spec, &template, &policy).unwrap_err();
    assert!(
        matches!(err, IngestError::FetchFailed { attempts: 2, .. }),
        "{err}"
    );
}
