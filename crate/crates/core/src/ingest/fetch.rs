//! HTTP chunk fetching with bounded parallelism and retry/backoff.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;

use super::{cutout_url, ChunkManifest, CutoutSpec, IngestError};
use crate::volume::Volume3D;

/// Knobs for [`fetch_chunk`] and [`fetch_all`].
///
/// Retries apply only to transient failures (timeouts, connection errors,
/// 5xx). A 4xx response and a wrong-sized payload are permanent: the
/// request reached a server that gave a definitive answer. Before retry
/// `n` (1-based) the worker sleeps `backoff_base * 2^(n-1)`.
#[derive(Clone, Debug)]
pub struct FetchPolicy {
    /// Maximum in-flight requests in [`fetch_all`].
    pub parallelism: usize,
    /// Extra attempts per chunk after the first.
    pub max_retries: u32,
    /// First retry delay; doubles each retry.
    pub backoff_base: Duration,
    /// Per-request timeout.
    pub timeout: Duration,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self {
            parallelism: 4,
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            timeout: Duration::from_secs(30),
        }
    }
}

impl FetchPolicy {
    fn validate(&self) -> Result<(), IngestError> {
        if self.parallelism < 1 {
            return Err(IngestError::InvalidParameter(
                "parallelism must be >= 1".into(),
            ));
        }
        if self.backoff_base.is_zero() {
            return Err(IngestError::InvalidParameter(
                "backoff base must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn build_client(policy: &FetchPolicy) -> Result<Client, IngestError> {
    Client::builder()
        .timeout(policy.timeout)
        .connect_timeout(policy.timeout)
        .build()
        .map_err(|e| IngestError::ClientSetup(e.to_string()))
}

fn backoff_delay(base: Duration, retry_index: u32) -> Duration {
    base.saturating_mul(1u32 << retry_index.min(20))
}

/// Fetch one cutout: GET on the templated URL, expecting exactly
/// `extent.volume_count()` raw payload bytes.
pub fn fetch_chunk(
    spec: &CutoutSpec,
    template: &str,
    policy: &FetchPolicy,
) -> Result<Volume3D, IngestError> {
    policy.validate()?;
    let client = build_client(policy)?;
    fetch_chunk_with_client(&client, spec, template, policy)
}

fn fetch_chunk_with_client(
    client: &Client,
    spec: &CutoutSpec,
    template: &str,
    policy: &FetchPolicy,
) -> Result<Volume3D, IngestError> {
    let url = cutout_url(spec, template)?;
    let expected = spec.extent.volume_count();
    let attempts = policy.max_retries + 1;
    let mut last_error = String::new();

    for attempt in 0..attempts {
        if attempt > 0 {
            thread::sleep(backoff_delay(policy.backoff_base, attempt - 1));
        }
        match client.get(&url).send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    match resp.bytes() {
                        Ok(body) => {
                            if body.len() as u64 != expected {
                                return Err(IngestError::PayloadSize {
                                    chunk_id: spec.chunk_id,
                                    expected,
                                    got: body.len() as u64,
                                });
                            }
                            return Ok(Volume3D::from_voxels(spec.extent, body.to_vec())?);
                        }
                        // Body cut short mid-transfer; same class as a
                        // connection error.
                        Err(e) => last_error = format!("reading body: {e}"),
                    }
                } else if status.is_client_error() {
                    return Err(IngestError::HttpStatus {
                        chunk_id: spec.chunk_id,
                        status: status.as_u16(),
                    });
                } else {
                    last_error = format!("http status {status}");
                }
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Err(IngestError::FetchFailed {
        chunk_id: spec.chunk_id,
        attempts,
        last_error,
    })
}

/// Fetch every chunk of a manifest and assemble the source volume.
///
/// At most `policy.parallelism` requests are in flight; workers claim
/// chunks from a shared cursor and each chunk lands in a disjoint region
/// of the output, so the assembled bytes do not depend on completion
/// order or parallelism degree. All chunks are attempted even after a
/// failure; if any failed, the whole operation fails (no partial volume)
/// and the error names every failed chunk.
pub fn fetch_all(
    manifest: &ChunkManifest,
    template: &str,
    policy: &FetchPolicy,
) -> Result<Volume3D, IngestError> {
    policy.validate()?;
    let entries = manifest.entries();
    // Surface template errors before any network traffic.
    cutout_url(&entries[0], template)?;
    let client = build_client(policy)?;

    let mut out = Volume3D::constant(manifest.source_extent(), 0)?;
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<Volume3D, IngestError>)>();
    let workers = policy.parallelism.min(entries.len());
    let mut failures: Vec<(u64, String)> = Vec::new();

    thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let client = &client;
            let policy = &policy;
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= entries.len() {
                    break;
                }
                let result = fetch_chunk_with_client(client, &entries[i], template, policy);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, result) in rx {
            match result {
                Ok(chunk) => {
                    if let Err(e) = out.write_subvolume(&chunk) {
                        failures.push((entries[i].chunk_id, e.to_string()));
                    }
                }
                Err(e) => failures.push((entries[i].chunk_id, e.to_string())),
            }
        }
    });

    if !failures.is_empty() {
        failures.sort_by_key(|(id, _)| *id);
        return Err(IngestError::AssemblyFailed { failures });
    }
    Ok(out)
}
