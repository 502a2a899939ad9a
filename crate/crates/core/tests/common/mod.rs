//! Shared test support: a scriptable stub HTTP server and independent
//! reference implementations (oracles) for the operations under test.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use emvox::volume::{Extent3D, Volume3D};
use emvox::{Axis, SobelKernel3D};

// ---------------------------------------------------------------------------
// Stub HTTP server

/// One scripted reaction to a request.
#[derive(Clone)]
pub enum StubResponse {
    /// Respond with this status code and body.
    Status(u16, Vec<u8>),
    /// Accept the connection, then drop it without answering.
    Close,
}

#[derive(Default)]
struct Route {
    script: Vec<StubResponse>,
    hits: usize,
}

/// Minimal HTTP/1.1 server on an ephemeral local port. Each path carries
/// a response script consumed in request order; the final entry repeats
/// forever. Unscripted paths answer 404.
pub struct StubServer {
    base: String,
    stop: Arc<AtomicBool>,
    routes: Arc<Mutex<HashMap<String, Route>>>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind ephemeral port");
        listener.set_nonblocking(true).unwrap();
        let addr = listener.local_addr().unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let routes: Arc<Mutex<HashMap<String, Route>>> = Arc::default();

        let handle = {
            let stop = Arc::clone(&stop);
            let routes = Arc::clone(&routes);
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, _)) => handle_connection(stream, &routes),
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(1));
                        }
                        Err(_) => break,
                    }
                }
            })
        };

        StubServer {
            base: format!("http://{addr}"),
            stop,
            routes,
            handle: Some(handle),
        }
    }

    /// `http://127.0.0.1:<port>`
    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn route(&self, path: &str, script: Vec<StubResponse>) {
        self.routes
            .lock()
            .unwrap()
            .insert(path.to_owned(), Route { script, hits: 0 });
    }

    /// Requests seen on `path` so far.
    pub fn hits(&self, path: &str) -> usize {
        self.routes.lock().unwrap().get(path).map_or(0, |r| r.hits)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_connection(mut stream: TcpStream, routes: &Mutex<HashMap<String, Route>>) {
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok();
    let mut buf = Vec::new();
    let mut tmp = [0u8; 1024];
    while !buf.windows(4).any(|w| w == b"\r\n\r\n") {
        match stream.read(&mut tmp) {
            Ok(0) => break,
            Ok(n) => buf.extend_from_slice(&tmp[..n]),
            Err(_) => return,
        }
        if buf.len() > 64 * 1024 {
            break;
        }
    }
    let text = String::from_utf8_lossy(&buf);
    let path = text.split_whitespace().nth(1).unwrap_or("/").to_owned();

    let action = {
        let mut routes = routes.lock().unwrap();
        let route = routes.entry(path).or_default();
        route.hits += 1;
        if route.script.is_empty() {
            StubResponse::Status(404, b"no script for path".to_vec())
        } else if route.script.len() == 1 {
            route.script[0].clone()
        } else {
            route.script.remove(0)
        }
    };

    match action {
        StubResponse::Close => {} // dropping the stream resets the connection
        StubResponse::Status(code, body) => {
            let reason = match code {
                200 => "OK",
                404 => "Not Found",
                500 => "Internal Server Error",
                503 => "Service Unavailable",
                _ => "Stub",
            };
            let header = format!(
                "HTTP/1.1 {code} {reason}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                body.len()
            );
            let _ = stream.write_all(header.as_bytes());
            let _ = stream.write_all(&body);
            let _ = stream.flush();
        }
    }
}

/// Path shape used by the stub tests; prepend [`StubServer::base`] to get
/// the full template.
pub const PATH_TEMPLATE: &str = "/cutout/{token}/{res}/{x0},{x1}/{y0},{y1}/{z0},{z1}/";

/// Register every chunk of `manifest` to serve the matching bytes of
/// `source`, and return the full URL template for fetching.
pub fn serve_volume(
    server: &StubServer,
    manifest: &emvox::ChunkManifest,
    source: &Volume3D,
) -> String {
    for spec in manifest.entries() {
        let path = emvox::ingest::cutout_url(spec, PATH_TEMPLATE).unwrap();
        let body = source.subvolume(spec.extent).unwrap().into_voxels();
        server.route(&path, vec![StubResponse::Status(200, body)]);
    }
    format!("{}{}", server.base(), PATH_TEMPLATE)
}

// ---------------------------------------------------------------------------
// Oracles and fixtures

/// Naive seven-loop convolution with clamp-to-edge sampling; the
/// reference that `convolve3d` must match exactly.
pub fn convolve_reference(v: &Volume3D, k: &SobelKernel3D) -> Vec<i64> {
    let e = v.extent();
    let (nx, ny, nz) = (e.dx() as i64, e.dy() as i64, e.dz() as i64);
    let mut out = Vec::with_capacity(v.voxels().len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut acc = 0i64;
                for dz in -1..=1i64 {
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            let sx = (x + dx).clamp(0, nx - 1) as u64 + e.x0();
                            let sy = (y + dy).clamp(0, ny - 1) as u64 + e.y0();
                            let sz = (z + dz).clamp(0, nz - 1) as u64 + e.z0();
                            acc += k.weight(dz as i32, dy as i32, dx as i32)
                                * v.voxel(sx, sy, sz) as i64;
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Volume whose value is the coordinate along `axis` relative to the
/// extent origin.
pub fn ramp_volume(e: Extent3D, axis: Axis) -> Volume3D {
    let mut voxels = Vec::with_capacity(e.volume_count() as usize);
    for z in 0..e.dz() {
        for y in 0..e.dy() {
            for x in 0..e.dx() {
                let v = match axis {
                    Axis::X => x,
                    Axis::Y => y,
                    Axis::Z => z,
                };
                voxels.push(v as u8);
            }
        }
    }
    Volume3D::from_voxels(e, voxels).unwrap()
}

/// Uniformly random volume from a fixed seed.
pub fn random_volume(e: Extent3D, seed: u64) -> Volume3D {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let voxels = (0..e.volume_count()).map(|_| rng.random()).collect();
    Volume3D::from_voxels(e, voxels).unwrap()
}
