//! `emvox` — command-line pipeline over the emvox library:
//! plan -> fetch -> convert -> sobel -> magnitude -> binarize ->
//! graph-build -> graph-stats / dot / components / slice-export.
//!
//! Every subcommand is a thin shim over one library operation. Outputs
//! are written atomically (staged, then renamed); progress and errors go
//! to stderr; stats commands print one JSON object to stdout. Exit codes:
//! 0 success, 1 operational error, 2 usage error.

mod atomic;

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use emvox::gradient::{self, NormOrder};
use emvox::graph::{self, CompactGraph, Connectivity};
use emvox::ingest::{self, FetchPolicy, DEFAULT_CUTOUT_TEMPLATE};
use emvox::volume::{pgm, raw, Extent3D, FloatVolume3D, Volume3D};

use atomic::{atomic_dir_files, atomic_outputs};

/// Marker for errors that should exit with the usage code (2).
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for UsageError {}

fn usage_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn parse_norm_order(s: &str) -> Result<NormOrder, String> {
    s.parse()
}

fn parse_finite(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad number {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s} is not finite"))
    }
}

fn parse_positive_seconds(s: &str) -> Result<f64, String> {
    let v = parse_finite(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("must be positive".into())
    }
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    let n: u32 = s.parse().map_err(|_| format!("bad connectivity {s:?}"))?;
    Connectivity::from_count(n).map_err(|e| e.to_string())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolarityArg {
    Above,
    Below,
}

impl From<PolarityArg> for gradient::Polarity {
    fn from(p: PolarityArg) -> Self {
        match p {
            PolarityArg::Above => gradient::Polarity::Above,
            PolarityArg::Below => gradient::Polarity::Below,
        }
    }
}

/// Required half-open extent bounds.
#[derive(Args, Clone, Copy)]
struct ExtentArgs {
    #[arg(long)]
    x0: u64,
    #[arg(long)]
    x1: u64,
    #[arg(long)]
    y0: u64,
    #[arg(long)]
    y1: u64,
    #[arg(long)]
    z0: u64,
    #[arg(long)]
    z1: u64,
}

impl ExtentArgs {
    fn to_extent(self) -> Result<Extent3D> {
        Extent3D::new(self.x0, self.x1, self.y0, self.y1, self.z0, self.z1)
            .map_err(|e| usage_error(e.to_string()))
    }
}

/// Extent bounds that are only needed on some paths of a subcommand.
#[derive(Args, Clone, Copy)]
struct OptionalExtentArgs {
    #[arg(long)]
    x0: Option<u64>,
    #[arg(long)]
    x1: Option<u64>,
    #[arg(long)]
    y0: Option<u64>,
    #[arg(long)]
    y1: Option<u64>,
    #[arg(long)]
    z0: Option<u64>,
    #[arg(long)]
    z1: Option<u64>,
}

impl OptionalExtentArgs {
    fn to_extent(self) -> Result<Option<Extent3D>> {
        match (self.x0, self.x1, self.y0, self.y1, self.z0, self.z1) {
            (Some(x0), Some(x1), Some(y0), Some(y1), Some(z0), Some(z1)) => {
                Ok(Some(Extent3D::new(x0, x1, y0, y1, z0, z1).map_err(|e| {
                    usage_error(e.to_string())
                })?))
            }
            (None, None, None, None, None, None) => Ok(None),
            _ => Err(usage_error(
                "extent bounds must be given completely (--x0 --x1 --y0 --y1 --z0 --z1) or not at all",
            )),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "emvox",
    version,
    about = "EM volume ingest, 3D Sobel gradients, and compact graph analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition an extent into z-slab cutouts and write a TSV manifest.
    Plan {
        /// Dataset token, e.g. kasthuri11.
        #[arg(long)]
        token: String,
        /// Resolution level.
        #[arg(long, default_value_t = 1)]
        res: u32,
        #[command(flatten)]
        extent: ExtentArgs,
        /// z-slices per chunk.
        #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
        slab: u64,
        /// Manifest file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fetch every chunk of a manifest and assemble a raw volume.
    Fetch {
        #[arg(long)]
        manifest: PathBuf,
        /// Output .raw volume (a .json sidecar is written next to it).
        #[arg(long)]
        out: PathBuf,
        /// Cutout URL template; must contain {token},{res},{x0},{x1},{y0},{y1},{z0},{z1}.
        #[arg(long, default_value = DEFAULT_CUTOUT_TEMPLATE)]
        template: String,
        /// Maximum in-flight requests.
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
        parallelism: u64,
        /// Retries per chunk after the first attempt.
        #[arg(long, default_value_t = 3)]
        retries: u32,
        /// First retry delay in seconds; doubles per retry.
        #[arg(long, default_value_t = 0.5, value_parser = parse_positive_seconds)]
        backoff: f64,
        /// Per-request timeout in seconds.
        #[arg(long, default_value_t = 30.0, value_parser = parse_positive_seconds)]
        timeout: f64,
    },
    /// Convert a .raw volume to a PGM slice stack, or a stack back to raw.
    Convert {
        /// A .raw volume file, or a directory of slice_NNNN.pgm files.
        #[arg(long, value_name = "FILE|DIR")]
        input: PathBuf,
        /// Output directory (raw -> PGM) or .raw file (PGM -> raw).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        extent: OptionalExtentArgs,
    },
    /// Apply the 3D Sobel operator; writes an i64x3 gradient field.
    Sobel {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce a gradient field to per-voxel L_p magnitudes (f64 volume).
    Magnitude {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Norm order: a number >= 1, or "inf".
        #[arg(long, default_value = "2", value_parser = parse_norm_order)]
        p: NormOrder,
    },
    /// Threshold at mean + k*sigma into a 0/255 mask volume.
    Binarize {
        /// Gradient field (i64x3), magnitude volume (f64), or u8 volume.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Norm order applied first when the input is a gradient field.
        #[arg(long, default_value = "2", value_parser = parse_norm_order)]
        p: NormOrder,
        /// Threshold multiplier on sigma.
        #[arg(long, default_value_t = 1.0, value_parser = parse_finite)]
        k: f64,
        #[arg(long, value_enum, default_value_t = PolarityArg::Above)]
        polarity: PolarityArg,
    },
    /// Build the voxel adjacency graph of a mask volume (nonzero = foreground).
    GraphBuild {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Neighborhood stencil: 6, 18, or 26.
        #[arg(long, default_value = "6", value_parser = parse_connectivity)]
        connectivity: Connectivity,
    },
    /// Print topology statistics of a graph file as one JSON object.
    GraphStats {
        #[arg(long)]
        input: PathBuf,
    },
    /// Print the common-neighbor count of two vertices as one JSON object.
    Dot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        u: u64,
        #[arg(long)]
        v: u64,
    },
    /// Label connected components; prints a JSON summary.
    Components {
        #[arg(long)]
        input: PathBuf,
        /// Optional TSV output: vertex_id <TAB> component_id.
        #[arg(long)]
        labels_out: Option<PathBuf>,
    },
    /// Export one z-slice of a raw volume as a binary PGM image.
    SliceExport {
        #[arg(long)]
        input: PathBuf,
        /// Absolute z index within the volume's extent.
        #[arg(long)]
        z: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_volume_atomic(out: &Path, v: &Volume3D) -> Result<()> {
    atomic_outputs(&[out.to_path_buf(), raw::sidecar_path(out)], |staged| {
        raw::write_raw(v, &staged[0])?;
        Ok(())
    })
}

fn write_float_atomic(out: &Path, v: &FloatVolume3D) -> Result<()> {
    atomic_outputs(&[out.to_path_buf(), raw::sidecar_path(out)], |staged| {
        raw::write_raw_f64(v, &staged[0])?;
        Ok(())
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Plan {
            token,
            res,
            extent,
            slab,
            out,
        } => {
            let e = extent.to_extent()?;
            let m = ingest::plan_chunks(&token, res, e, slab)?;
            atomic_outputs(std::slice::from_ref(&out), |staged| {
                ingest::write_manifest(&m, &staged[0])?;
                Ok(())
            })?;
            eprintln!("planned {} chunk(s) covering {e} -> {}", m.len(), out.display());
        }

        Command::Fetch {
            manifest,
            out,
            template,
            parallelism,
            retries,
            backoff,
            timeout,
        } => {
            let m = ingest::read_manifest(&manifest)?;
            let policy = FetchPolicy {
                parallelism: parallelism as usize,
                max_retries: retries,
                backoff_base: Duration::from_secs_f64(backoff),
                timeout: Duration::from_secs_f64(timeout),
            };
            eprintln!(
                "fetching {} chunk(s) of {} at parallelism {}",
                m.len(),
                m.source_extent(),
                policy.parallelism
            );
            let v = ingest::fetch_all(&m, &template, &policy)?;
            write_volume_atomic(&out, &v)?;
            eprintln!(
                "assembled {} voxel(s) -> {}",
                v.extent().volume_count(),
                out.display()
            );
        }

        Command::Convert { input, out, extent } => {
            if input.is_dir() {
                let e = extent.to_extent()?.ok_or_else(|| {
                    usage_error("converting a PGM stack to raw requires the extent flags")
                })?;
                let v = pgm::read_pgm_stack(&input, e)?;
                write_volume_atomic(&out, &v)?;
                eprintln!("read {} slice(s) -> {}", e.dz(), out.display());
            } else if input.extension().is_some_and(|x| x == "raw") {
                let v = raw::read_raw(&input)?;
                let paths = atomic_dir_files(&out, |stage| Ok(pgm::write_pgm_stack(&v, stage)?))?;
                eprintln!("wrote {} slice(s) -> {}", paths.len(), out.display());
            } else {
                return Err(usage_error(
                    "input must be a .raw volume file or a directory of PGM slices",
                ));
            }
        }

        Command::Sobel { input, out } => {
            let v = raw::read_raw(&input)?;
            let g = gradient::gradient(&v);
            atomic_outputs(&[out.to_path_buf(), raw::sidecar_path(&out)], |staged| {
                gradient::write_gradient(&g, &staged[0])?;
                Ok(())
            })?;
            eprintln!("gradient field over {} -> {}", v.extent(), out.display());
        }

        Command::Magnitude { input, out, p } => {
            let g = gradient::read_gradient(&input)?;
            let m = gradient::magnitude_lp(&g, p)?;
            write_float_atomic(&out, &m)?;
            eprintln!("L_{p} magnitude over {} -> {}", m.extent(), out.display());
        }

        Command::Binarize {
            input,
            out,
            p,
            k,
            polarity,
        } => {
            let sidecar = raw::read_sidecar(&input)?;
            let m: FloatVolume3D = match sidecar.dtype.as_str() {
                raw::DTYPE_I64X3 => {
                    gradient::magnitude_lp(&gradient::read_gradient(&input)?, p)?
                }
                raw::DTYPE_F64 => raw::read_raw_f64(&input)?,
                raw::DTYPE_U8 => {
                    let v = raw::read_raw(&input)?;
                    FloatVolume3D::from_values(
                        v.extent(),
                        v.voxels().iter().map(|&b| b as f64).collect(),
                    )?
                }
                other => anyhow::bail!(
                    "{}: cannot binarize dtype \"{other}\"",
                    input.display()
                ),
            };
            let b = gradient::binarize(&m, k, polarity.into());
            let foreground = b.foreground_count();
            write_volume_atomic(&out, &b.to_volume(255, 0))?;
            eprintln!(
                "threshold mean + {k}*sigma: {foreground} foreground voxel(s) -> {}",
                out.display()
            );
        }

        Command::GraphBuild {
            input,
            out,
            connectivity,
        } => {
            let v = raw::read_raw(&input)?;
            let b = gradient::BinaryVolume::from_volume(&v);
            let g = graph::build_from_binary_volume(&b, connectivity);
            atomic_outputs(std::slice::from_ref(&out), |staged| {
                g.save(&staged[0])?;
                Ok(())
            })?;
            eprintln!(
                "graph: {} vertex(es), {} edge slot(s) -> {}",
                g.vertex_count(),
                g.edge_slot_count(),
                out.display()
            );
        }

        Command::GraphStats { input } => {
            let g = CompactGraph::load(&input)?;
            let stats = serde_json::json!({
                "vertices": g.vertex_count(),
                "edge_slots": g.edge_slot_count(),
                "undirected_edges": g.edge_slot_count() / 2,
                "memory_slots": g.memory_footprint(),
                "has_node_props": g.node_props().is_some(),
                "has_edge_props": g.edge_props().is_some(),
            });
            println!("{stats}");
        }

        Command::Dot { input, u, v } => {
            let g = CompactGraph::load(&input)?;
            let d = g.dot_product(u, v)?;
            println!("{}", serde_json::json!({ "u": u, "v": v, "dot_product": d }));
        }

        Command::Components { input, labels_out } => {
            let g = CompactGraph::load(&input)?;
            let labeling = g.connected_components();
            if let Some(path) = labels_out {
                atomic_outputs(std::slice::from_ref(&path), |staged| {
                    let mut text = String::new();
                    for (i, &id) in g.vertex_ids().iter().enumerate() {
                        let _ = writeln!(text, "{id}\t{}", labeling.labels[i]);
                    }
                    std::fs::write(&staged[0], text)?;
                    Ok(())
                })?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "component_count": labeling.count,
                    "largest_component_size": labeling.largest_component_size(),
                })
            );
        }

        Command::SliceExport { input, z, out } => {
            let v = raw::read_raw(&input)?;
            let slice = v.extract_slice(z)?;
            atomic_outputs(std::slice::from_ref(&out), |staged| {
                pgm::write_pgm(&slice, &staged[0])?;
                Ok(())
            })?;
            eprintln!("slice z={z} ({}x{}) -> {}", slice.width, slice.height, out.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        let code = if e.downcast_ref::<UsageError>().is_some() {
            2
        } else {
            1
        };
        std::process::exit(code);
    }
}
