//! `ldpcstore`: command-line entry point.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | internal error |
//! | 2 | usage error |
//! | 3 | file or network I/O error |
//! | 4 | not decodable |
//! | 5 | file not found in the store |
//! | 6 | too many upload failures |
//! | 7 | seeds unreachable / bind failure |
//! | 8 | invalid config, graph or chunk format |
//! | 9 | size limit exceeded |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use ldpc_store::availability::{curves_to_csv, emit_failure_curves, exact_graph_availability, CurveConfig};
use ldpc_store::client::{decode_benchmark, Client, ClientConfig, ClientError, HttpTransport};
use ldpc_store::codec::{default_graph, encode, evaluate_graph, peel_decode, search_best_graph, CodecError, SearchConfig, TannerGraph};
use ldpc_store::config::{ConfigError, ConfigFile};
use ldpc_store::node::{chunk_len, serve, ChunkHeader, NodeConfig, NodeError, HEADER_LEN};
use ldpc_store::simharness::{run_sim, SimConfig, SimError};

#[derive(Parser)]
#[command(name = "ldpcstore", version, about = "Distributed file storage over small LDPC erasure codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search random graphs for the best (n, m) code.
    Gencode {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 200_000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.4)]
        p_min: f64,
        #[arg(long, default_value_t = 0.6)]
        p_max: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print the metrics of a graph file.
    Evalcode {
        graph: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, requires = "mu")]
        exact_availability: bool,
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Write failure-probability curves as CSV.
    Curves {
        /// 1: replication vs stretch factor; 4: codes of fixed rate vs n.
        #[arg(long, value_parser = ["1", "4"])]
        fig: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Split and encode a file into chunk files.
    Encode {
        file: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Rebuild a file from a directory of chunk files.
    Decode {
        dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Chunk indices to ignore, e.g. 0,5,12.
        #[arg(long, value_delimiter = ',')]
        drop: Vec<usize>,
    },
    /// Run a storage node.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Store a local file.
    Put {
        local: PathBuf,
        name: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// Fetch a stored file.
    Get {
        name: String,
        local: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the host list obtained from the seeds.
    Hosts {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a simulation and write its report.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Benchmarks.
    Bench {
        #[command(subcommand)]
        what: Bench,
    },
}

#[derive(Subcommand)]
enum Bench {
    /// Read throughput with data chunks withheld.
    Decode {
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        missing: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        graph: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Failure {
        Failure { code, msg: msg.into() }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(3, format!("{}: {e}", path.display()))
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        let code = match e {
            CodecError::NotDecodable { .. } => 4,
            CodecError::SizeLimitExceeded { .. } => 9,
            CodecError::InvalidParameter(_) => 2,
            CodecError::InvalidGraph(_) | CodecError::Parse { .. } | CodecError::InvalidBlockSet(_) => 8,
            CodecError::BlockCount { .. } | CodecError::LengthMismatch { .. } => 8,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = if matches!(e, ConfigError::Io { .. }) { 3 } else { 8 };
        Failure::new(code, e.to_string())
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let code = match &e {
            ClientError::NotDecodable { .. } => 4,
            ClientError::NotFound(_) => 5,
            ClientError::TooManyUploadFailures { .. } => 6,
            ClientError::AllSeedsUnreachable | ClientError::EmptyHostList => 7,
            ClientError::Io { .. } => 3,
            ClientError::Codec(CodecError::SizeLimitExceeded { .. }) => 9,
            ClientError::Codec(CodecError::InvalidParameter(_)) => 2,
            ClientError::Codec(_) | ClientError::Placement(_) | ClientError::Config(_) => 8,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<NodeError> for Failure {
    fn from(e: NodeError) -> Self {
        let code = match &e {
            NodeError::Io { .. } => 3,
            NodeError::Bind { .. } => 7,
            NodeError::BadChunk(_) | NodeError::Config(_) | NodeError::Membership(_) => 8,
            NodeError::NotFound(_) => 5,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            other => Failure::new(8, other.to_string()),
        }
    }
}

fn load_graph(path: Option<&Path>) -> Result<TannerGraph, Failure> {
    match path {
        None => Ok(default_graph()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
            text.parse().map_err(|e: CodecError| Failure::new(8, format!("{}: {e}", p.display())))
        }
    }
}

fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

/// Config file plus the directory relative paths in it are resolved against.
fn load_config(path: &Path) -> Result<(ConfigFile, PathBuf), Failure> {
    let cfg = ConfigFile::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn client_from(path: &Path) -> Result<Client<HttpTransport>, Failure> {
    let (file, base) = load_config(path)?;
    let mut cfg = ClientConfig::from_config(&file)?;
    cfg.manifest_dir = cfg.manifest_dir.map(|d| base.join(d));
    let graph = load_graph(cfg.graph_file.as_ref().map(|g| base.join(g)).as_deref())?;
    let transport = HttpTransport { timeout: cfg.timeout };
    Ok(Client::connect(transport, graph, cfg)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gencode { n, m, budget, seed, p_min, p_max, samples, output } => {
            let cfg = SearchConfig { p_min, p_max, final_samples: samples, ..SearchConfig::new(n, m, budget, seed) };
            let start = Instant::now();
            let (graph, metrics) = search_best_graph(&cfg)?;
            let text = format!(
                "# search_best_graph n={n} m={m} p in ({p_min}, {p_max}) budget {budget} seed {seed}\n\
                 # f_max_blocks = {}, f_avg = {:.4} +- {:.4} ({} samples)\n{}",
                metrics.f_max_blocks,
                metrics.f_avg,
                metrics.f_avg_err,
                metrics.samples,
                graph.to_text()
            );
            std::fs::write(&output, text).map_err(|e| io_failure(&output, e))?;
            println!("f_max_blocks = {}", metrics.f_max_blocks);
            println!("f_max = {:.4}", metrics.f_max(n));
            println!("f_avg = {:.4} ± {:.4}", metrics.f_avg, metrics.f_avg_err);
            println!("fingerprint = {:016x}", graph.fingerprint());
            println!("elapsed = {:.1} s", start.elapsed().as_secs_f64());
        }
        Command::Evalcode { graph, samples, seed, exact_availability, mu } => {
            let g = load_graph(Some(&graph))?;
            let metrics = evaluate_graph(&g, samples, seed)?;
            println!("n = {}", g.n());
            println!("m = {}", g.m());
            println!("edges = {}", g.edge_count());
            println!("f_max_blocks = {}", metrics.f_max_blocks);
            println!("f_max = {:.4}", metrics.f_max(g.n()));
            println!("f_avg = {:.4} ± {:.4} ({} samples)", metrics.f_avg, metrics.f_avg_err, metrics.samples);
            println!("fingerprint = {:016x}", g.fingerprint());
            if exact_availability {
                let mu = mu.expect("clap enforces --mu");
                let a = exact_graph_availability(&g, mu).map_err(|e| Failure::new(9, e.to_string()))?;
                println!("exact_availability(mu={mu}) = {a:.12}");
                println!("exact_failure(mu={mu}) = {:.6e}", 1.0 - a);
            }
        }
        Command::Curves { fig, output } => {
            let cfg = if fig == "1" { CurveConfig::stretch() } else { CurveConfig::rate() };
            let rows = emit_failure_curves(&cfg).map_err(|e| Failure::new(1, e.to_string()))?;
            std::fs::write(&output, curves_to_csv(&rows)).map_err(|e| io_failure(&output, e))?;
            println!("{} rows written to {}", rows.len(), output.display());
        }
        Command::Encode { file, graph, output } => {
            let g = load_graph(graph.as_deref())?;
            let data = std::fs::read(&file).map_err(|e| io_failure(&file, e))?;
            let name = file
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Failure::new(2, format!("{} has no usable file name", file.display())))?;
            let len = chunk_len(data.len() as u64, g.n()) as usize;
            let blocks: Vec<Vec<u8>> = (0..g.n())
                .map(|i| {
                    let mut b = data[(i * len).min(data.len())..((i + 1) * len).min(data.len())].to_vec();
                    b.resize(len, 0);
                    b
                })
                .collect();
            let coding = encode(&g, &blocks)?;
            std::fs::create_dir_all(&output).map_err(|e| io_failure(&output, e))?;
            let header = ChunkHeader {
                file_size: data.len() as u64,
                n: g.n() as u32,
                m: g.m() as u32,
                index: 0,
                graph_fp: g.fingerprint(),
            };
            for (i, payload) in blocks.iter().chain(&coding).enumerate() {
                let path = output.join(format!("{name}.{i}"));
                let bytes = [header.with_index(i).to_bytes().as_slice(), payload].concat();
                std::fs::write(&path, bytes).map_err(|e| io_failure(&path, e))?;
            }
            println!("{} chunks of {len} bytes written to {}", g.total_blocks(), output.display());
            println!("sha256 = {}", sha256_hex(&data));
        }
        Command::Decode { dir, output, graph, drop } => {
            let g = load_graph(graph.as_deref())?;
            let entries = std::fs::read_dir(&dir).map_err(|e| io_failure(&dir, e))?;
            let mut chunks: BTreeMap<usize, (ChunkHeader, Vec<u8>)> = BTreeMap::new();
            for entry in entries {
                let path = entry.map_err(|e| io_failure(&dir, e))?.path();
                if !path.is_file() {
                    continue;
                }
                let bytes = std::fs::read(&path).map_err(|e| io_failure(&path, e))?;
                let Ok(h) = ChunkHeader::validate_chunk(&bytes) else {
                    log::warn!("skipping {}: not a chunk", path.display());
                    continue;
                };
                if h.graph_fp != g.fingerprint() || h.n as usize != g.n() || h.m as usize != g.m() {
                    return Err(Failure::new(8, format!("{} was encoded with another graph", path.display())));
                }
                if let Some((other, _)) = chunks.get(&(h.index as usize)) {
                    if !other.same_file(&h) {
                        return Err(Failure::new(8, format!("{} holds chunks of more than one file", dir.display())));
                    }
                }
                chunks.insert(h.index as usize, (h, bytes));
            }
            if let Some(&bad) = drop.iter().find(|&&i| i >= g.total_blocks()) {
                return Err(Failure::new(2, format!("--drop index {bad} out of range 0..{}", g.total_blocks())));
            }
            for i in &drop {
                chunks.remove(i);
            }
            let Some(file_size) = chunks.values().next().map(|(h, _)| h.file_size) else {
                return Err(Failure::new(4, "no chunks left to decode"));
            };
            if chunks.values().any(|(h, _)| h.file_size != file_size) {
                return Err(Failure::new(8, "chunks disagree on the file size"));
            }
            let have: BTreeMap<usize, Vec<u8>> = chunks.into_iter().map(|(i, (_, b))| (i, b[HEADER_LEN..].to_vec())).collect();
            let decoded = peel_decode(&g, have)?;
            let mut data: Vec<u8> = decoded.data.concat();
            data.truncate(file_size as usize);
            std::fs::write(&output, &data).map_err(|e| io_failure(&output, e))?;
            println!("xors = {}", decoded.xors);
            println!("sha256 = {}", sha256_hex(&data));
        }
        Command::Serve { config } => {
            let (file, base) = load_config(&config)?;
            let mut cfg = NodeConfig::from_config(&file)?;
            cfg.data_dir = base.join(&cfg.data_dir);
            cfg.graph_file = cfg.graph_file.map(|g| base.join(g));
            let node = serve(cfg)?;
            println!("listening on {}", node.address());
            node.wait();
        }
        Command::Put { local, name, config } => {
            let mut client = client_from(&config)?;
            let manifest = client.put_file(&local, &name)?;
            println!("stored {}/{} chunks", manifest.stored(), manifest.chunks.len());
            if !manifest.discarded().is_empty() {
                println!("discarded {:?}", manifest.discarded());
            }
        }
        Command::Get { name, local, config } => {
            let mut client = client_from(&config)?;
            let stats = client.get_file(&name, &local)?;
            let data = std::fs::read(&local).map_err(|e| io_failure(&local, e))?;
            println!("fetched chunks {:?}", stats.fetched);
            println!("xors = {}", stats.xors);
            println!("sha256 = {}", sha256_hex(&data));
        }
        Command::Hosts { config } => {
            let client = client_from(&config)?;
            print!("{}", client.hosts().to_text());
        }
        Command::Simulate { config, output } => {
            let (file, base) = load_config(&config)?;
            let cfg = SimConfig::from_config(&file, &base)?;
            let report = run_sim(&cfg)?;
            report.write_to(&output).map_err(|e| io_failure(&output, e))?;
            print!("{}", report.summary());
        }
        Command::Bench { what: Bench::Decode { size, missing, trials, seed, graph } } => {
            let g = load_graph(graph.as_deref())?;
            let r = decode_benchmark(size, &g, missing, trials, seed)?;
            println!("size = {} bytes", r.file_size);
            println!("missing = {}", r.missing);
            println!("trials = {}", r.trials);
            println!("mean = {:.6} s", r.mean_secs);
            println!("rate = {:.2} MB/s", r.rate_mb_s);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
