use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ebtree_auditnet::audit::{Failure, Verdict};
use ebtree_auditnet::client::{push_manifest, request_audit, Client, FileSession};
use ebtree_auditnet::server::{DATA_DIR_ENV, DEFAULT_DATA_DIR};
use ebtree_auditnet::service::{serve, Handler, ADDR_ENV, DEFAULT_PORT};
use ebtree_auditnet::wire::ManifestPush;
use ebtree_auditnet::{Error as NetError, Server, Tpa};
use ebtree_cli::bench::{self, BenchConfig, Impl, Size};
use ebtree_core::baselines::key_exhaustion_demo;
use ebtree_core::filepipe::{canonical_json, new_file_id, FileId, FileKey, FileManifest, DEFAULT_BLOCK_SIZE};
use ebtree_core::versionstore::VersionedTree;
use ebtree_core::{Seed, DEFAULT_MIN_DEGREE};
use serde_json::json;

const TOKEN_ENV: &str = "EBTREE_TOKEN";
const DEFAULT_TPA_PORT: u16 = 7475;

#[derive(Parser)]
#[command(name = "ebtree", version, about = "Auditable block storage on an authenticated B-tree")]
struct Cli {
    /// Storage server address.
    #[arg(long, global = true, env = ADDR_ENV, default_value_t = format!("127.0.0.1:{DEFAULT_PORT}"))]
    addr: String,
    /// Server-side data directory (serve, versions, verify-chain).
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = DEFAULT_DATA_DIR)]
    data_dir: PathBuf,
    /// Owner token; defaults to the contents of FILE.token, created on upload.
    #[arg(long, global = true, env = TOKEN_ENV, hide_env_values = true)]
    token: Option<String>,
    /// Audit seed file (default FILE.seed).
    #[arg(long, global = true)]
    seed_file: Option<PathBuf>,
    /// Encryption key file (default FILE.key).
    #[arg(long, global = true)]
    key_file: Option<PathBuf>,
    /// Print canonical JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Server,
    Tpa,
}

#[derive(Args)]
struct TpaOpt {
    /// Auditor address; without it the audit runs in-process.
    #[arg(long)]
    tpa: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a storage server or a third-party auditor.
    Serve {
        #[arg(long, value_enum, default_value = "server")]
        role: Role,
        /// Listen address (server: --addr, auditor: 127.0.0.1:7475).
        #[arg(long)]
        listen: Option<String>,
    },
    /// Encrypt, chunk and upload FILE; writes FILE.manifest.json.
    Upload {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
        block_size: usize,
        #[arg(short = 't', long, default_value_t = DEFAULT_MIN_DEGREE)]
        min_degree: usize,
        #[command(flatten)]
        tpa: TpaOpt,
    },
    /// Fetch, verify and decrypt the block at RANK.
    Get {
        file: PathBuf,
        rank: u64,
        /// Write the block here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Insert BLOCKFILE so it becomes rank RANK.
    Insert {
        file: PathBuf,
        rank: u64,
        block_file: PathBuf,
        #[command(flatten)]
        tpa: TpaOpt,
    },
    /// Delete the block at RANK.
    Delete {
        file: PathBuf,
        rank: u64,
        #[command(flatten)]
        tpa: TpaOpt,
    },
    /// Replace the block at RANK with BLOCKFILE.
    Update {
        file: PathBuf,
        rank: u64,
        block_file: PathBuf,
        #[command(flatten)]
        tpa: TpaOpt,
    },
    /// Challenge the server for K random ranks and verify the proofs.
    Audit {
        file: PathBuf,
        #[arg(short, default_value_t = ebtree_auditnet::audit::DEFAULT_K)]
        k: u32,
        #[command(flatten)]
        tpa: TpaOpt,
    },
    /// List the stored versions of FILE (manifest path or hex file id).
    Versions { file: String },
    /// Re-verify the commit chain and every historical root of FILE.
    VerifyChain { file: String },
    /// Time EB-tree and Merkle tree operations; prints CSV.
    Bench {
        #[arg(long = "impl", value_delimiter = ',', default_values_t = Impl::ALL.map(|i| i.to_string()))]
        impls: Vec<String>,
        /// Byte sizes (64MB, 1GB) or block counts.
        #[arg(long, value_delimiter = ',', default_values_t = ["32MB".to_string(), "64MB".to_string()])]
        sizes: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
        block_size: usize,
        #[arg(short = 't', default_value_t = DEFAULT_MIN_DEGREE)]
        t: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
    },
    /// Count the inserts that exhaust the integer keys strictly between LO and HI.
    DemoExhaustion { lo: i64, hi: i64 },
    /// Flip one stored byte of the block at RANK (fault injection).
    #[command(hide = true)]
    Corrupt {
        file: String,
        rank: u64,
        #[arg(long, default_value_t = 0)]
        byte: usize,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl From<ebtree_core::Error> for CliError {
    fn from(e: ebtree_core::Error) -> Self {
        CliError::Net(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use ebtree_core::Error as Core;
        match self {
            CliError::Usage(_) => 2,
            CliError::Net(NetError::Verification(_)) => 1,
            CliError::Net(NetError::Core(Core::Integrity(_) | Core::Corrupt(_))) => 1,
            CliError::Net(NetError::Core(_)) => 2,
            CliError::Net(NetError::Transport(_)) => 3,
            CliError::Net(NetError::Remote { .. } | NetError::Protocol(_)) => 4,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn verdict_code(v: &Verdict) -> u8 {
    match v {
        Verdict::Pass { .. } => 0,
        Verdict::Fail(Failure::Transport { .. }) => 3,
        Verdict::Fail(Failure::Server { .. }) => 4,
        Verdict::Fail(_) => 1,
    }
}

fn sidecar(file: &Path, ext: &str) -> PathBuf {
    let mut name = file.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

fn manifest_path(file: &Path) -> PathBuf {
    sidecar(file, "manifest.json")
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    Ok(String::from_utf8_lossy(&read(path)?).trim().to_owned())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

struct Ctx {
    addr: String,
    data_dir: PathBuf,
    token: Option<String>,
    seed_file: Option<PathBuf>,
    key_file: Option<PathBuf>,
    json: bool,
}

impl Ctx {
    fn seed_path(&self, file: &Path) -> PathBuf {
        self.seed_file.clone().unwrap_or_else(|| sidecar(file, "seed"))
    }

    fn key_path(&self, file: &Path) -> PathBuf {
        self.key_file.clone().unwrap_or_else(|| sidecar(file, "key"))
    }

    fn token(&self, file: &Path, create: bool) -> Result<String> {
        if let Some(t) = &self.token {
            return Ok(t.clone());
        }
        let path = sidecar(file, "token");
        if !path.exists() && create {
            write(&path, hex::encode(rand::random::<[u8; 16]>()))?;
        }
        if !path.exists() {
            return Err(CliError::Usage(format!("no token: pass --token or create {}", path.display())));
        }
        read_text(&path)
    }

    fn client(&self, file: &Path) -> Result<Client> {
        Ok(Client::connect(&self.addr, self.token(file, false)?)?)
    }

    fn session(&self, file: &Path) -> Result<FileSession> {
        let mp = manifest_path(file);
        if !mp.exists() {
            return Err(CliError::Usage(format!("{} not found; upload the file first", mp.display())));
        }
        Ok(FileSession {
            manifest: FileManifest::load(&mp)?,
            key: FileKey::from_hex(&read_text(&self.key_path(file))?)?,
            seed: Seed::from_hex(&read_text(&self.seed_path(file))?)?,
        })
    }

    /// Resolves a manifest path or a 32-digit hex file id to a stored name.
    fn stored_name(&self, file: &str) -> Result<String> {
        let mp = manifest_path(Path::new(file));
        if mp.exists() {
            return Ok(FileManifest::load(&mp)?.file_id_hex());
        }
        if Path::new(file).extension().is_some_and(|e| e == "json") && Path::new(file).exists() {
            return Ok(FileManifest::load(Path::new(file))?.file_id_hex());
        }
        match hex::decode(file) {
            Ok(b) if b.len() == 16 => Ok(file.to_ascii_lowercase()),
            _ => Err(CliError::Usage(format!("{file} is neither an uploaded file nor a hex file id"))),
        }
    }

    fn emit(&self, text: impl std::fmt::Display, value: serde_json::Value) {
        if self.json {
            println!("{}", canonical_json(&value));
        } else {
            println!("{text}");
        }
    }
}

fn load_or_create<T>(path: &Path, parse: impl Fn(&str) -> ebtree_core::Result<T>, make: impl Fn() -> T, hex: impl Fn(&T) -> String) -> Result<T> {
    if path.exists() {
        return Ok(parse(&read_text(path)?)?);
    }
    let v = make();
    write(path, hex(&v))?;
    Ok(v)
}

fn save_and_publish(file: &Path, s: &FileSession, tpa: &TpaOpt) -> Result<()> {
    s.manifest.save(&manifest_path(file))?;
    if let Some(addr) = &tpa.tpa {
        push_manifest(addr, &s.manifest, Some(&s.seed))?;
    }
    Ok(())
}

fn ack_json(a: &ebtree_auditnet::wire::Ack) -> serde_json::Value {
    json!({
        "fileId": hex::encode(a.file_id),
        "version": a.version,
        "rootDigest": a.root_digest.to_hex(),
        "commit": a.commit.to_hex(),
        "blockCount": a.block_count,
    })
}

fn mutate(ctx: &Ctx, file: &Path, tpa: &TpaOpt, op: impl FnOnce(&mut FileSession, &mut Client) -> std::result::Result<ebtree_auditnet::wire::Ack, NetError>) -> Result<u8> {
    let mut s = ctx.session(file)?;
    let mut client = ctx.client(file)?;
    let res = op(&mut s, &mut client);
    // The op counter may have advanced even when the server said no.
    s.manifest.save(&manifest_path(file))?;
    let ack = res?;
    save_and_publish(file, &s, tpa)?;
    ctx.emit(
        format_args!("version={} blocks={} root={}", ack.version, ack.block_count, ack.root_digest),
        ack_json(&ack),
    );
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    let ctx = Ctx {
        addr: cli.addr,
        data_dir: cli.data_dir,
        token: cli.token,
        seed_file: cli.seed_file,
        key_file: cli.key_file,
        json: cli.json,
    };
    match cli.cmd {
        Cmd::Serve { role, listen } => {
            let (listen, handler): (String, Arc<dyn Handler>) = match role {
                Role::Server => (listen.unwrap_or(ctx.addr.clone()), Arc::new(Server::new(&ctx.data_dir)?)),
                Role::Tpa => (
                    listen.unwrap_or(format!("127.0.0.1:{DEFAULT_TPA_PORT}")),
                    Arc::new(Tpa::with_dir(ctx.addr.clone(), &ctx.data_dir)?),
                ),
            };
            let listener =
                TcpListener::bind(&listen).map_err(|e| NetError::Transport(format!("cannot listen on {listen}: {e}")))?;
            let bound = listener.local_addr().map_err(|e| NetError::Transport(e.to_string()))?;
            ctx.emit(format_args!("listening on {bound}"), json!({ "listening": bound.to_string() }));
            serve(listener, handler, Arc::new(AtomicBool::new(false)))
                .map_err(|e| NetError::Transport(e.to_string()))?;
            Ok(0)
        }
        Cmd::Upload { file, block_size, min_degree, tpa } => {
            let data = read(&file)?;
            let key = load_or_create(&ctx.key_path(&file), FileKey::from_hex, FileKey::generate, FileKey::to_hex)?;
            let seed = load_or_create(&ctx.seed_path(&file), Seed::from_hex, Seed::generate, Seed::to_hex)?;
            let token = ctx.token(&file, true)?;
            let mut client = Client::connect(&ctx.addr, token)?;
            let s = FileSession::upload(&mut client, new_file_id(), &data, block_size, min_degree, key, seed)?;
            save_and_publish(&file, &s, &tpa)?;
            let m = &s.manifest;
            ctx.emit(
                format_args!("uploaded {} blocks={} root={}", m.file_id_hex(), m.block_count, m.root_digest),
                serde_json::from_str(&m.to_canonical_json()).expect("manifest JSON"),
            );
            Ok(0)
        }
        Cmd::Get { file, rank, out } => {
            let s = ctx.session(&file)?;
            let block = s.get(&mut ctx.client(&file)?, rank)?;
            match out {
                Some(p) => write(&p, &block)?,
                None if ctx.json => ctx.emit("", json!({ "rank": rank, "block": hex::encode(&block) })),
                None => {
                    use std::io::Write;
                    std::io::stdout().write_all(&block).map_err(|e| CliError::Usage(e.to_string()))?;
                }
            }
            Ok(0)
        }
        Cmd::Insert { file, rank, block_file, tpa } => {
            let block = read(&block_file)?;
            mutate(&ctx, &file, &tpa, |s, c| s.insert(c, rank, &block))
        }
        Cmd::Update { file, rank, block_file, tpa } => {
            let block = read(&block_file)?;
            mutate(&ctx, &file, &tpa, |s, c| s.update(c, rank, &block))
        }
        Cmd::Delete { file, rank, tpa } => mutate(&ctx, &file, &tpa, |s, c| s.delete(c, rank)),
        Cmd::Audit { file, k, tpa } => {
            let s = ctx.session(&file)?;
            let verdict = match &tpa.tpa {
                Some(addr) => {
                    push_manifest(addr, &s.manifest, Some(&s.seed))?;
                    request_audit(addr, s.file_id(), k)?
                }
                None => {
                    let local = Tpa::new(ctx.addr.clone());
                    local.accept_manifest(ManifestPush { manifest: s.manifest.clone(), seed: Some(s.seed.to_hex()) })?;
                    local.run_audit(&s.file_id(), k)?
                }
            };
            ctx.emit(&verdict, serde_json::to_value(&verdict).expect("verdict JSON"));
            Ok(verdict_code(&verdict))
        }
        Cmd::Versions { file } => {
            let vt = VersionedTree::open(&ctx.data_dir, &ctx.stored_name(&file)?)?;
            let records = vt.records();
            if ctx.json {
                let rows: Vec<_> = records
                    .iter()
                    .map(|r| {
                        json!({
                            "version": r.version,
                            "rootDigest": r.root_digest.to_hex(),
                            "commit": r.commit.to_hex(),
                            "op": r.op.to_string(),
                        })
                    })
                    .collect();
                ctx.emit("", json!(rows));
            } else {
                for r in &records {
                    println!("{} {} {} {}", r.version, r.op, r.root_digest, r.commit);
                }
            }
            Ok(0)
        }
        Cmd::VerifyChain { file } => {
            let vt = VersionedTree::open(&ctx.data_dir, &ctx.stored_name(&file)?)?;
            let head = vt.latest();
            match vt.verify_history() {
                Ok(()) => {
                    ctx.emit(
                        format_args!("OK versions={} head={}", head.version + 1, head.commit),
                        json!({ "ok": true, "versions": head.version + 1, "head": head.commit.to_hex() }),
                    );
                    Ok(0)
                }
                Err(b) => {
                    ctx.emit(
                        format_args!("BROKEN version={} {}", b.version, b.reason),
                        json!({ "ok": false, "version": b.version, "reason": b.reason }),
                    );
                    Ok(1)
                }
            }
        }
        Cmd::Bench { impls, sizes, block_size, t, trials, warmup } => {
            let impls = impls.iter().map(|s| s.parse::<Impl>()).collect::<std::result::Result<Vec<_>, _>>();
            let sizes = sizes.iter().map(|s| s.parse::<Size>()).collect::<std::result::Result<Vec<_>, _>>();
            let (impls, sizes) = (impls.map_err(CliError::Usage)?, sizes.map_err(CliError::Usage)?);
            if block_size == 0 || trials == 0 || t < 2 {
                return Err(CliError::Usage("block size, trials and t must be positive (t >= 2)".into()));
            }
            let cfg = BenchConfig { impls, sizes, block_size, t, trials, warmup, ..BenchConfig::default() };
            let rows = bench::run(&cfg);
            print!("{}", bench::to_csv(&rows));
            for r in &rows {
                eprintln!("{},{},{} sd_ms={:.4}", r.metric, r.imp, r.blocks, r.samples.sd());
            }
            Ok(0)
        }
        Cmd::DemoExhaustion { lo, hi } => {
            let steps = key_exhaustion_demo(lo, hi).map_err(|e| CliError::Usage(e.to_string()))?;
            ctx.emit(
                format_args!("{steps}"),
                json!({ "lo": lo, "hi": hi, "freeKeys": hi - lo - 1, "steps": steps }),
            );
            Ok(0)
        }
        Cmd::Corrupt { file, rank, byte } => {
            let name = ctx.stored_name(&file)?;
            let id: FileId = hex::decode(&name).expect("hex id").try_into().expect("16 bytes");
            Server::new(&ctx.data_dir)?.corrupt_block(&id, rank, byte)?;
            ctx.emit(format_args!("corrupted rank {rank} of {name}"), json!({ "fileId": name, "rank": rank }));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("ebtree: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
