//! Command-line entry point. Exit codes: 0 success, 1 operational error,
//! 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use vnode_core::engine::{wire, MockEngine};
use vnode_core::ledger::{block_json, frame_count, read_block, verify_chain_bytes};
use vnode_core::storage::StoreLayout;
use vnode_core::{Mode, Node, NodeConfig};

use crate::bench::{self, BenchOptions, LangPair};
use crate::client::Client;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vnode", version, about = "Multilingual voice social network node")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create an empty store (records, blobs, ledger with genesis block).
    Init {
        #[arg(long, env = "VNODE_DATA_DIR")]
        data_dir: PathBuf,
    },
    /// Run the node's HTTP API until interrupted.
    Serve(ServeArgs),
    /// Offline ledger inspection; reads the chain file without modifying it.
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
    /// Talk to a running node over HTTP.
    Client(ClientArgs),
    /// Drive full post/translate cycles against a running node and report
    /// stage latencies.
    Bench {
        #[arg(long, env = "VNODE_SERVER", default_value = "http://127.0.0.1:8080")]
        server: String,
        /// Number of post cycles.
        #[arg(long, default_value_t = 10)]
        posts: usize,
        /// Language pair `src:dst`; repeat to rotate through several.
        #[arg(long = "pair", default_value = "eng:fra")]
        pairs: Vec<LangPair>,
        /// Seconds of audio per generated post.
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..=60))]
        seconds: u32,
        /// Write raw samples as CSV (stage,duration_ms,at).
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Serve the deterministic mock engine over the engine plugin protocol
    /// on standard input/output.
    EngineMock,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Configuration file (`key = value` lines); VNODE_* variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    bind: Option<SocketAddr>,
}

#[derive(Debug, Subcommand)]
pub enum LedgerCommand {
    /// Re-verify the persisted chain; prints a JSON report, exits 0 iff ok.
    Verify {
        #[arg(long, env = "VNODE_DATA_DIR")]
        data_dir: PathBuf,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
    },
    /// Print one block as JSON, exactly as the HTTP API serves it.
    Show {
        #[arg(long, env = "VNODE_DATA_DIR")]
        data_dir: PathBuf,
        #[arg(long)]
        height: u64,
    },
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    #[arg(long, global = true, env = "VNODE_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
    /// Session token from `client login`.
    #[arg(long, global = true, env = "VNODE_TOKEN")]
    token: Option<String>,
    #[command(subcommand)]
    command: ClientCommand,
}

#[derive(Debug, Subcommand)]
pub enum ClientCommand {
    /// Create an account.
    Register {
        #[arg(long)]
        username: String,
        #[arg(long)]
        password: String,
        #[arg(long, default_value = "eng")]
        lang: String,
    },
    /// Start a session; prints the session (including its token).
    Login {
        #[arg(long)]
        username: String,
        #[arg(long)]
        password: String,
    },
    /// Follow another user.
    Follow {
        #[arg(long)]
        username: String,
    },
    /// Upload a voice post.
    Post {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        lang: Option<String>,
    },
    /// Print a page of the timeline.
    Timeline {
        #[arg(long)]
        cursor: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        lang: Option<String>,
    },
    /// Print the ledger transactions behind a post.
    Tx {
        #[arg(long)]
        post: String,
        #[arg(long)]
        lang: Option<String>,
    },
}

type CliResult = Result<i32, String>;

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    match execute(cli.command) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            EXIT_FAILURE
        }
    }
}

fn execute(command: Command) -> CliResult {
    match command {
        Command::Init { data_dir } => init(data_dir),
        Command::Serve(args) => serve(args),
        Command::Ledger { command: LedgerCommand::Verify { data_dir, from, to } } => ledger_verify(&data_dir, from, to),
        Command::Ledger { command: LedgerCommand::Show { data_dir, height } } => ledger_show(&data_dir, height),
        Command::Client(args) => client(args),
        Command::Bench { server, posts, pairs, seconds, dump } => {
            run_bench(&server, BenchOptions { posts, pairs, wav_seconds: seconds }, dump.as_deref())
        }
        Command::EngineMock => {
            let engine = MockEngine::new();
            wire::serve(&engine, std::io::stdin().lock(), std::io::stdout().lock()).map_err(|e| e.to_string())?;
            Ok(EXIT_OK)
        }
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<(), String> {
    println!("{}", serde_json::to_string_pretty(value).map_err(|e| e.to_string())?);
    Ok(())
}

fn init(data_dir: PathBuf) -> CliResult {
    let config = NodeConfig::load(None).map_err(|e| e.to_string())?;
    let node = Node::open(NodeConfig { data_dir: data_dir.clone(), ..config }).map_err(|e| e.to_string())?;
    let genesis = node.ledger().block(0).ok_or("ledger has no genesis block")?;
    eprintln!("initialized store at {}", data_dir.display());
    print_json(&serde_json::json!({
        "data_dir": data_dir,
        "blocks": node.ledger().block_count(),
        "genesis_hash": hex::encode(genesis.hash()),
    }))?;
    Ok(EXIT_OK)
}

fn serve(args: ServeArgs) -> CliResult {
    let mut config = NodeConfig::load(args.config.as_deref()).map_err(|e| e.to_string())?;
    if let Some(d) = args.data_dir {
        config.data_dir = d;
    }
    if let Some(b) = args.bind {
        config.bind_addr = b;
    }
    config.validate().map_err(|e| e.to_string())?;
    let bind = config.bind_addr;
    let node = Arc::new(Node::open(config).map_err(|e| e.to_string())?);
    if node.config().mode == Mode::Emergency {
        log::info!("emergency mode: no outbound connections will be made");
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| format!("cannot bind {bind}: {e}"))?;
        let local = listener.local_addr().map_err(|e| e.to_string())?;
        eprintln!("listening on {local}");
        crate::api::serve(node, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
    })?;
    Ok(EXIT_OK)
}

fn read_chain(data_dir: &Path) -> Result<Vec<u8>, String> {
    let path = StoreLayout::new(data_dir).chain();
    std::fs::read(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn ledger_verify(data_dir: &Path, from: Option<u64>, to: Option<u64>) -> CliResult {
    let bytes = read_chain(data_dir)?;
    let range = match (from, to) {
        (None, None) => None,
        (f, t) => Some((f.unwrap_or(0), t.unwrap_or_else(|| frame_count(&bytes).saturating_sub(1)))),
    };
    let report = verify_chain_bytes(&bytes, range).map_err(|e| e.to_string())?;
    print_json(&report)?;
    eprintln!("{}", report.summary());
    Ok(if report.ok { EXIT_OK } else { EXIT_FAILURE })
}

fn ledger_show(data_dir: &Path, height: u64) -> CliResult {
    let bytes = read_chain(data_dir)?;
    let block = read_block(&bytes, height).map_err(|e| e.to_string())?;
    // Exactly the HTTP body: no trailing newline.
    let mut out = std::io::stdout().lock();
    out.write_all(block_json(&block).as_bytes()).and_then(|_| out.flush()).map_err(|e| e.to_string())?;
    Ok(EXIT_OK)
}

fn client(args: ClientArgs) -> CliResult {
    let mut c = Client::new(&args.server).map_err(|e| e.to_string())?.with_token(args.token);
    let value = match args.command {
        ClientCommand::Register { username, password, lang } => c.register(&username, &password, &lang),
        ClientCommand::Login { username, password } => c.login(&username, &password),
        ClientCommand::Follow { username } => c.follow(&username),
        ClientCommand::Post { wav, lang } => {
            let bytes = std::fs::read(&wav).map_err(|e| format!("cannot read {}: {e}", wav.display()))?;
            c.post(bytes, lang.as_deref())
        }
        ClientCommand::Timeline { cursor, limit, lang } => c.timeline(cursor.as_deref(), limit, lang.as_deref()),
        ClientCommand::Tx { post, lang } => c.post_tx(&post, lang.as_deref()),
    }
    .map_err(|e| e.to_string())?;
    print_json(&value)?;
    Ok(EXIT_OK)
}

fn run_bench(server: &str, options: BenchOptions, dump: Option<&Path>) -> CliResult {
    let outcome = bench::run(server, &options).map_err(|e| e.to_string())?;
    if let Some(path) = dump {
        bench::write_dump(path, &outcome.samples).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    eprint!("{}", bench::reference_table(&outcome.report));
    if outcome.failures > 0 {
        eprintln!("{} of {} cycles failed", outcome.failures, outcome.cycles);
    }
    print_json(&outcome)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_tree_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["vnode", "client", "post"]), EXIT_USAGE);
        assert_eq!(run(["vnode", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["vnode", "bench", "--pair", "eng"]), EXIT_USAGE);
        assert_eq!(run(["vnode", "--help"]), EXIT_OK);
    }

    #[test]
    fn verify_and_show_on_fresh_store() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d");
        let d = data.to_str().unwrap();
        assert_eq!(run(["vnode", "init", "--data-dir", d]), EXIT_OK);
        assert_eq!(run(["vnode", "ledger", "verify", "--data-dir", d]), EXIT_OK);
        assert_eq!(run(["vnode", "ledger", "show", "--data-dir", d, "--height", "0"]), EXIT_OK);
        assert_eq!(run(["vnode", "ledger", "show", "--data-dir", d, "--height", "9"]), EXIT_FAILURE);
    }
}
