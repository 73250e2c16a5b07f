use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hcap_cli::bench::{self, BenchOptions, BenchResult, Exp4Config};
use hcap_cli::check::{self, CheckOptions, EXIT_BAD_INPUT, EXIT_VIOLATIONS};
use hcap_cli::config::{Config, TransportKind};
use hcap_cli::scenario::{self, Scenario};
use hcap_cli::CliError;
use hcap_core::auth::AuthServer;
use hcap_core::clock::{Clock, MonotoneClock};
use hcap_core::model::Mutation;
use hcap_core::resource::ResourceServer;
use hcap_core::sa::FragmentStrategy;
use hcap_core::service::{auth_router, rs_router, RemoteAuth, RemotePeer};
use hcap_core::transport::frame::DEFAULT_MTU;
use hcap_core::transport::{Codec, UdpServer, UdpTransport};

#[derive(Parser)]
#[command(name = "hcap", version, about = "History-based capabilities: servers, clients, model checking and experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Explore the protocol model of one automaton and check its invariants.
    ModelCheck {
        /// Automaton as JSON.
        #[arg(long)]
        sa: PathBuf,
        #[arg(long, default_value_t = 8)]
        depth: usize,
        #[arg(long, default_value = "full")]
        strategy: FragmentStrategy,
        /// Deliberately broken rule, to see the checker catch it.
        #[arg(long, value_enum, default_value = "none")]
        mutate: MutateArg,
        #[arg(long, default_value_t = CheckOptions::default().max_states)]
        max_states: usize,
        #[arg(long)]
        no_liveness: bool,
    },
    /// Run the authorization server over UDP.
    ServeAuth {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one resource server over UDP.
    ServeRs {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a scripted client session and compare against its expectations.
    Client {
        #[arg(long)]
        script: PathBuf,
    },
    /// Run an experiment and write its CSV results.
    Bench {
        #[arg(value_enum)]
        experiment: Experiment,
        #[command(flatten)]
        opts: BenchArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MutateArg {
    None,
    SkipReqtAppend,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
}

#[derive(Args)]
struct BenchArgs {
    /// Percentages of transitioning requests (exp1, exp4).
    #[arg(long, value_delimiter = ',', default_values_t = (0..=100).step_by(10).collect::<Vec<u64>>())]
    p: Vec<u64>,
    /// Automaton sizes (exp2).
    #[arg(long, value_delimiter = ',', default_values_t = (1..=15).collect::<Vec<u64>>())]
    n: Vec<u64>,
    /// Total transitioning requests before collection (exp3).
    #[arg(long, value_delimiter = ',', default_values_t = (1..=10).map(|i| i * 1_000).collect::<Vec<u64>>())]
    r: Vec<u64>,
    /// Requests per trial; defaults to 100, or 1000 for exp4.
    #[arg(long)]
    requests: Option<usize>,
    /// Concurrent sessions (exp3).
    #[arg(long, default_value_t = 100)]
    sessions: usize,
    /// Collection settings compared (exp4): no_gc_bc, gc<N>, bc.
    #[arg(long, value_delimiter = ',', default_values_t = Exp4Config::STANDARD.iter().map(Exp4Config::name).collect::<Vec<_>>())]
    configs: Vec<String>,
    /// Compare with and without baton compression (exp3); `off` or `on` runs one.
    #[arg(long, value_enum, default_value = "both")]
    compression: CompressionArg,
    #[arg(long, default_value_t = 30)]
    trials: usize,
    #[arg(long, default_value_t = 30)]
    min_trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "loopback")]
    transport: TransportArg,
    #[arg(long, default_value_t = DEFAULT_MTU)]
    mtu: usize,
    /// Directory for `<exp>_summary.csv`, `<exp>_trials.csv` and
    /// `<exp>_config.json`; without it the summary goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompressionArg {
    Off,
    On,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Loopback,
    Udp,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_BAD_INPUT
        }
    };
    ExitCode::from(code as u8)
}

fn run(cmd: Cmd) -> Result<i32, CliError> {
    match cmd {
        Cmd::ModelCheck { sa, depth, strategy, mutate, max_states, no_liveness } => {
            let m = check::load_automaton(&sa)?;
            let mutation = match mutate {
                MutateArg::None => Mutation::None,
                MutateArg::SkipReqtAppend => Mutation::SkipReqtAppend,
            };
            let opts = CheckOptions { depth, strategy, mutation, max_states, liveness: !no_liveness };
            let report = check::check(&m, opts)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(check::exit_code(&report))
        }
        Cmd::ServeAuth { config } => serve_auth(&Config::load(&config)?),
        Cmd::ServeRs { config } => serve_rs(&Config::load(&config)?),
        Cmd::Client { script } => {
            let s = Scenario::load(&script)?;
            let report = scenario::run(&s)?;
            for l in &report.log {
                println!("{:>3} {}", l.index, l.line);
            }
            if report.passed() {
                println!("ok: {} expectations met", report.expectations);
                Ok(0)
            } else {
                print!("{}", report.diff());
                println!("FAILED: {} of {} expectations", report.failures.len(), report.expectations);
                Ok(EXIT_VIOLATIONS)
            }
        }
        Cmd::Bench { experiment, opts } => run_bench(experiment, opts),
    }
}

fn udp_only(cfg: &Config) -> Result<(), CliError> {
    match cfg.transport.kind {
        TransportKind::Udp => Ok(()),
        TransportKind::Loopback => Err(CliError::Config("standalone servers need the udp transport".into())),
    }
}

fn serve_auth(cfg: &Config) -> Result<i32, CliError> {
    udp_only(cfg)?;
    let clock: Arc<dyn Clock> = Arc::new(MonotoneClock::default());
    let auth = Arc::new(AuthServer::new(cfg.mode, cfg.policies()?, cfg.all_keys()?, clock));
    let server = UdpServer::bind(&cfg.transport.bind, auth_router(auth), cfg.transport.mtu)
        .map_err(|e| CliError::Transport(e.to_string()))?;
    log::info!("authorization server ({:?} mode) on {}", cfg.mode, server.local_addr());
    server.join();
    Ok(0)
}

fn serve_rs(cfg: &Config) -> Result<i32, CliError> {
    udp_only(cfg)?;
    let rsid = cfg.rsid.clone().ok_or_else(|| CliError::Config("rsid is required".into()))?;
    let auth_addr = cfg.auth_addr.clone().ok_or_else(|| CliError::Config("auth_addr is required".into()))?;
    let clock: Arc<dyn Clock> = Arc::new(MonotoneClock::default());
    let net = Arc::new(UdpTransport::new(cfg.transport.mtu, Duration::from_secs(5)));
    let codec = Codec::Json;
    let link = RemoteAuth { net: net.clone(), addr: auth_addr, rsid: rsid.clone(), codec };
    let gc = cfg.gc.to_gc_config();
    let rs = Arc::new(ResourceServer::new(rsid.clone(), cfg.mode, cfg.key(&rsid)?, gc.clone(), clock, Arc::new(link)));
    for (peer, addr) in &cfg.peers {
        let link = RemotePeer { net: net.clone(), addr: addr.clone(), rsid: rsid.clone(), codec };
        rs.add_peer(peer.clone(), Arc::new(link));
    }
    let server = UdpServer::bind(&cfg.transport.bind, rs_router(rs.clone()), cfg.transport.mtu)
        .map_err(|e| CliError::Transport(e.to_string()))?;
    log::info!("resource server {rsid} on {}", server.local_addr());
    std::thread::spawn(move || {
        let poll = gc.interval.min(Duration::from_millis(100));
        let mut last = Instant::now();
        loop {
            std::thread::sleep(poll);
            if last.elapsed() < gc.interval && !rs.gc_due() {
                continue;
            }
            last = Instant::now();
            match rs.run_gc() {
                Ok(p) if !p.sessions.is_empty() => {
                    log::info!("collected {} entries from {} sessions", p.total_entries(), p.sessions.len())
                }
                Ok(_) => {}
                Err(d) => log::warn!("collection failed: {d}"),
            }
        }
    });
    server.join();
    Ok(0)
}

fn run_bench(exp: Experiment, a: BenchArgs) -> Result<i32, CliError> {
    let o = BenchOptions {
        trials: a.trials,
        min_trials: a.min_trials,
        seed: a.seed,
        transport: match a.transport {
            TransportArg::Loopback => TransportKind::Loopback,
            TransportArg::Udp => TransportKind::Udp,
        },
        mtu: a.mtu,
    };
    let requests = a.requests.unwrap_or(match exp {
        Experiment::Exp4 => 1000,
        _ => 100,
    });
    let (name, result) = match exp {
        Experiment::Exp1 => ("exp1", bench::exp1(&a.p, requests, &o)?),
        Experiment::Exp2 => ("exp2", bench::exp2(&a.n, requests, &o)?),
        Experiment::Exp3 => {
            let bc: &[bool] = match a.compression {
                CompressionArg::Off => &[false],
                CompressionArg::On => &[true],
                CompressionArg::Both => &[false, true],
            };
            ("exp3", bench::exp3(&a.r, a.sessions, bc, &o)?)
        }
        Experiment::Exp4 => {
            let configs = a.configs.iter().map(|c| Exp4Config::parse(c)).collect::<Result<Vec<_>, _>>()?;
            ("exp4", bench::exp4(&a.p, requests, &configs, &o)?)
        }
    };
    match &a.out {
        Some(dir) => write_outputs(dir, name, &result)?,
        None => result.write_summary(std::io::stdout()).map_err(|e| CliError::Bench(e.to_string()))?,
    }
    Ok(0)
}

fn write_outputs(dir: &Path, name: &str, r: &BenchResult) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_owned(), e))?;
    let create = |file: String| {
        let path = dir.join(file);
        fs::File::create(&path).map_err(|e| CliError::Io(path, e))
    };
    r.write_summary(create(format!("{name}_summary.csv"))?).map_err(|e| CliError::Bench(e.to_string()))?;
    r.write_trials(create(format!("{name}_trials.csv"))?).map_err(|e| CliError::Bench(e.to_string()))?;
    let cfg = serde_json::to_string_pretty(&r.config).expect("config serializes");
    let path = dir.join(format!("{name}_config.json"));
    fs::write(&path, cfg + "\n").map_err(|e| CliError::Io(path, e))?;
    log::info!("wrote {name} results to {}", dir.display());
    Ok(())
}
