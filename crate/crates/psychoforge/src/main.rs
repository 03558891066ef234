use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use psychoforge::manifest::{read_manifest, PackageMeta, PACKAGE_FILE};
use psychoforge::registry::{HandlerTable, Registry};
use psychoforge::report::{analyze, AnalyzeOptions, Section};
use psychoforge::service::{self, AppState, ServiceConfig, DEFAULT_PORT};

const EXIT_PORT_IN_USE: u8 = 4;
const EXIT_BAD_MANIFEST: u8 = 5;

#[derive(Parser)]
#[command(name = "psychoforge", version, about = "Psychometric item analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run analyses headless and write JSON documents plus report.md.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        metadata: Option<PathBuf>,
        /// Comma-separated: classical, regression, irt, dif, cat. Default: all
        /// sections whose inputs are present.
        #[arg(long, value_delimiter = ',')]
        sections: Vec<Section>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, env = "PSYCHOFORGE_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Module search path, separated like PATH.
        #[arg(long, env = "PSYCHOFORGE_MODULE_ROOTS")]
        module_roots: Option<String>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Per-request analysis timeout in seconds.
        #[arg(long, default_value_t = 120)]
        timeout: u64,
    },
    /// Inspect modules.
    Modules {
        #[command(subcommand)]
        command: ModulesCommand,
    },
}

#[derive(Subcommand)]
enum ModulesCommand {
    /// List discovered modules by category.
    List {
        #[arg(long, env = "PSYCHOFORGE_MODULE_ROOTS")]
        module_roots: Option<String>,
    },
    /// Check one manifest file.
    Validate { manifest: PathBuf },
}

fn roots(s: &Option<String>) -> Vec<PathBuf> {
    s.as_deref().map(service::split_roots).unwrap_or_default()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Analyze {
            data,
            metadata,
            sections,
            out,
            seed,
        } => {
            let opts = AnalyzeOptions {
                data,
                metadata,
                sections,
                out,
                seed,
            };
            match analyze(&opts) {
                Ok(files) => {
                    for f in files {
                        println!("{}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Serve {
            port,
            module_roots,
            host,
            timeout,
        } => serve(&host, port, roots(&module_roots), timeout),
        Command::Modules {
            command: ModulesCommand::List { module_roots },
        } => {
            let reg = Registry::discover(&roots(&module_roots), &HandlerTable::builtin());
            for d in reg.diagnostics() {
                eprintln!("{:?}: {}: {}", d.severity, d.source, d.message);
            }
            println!("{:<24} {:<28} {:<10} note", "id", "category", "available");
            for (category, modules) in reg.categories() {
                for m in modules {
                    println!(
                        "{:<24} {:<28} {:<10} {}",
                        m.manifest.id,
                        category,
                        m.available,
                        m.diagnostic.as_deref().unwrap_or("")
                    );
                }
            }
            ExitCode::SUCCESS
        }
        Command::Modules {
            command: ModulesCommand::Validate { manifest },
        } => validate(&manifest),
    }
}

fn validate(path: &std::path::Path) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(EXIT_BAD_MANIFEST);
        }
    };
    let dir = path.parent().unwrap_or(std::path::Path::new("."));
    let package = std::fs::read_to_string(dir.join(PACKAGE_FILE))
        .ok()
        .and_then(|m| PackageMeta::parse(&m).name().map(str::to_string))
        .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "package".into());
    match read_manifest(&text, &package, &path.display().to_string()) {
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_BAD_MANIFEST)
        }
        Ok(report) => {
            for p in &report.problems {
                eprintln!("{p}");
            }
            for m in &report.modules {
                println!("{} -> {}", m.id, psychoforge::manifest::route_category(&m.category));
            }
            if report.has_errors() {
                ExitCode::from(EXIT_BAD_MANIFEST)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}

fn serve(host: &str, port: u16, module_roots: Vec<PathBuf>, timeout: u64) -> ExitCode {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    rt.block_on(async move {
        let listener = match tokio::net::TcpListener::bind((host, port)).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("error: cannot bind {host}:{port}: {e}");
                return if e.kind() == std::io::ErrorKind::AddrInUse {
                    ExitCode::from(EXIT_PORT_IN_USE)
                } else {
                    ExitCode::FAILURE
                };
            }
        };
        let state = Arc::new(AppState::new(ServiceConfig {
            module_roots,
            timeout: std::time::Duration::from_secs(timeout),
        }));
        for m in state.registry().modules() {
            log::info!(
                "module {} ({}) available={}",
                m.manifest.id,
                m.routed_category,
                m.available
            );
        }
        log::info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        };
        match service::serve(listener, state, shutdown).await {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        }
    })
}
