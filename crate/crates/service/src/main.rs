use std::path::PathBuf;

use boneforge_service::{Catalog, AppState, ServerConfig};
use clap::Parser;

/// Serve rig editing sessions over HTTP and WebSocket.
#[derive(Parser)]
#[command(name = "boneforge-serve", version)]
struct Args {
    /// Address to bind
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Port to listen on (0 picks a free port)
    #[arg(long, default_value_t = 8765)]
    port: u16,
    /// Directory of rigs laid out as `boneforge synth` writes them, one per subdirectory
    #[arg(long, value_name = "DIR")]
    rigs: Option<PathBuf>,
    /// Skip the built-in synthetic rigs
    #[arg(long)]
    no_builtin: bool,
    /// Allowed CORS origin (repeatable; any origin when omitted)
    #[arg(long = "cors-origin", value_name = "ORIGIN")]
    cors_origins: Vec<String>,
    /// Undo stack depth per session
    #[arg(long, default_value_t = boneforge_service::session::DEFAULT_MAX_UNDO)]
    max_undo: usize,
    /// Seed for synthetic rigs, child initialization and retarget sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BONEFORGE_LOG", "info")).init();
    let args = Args::parse();
    let mut catalog = if args.no_builtin {
        Catalog::default()
    } else {
        Catalog::builtin(args.seed).unwrap_or_else(|e| fail(&format!("building synthetic rigs: {e}")))
    };
    if let Some(dir) = &args.rigs {
        match catalog.load_dir(dir) {
            Ok(n) => log::info!("loaded {n} rigs from {}", dir.display()),
            Err(e) => fail(&format!("{}: {e}", dir.display())),
        }
    }
    let config = ServerConfig { max_undo: args.max_undo, seed: args.seed, cors_origins: args.cors_origins };
    let state = AppState::new(catalog, config);
    let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
        .await
        .unwrap_or_else(|e| fail(&format!("bind {}:{}: {e}", args.host, args.port)));
    log::info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    if let Err(e) = boneforge_service::serve(listener, state).await {
        fail(&e.to_string());
    }
}

fn fail(msg: &str) -> ! {
    eprintln!("boneforge-serve: {msg}");
    std::process::exit(2);
}
