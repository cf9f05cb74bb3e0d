use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use slidereport_rating::{serve, AppState, RatingStore, TOKEN_ENV};

use crate::error::{CliError, Result};

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Session journal directory.
    #[arg(long)]
    pub journal: PathBuf,
    /// Tiler output root for slide mosaics.
    #[arg(long)]
    pub patches: Option<PathBuf>,
}

/// Serves until ctrl-c. Requires `Authorization: Bearer <token>` when RATING_TOKEN is set.
pub fn run(args: ServeArgs) -> Result<()> {
    let store = RatingStore::open(&args.journal)?;
    let state = AppState {
        store: Arc::new(store),
        patches_root: args.patches,
        bearer_token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime
        .block_on(serve(SocketAddr::new(args.host, args.port), state))
        .map_err(|e| CliError::Io(format!("rating service: {e}")))
}
