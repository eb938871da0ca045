use clap::{Parser, ValueEnum};
use componerf_stub::{router, StubConfig, StubMode};

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    PerfectDenoiser,
    FixedVector,
    Echo,
}

/// Deterministic guidance service stub.
#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8077")]
    bind: String,
    #[arg(long, value_enum, default_value = "perfect-denoiser")]
    mode: Mode,
    /// Per-channel constant for `fixed-vector`, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    vector: Vec<f32>,
    #[arg(long, default_value_t = 4)]
    channels: usize,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let args = Args::parse();
    let mode = match args.mode {
        Mode::PerfectDenoiser => StubMode::PerfectDenoiser,
        Mode::FixedVector => StubMode::FixedVector(args.vector),
        Mode::Echo => StubMode::Echo,
    };
    let cfg = StubConfig { mode, channels: args.channels, ..StubConfig::default() };
    let listener = tokio::net::TcpListener::bind(&args.bind).await?;
    eprintln!("stub listening on {}", listener.local_addr()?);
    axum::serve(listener, router(cfg)).await
}
