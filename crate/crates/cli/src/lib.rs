//! Spine reporting pipeline as file-composed stages.

pub mod config;
pub mod pipeline;

pub use config::PipelineConfig;
pub use pipeline::Layout;

/// Worker count from `SPINEREPORT_THREADS`, else the available cores.
pub fn worker_threads() -> anyhow::Result<usize> {
    match std::env::var("SPINEREPORT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => anyhow::bail!("SPINEREPORT_THREADS must be a positive integer, got {v:?}"),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}
