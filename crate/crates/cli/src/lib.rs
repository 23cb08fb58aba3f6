//! Config-driven experiment runner. A run reads one TOML file, executes a
//! single pipeline and writes its artifacts and a `manifest.json` into a
//! fresh `<pipeline>_<UTC timestamp>` directory. Artifacts contain no
//! timestamps, so identical configs reproduce them byte for byte.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipelines;
pub mod svg;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, Pipeline};
pub use error::{CliError, Result};
pub use manifest::{diff_runs, DiffReport, Headline, Manifest};

/// Overrides the output directory from the config.
pub const OUTPUT_DIR_ENV: &str = "NLAP_OUTPUT_DIR";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Cap on the worker pool; all cores when absent.
    pub threads: Option<usize>,
    /// Takes precedence over the environment and the config.
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

fn fresh_run_dir(root: &Path, pipeline: Pipeline) -> Result<PathBuf> {
    std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{}_{stamp}", pipeline.name());
    for k in 0.. {
        let name = if k == 0 { base.clone() } else { format!("{base}_{k}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir, e)),
        }
    }
    unreachable!("run directory suffixes are unbounded")
}

/// Applies the overrides, then runs the pipeline.
pub fn run_config(mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &opts.output {
        cfg.output_dir = out.clone();
    } else if let Some(out) = std::env::var_os(OUTPUT_DIR_ENV) {
        cfg.output_dir = PathBuf::from(out);
    }
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = opts.threads {
            if t == 0 {
                return Err(CliError::Usage("--threads must be at least 1".into()));
            }
            b = b.num_threads(t);
        }
        b.build()
            .map_err(|e| CliError::Usage(format!("cannot build worker pool: {e}")))?
    };
    let dir = fresh_run_dir(&cfg.output_dir, cfg.pipeline)?;
    let out = pool.install(|| pipelines::execute(&cfg, &dir))?;
    let manifest = Manifest {
        pipeline: cfg.pipeline,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg,
        headline: out.headline,
        artifacts: out.artifacts,
    };
    manifest.write(&dir)?;
    Ok(RunSummary { dir, manifest })
}

pub fn run(config_path: &Path, opts: &RunOptions) -> Result<RunSummary> {
    run_config(ExperimentConfig::load(config_path)?, opts)
}

pub fn diff(a: &Path, b: &Path) -> Result<DiffReport> {
    diff_runs(&Manifest::load(a)?, &Manifest::load(b)?)
}
