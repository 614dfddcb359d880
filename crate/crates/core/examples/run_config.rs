//! Runs an experiment configuration file through the runner and lists its
//! artifacts. Usage: `run_config <config> <out-dir>`.

use std::path::PathBuf;

use gsnr::experiment::config::ExperimentConfig;
use gsnr::experiment::runner::run_experiment;
use gsnr::{Error, Result};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args.next().map(PathBuf::from).unwrap_or_else(|| "configs/spectrum.cfg".into());
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("gsnr-spectrum"));
    let cfg = ExperimentConfig::load(&config)?;
    let kind = cfg.kind.ok_or_else(|| Error::Config(format!("{} declares no kind", config.display())))?;
    let outcome = run_experiment(&cfg, kind, &out)?;
    println!("{kind} finished in {:.2} s", outcome.wall_seconds);
    for file in outcome.files {
        println!("  {}", out.join(file).display());
    }
    Ok(())
}
