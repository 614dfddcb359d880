//! Paired reconstruction trials: plain PnP against GSNR with a graph basis
//! and with the identity basis, on 4x super-resolution.

use gsnr::experiment::trials::{run_trials, Arm, ReconstructionSetup};
use gsnr::{Result, Topology};

fn main() -> Result<()> {
    let trials = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let setup = ReconstructionSetup::default();
    let arms = [Arm::baseline(), Arm::gsnr(Topology::Grid4NN, 0.0), Arm::gsnr(Topology::Identity, 0.0)];
    let report = run_trials(&setup, &arms, trials, 42)?;
    println!("{} trials, p = {}", report.trials, report.p);
    for arm in &report.arms {
        println!("{:<16} mean PSNR {:>7.3} dB, plateau after {:>6.2} iterations", arm.name, arm.mean_psnr(), arm.mean_plateau());
    }
    if let Some(gaps) = report.paired_gaps("gsnr-Grid4NN", "baseline") {
        let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
        println!("smallest paired gain over baseline {min:.3} dB");
    }
    Ok(())
}
