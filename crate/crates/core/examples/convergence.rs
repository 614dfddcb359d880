//! Step size and contraction rate of the graph-regularized gradient scheme
//! with an identity denoiser, measured against the predicted rate.

use gsnr::linalg::gaussian_vector;
use gsnr::solver::{contraction_rate, quadratic_fixed_point, run_gsnr_pgd, spectral_step_size, GsnrProblem, SolverConfig, Step};
use gsnr::{GraphLaplacian, ImageShape, LinearMap, OperatorSpec, Result, Topology};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let shape = ImageShape::gray(16, 16)?;
    let h = LinearMap::build(&OperatorSpec::BlockAverageSr { factor: 4 }, shape)?;
    let l = GraphLaplacian::for_shape(Topology::Grid4NN, shape)?;
    let y = gaussian_vector(&mut ChaCha8Rng::seed_from_u64(3), h.m());
    println!("{:>6} {:>10} {:>10} {:>10} {:>10} {:>10}", "gg", "alpha*", "kappa", "kappa+", "rho*", "measured");
    for gamma_g in [0.0, 0.05, 0.1, 0.5] {
        let step = spectral_step_size(&h, &l, gamma_g, 0.0, 1)?;
        let measured = if step.singular {
            f64::NAN
        } else {
            let problem = GsnrProblem::new(&h, &l, y.clone())?;
            let cfg = SolverConfig { alpha: Step::Fixed(step.alpha_star), gamma: 0.0, gamma_g, iterations: 80, ..Default::default() };
            let xs = quadratic_fixed_point(&problem, &cfg)?;
            contraction_rate(&run_gsnr_pgd(&problem, &cfg, 0, None, Some(&xs))?)?.max_after_burn_in
        };
        println!(
            "{gamma_g:>6} {:>10.4} {:>10.3} {:>10.3} {:>10.4} {measured:>10.4}",
            step.alpha_star, step.kappa, step.positive_kappa, step.rho_star
        );
    }
    Ok(())
}
