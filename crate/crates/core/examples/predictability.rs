//! Per-mode predictability of null coefficients from measurements, and the
//! prior-based and sample-based linear predictors of those coefficients.

use gsnr::gmrf::{per_mode_predictability, sample_gmrf, GmrfPrior};
use gsnr::predictor::{r2_score, train_ridge, wiener_predictor};
use gsnr::spectral::eig_dense_null;
use gsnr::{GraphLaplacian, ImageShape, LinearMap, OperatorSpec, Result, Topology};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let shape = ImageShape::gray(16, 16)?;
    let h = LinearMap::build(&OperatorSpec::hadamard_ratio(shape, 0.25), shape)?;
    let l = GraphLaplacian::for_shape(Topology::Grid4NN, shape)?;
    let sigma2 = 0.05;
    let p = 16;
    let basis = eig_dense_null(&h, &l, p)?;
    let prior = GmrfPrior::new(&l, 1.0, 0.01)?;

    let report = per_mode_predictability(&prior, &h, &basis, sigma2)?;
    println!("{:>3} {:>10} {:>8} {:>8}", "j", "mu", "rho2", "bound");
    for j in 0..report.len() {
        println!("{:>3} {:>10.5} {:>8.4} {:>8.4}", j + 1, report.mu[j], report.rho2[j], report.bound[j]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pairs = |count, seed| -> Result<Vec<_>> {
        sample_gmrf(&prior, shape, count, seed)?
            .into_iter()
            .map(|x| Ok((h.measure(&x.data, sigma2, &mut rng)?.data, x)))
            .collect()
    };
    let train = pairs(2000, 10)?;
    let test = pairs(500, 11)?;
    let ys: Vec<_> = train.iter().map(|(y, _)| y.clone()).collect();
    let targets = train.iter().map(|(_, x)| basis.project(&x.data)).collect::<Result<Vec<_>>>()?;
    let ridge = train_ridge(&ys, &targets, None)?;
    let wiener = wiener_predictor(&prior, &h, &basis, sigma2)?;
    println!("test R2: wiener {:.4}, ridge {:.4}", r2_score(&wiener, &basis, &test)?, r2_score(&ridge, &basis, &test)?);
    Ok(())
}
