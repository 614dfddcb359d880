//! Inexact forward operators `H + H_ξ`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linop::{LinearMap, OperatorSpec};
use crate::DENSE_CAP;

/// Default entrywise standard deviation of the perturbation.
pub const DEFAULT_XI_SIGMA: f64 = 0.005;

/// Entrywise Gaussian perturbation `H_ξ` with standard deviation `xi_sigma`.
pub fn perturbation_matrix(m: usize, n: usize, xi_sigma: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(xi_sigma >= 0.0 && xi_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("perturbation std must be nonnegative, got {xi_sigma}")));
    }
    if xi_sigma == 0.0 {
        return Ok(DMatrix::zeros(m, n));
    }
    let normal = Normal::new(0.0, xi_sigma).expect("valid std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DMatrix::from_fn(m, n, |_, _| normal.sample(&mut rng)))
}

/// `H + H_ξ` as an explicit dense operator; `xi_sigma = 0` returns `H` itself.
pub fn perturb_operator(h: &LinearMap, xi_sigma: f64, seed: u64) -> Result<LinearMap> {
    if h.m().max(h.n()) > DENSE_CAP {
        return Err(Error::DenseCapExceeded { what: "perturbed operator", n: h.m().max(h.n()), cap: DENSE_CAP });
    }
    let noise = perturbation_matrix(h.m(), h.n(), xi_sigma, seed)?;
    if xi_sigma == 0.0 {
        return Ok(h.clone());
    }
    let matrix = h.to_dense()? + noise;
    LinearMap::build(&OperatorSpec::ExplicitDense { matrix }, h.shape())
}
