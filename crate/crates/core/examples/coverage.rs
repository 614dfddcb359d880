//! Null-space coverage of the smoothest modes under a GMRF prior, and the
//! automatic choice of the number of modes.

use gsnr::gmrf::{coverage_closed_form, coverage_empirical, sample_gmrf, select_p, GmrfPrior, SelectPParams};
use gsnr::spectral::eig_dense_null;
use gsnr::{GraphLaplacian, ImageShape, LinearMap, OperatorSpec, Result, Topology};

fn main() -> Result<()> {
    let shape = ImageShape::gray(8, 8)?;
    let h = LinearMap::build(&OperatorSpec::BlockAverageSr { factor: 2 }, shape)?;
    let q = h.null_dim();
    for topo in [Topology::Identity, Topology::Grid4NN, Topology::Grid8NN] {
        let l = GraphLaplacian::for_shape(topo, shape)?;
        let basis = eig_dense_null(&h, &l, q)?;
        let prior = GmrfPrior::new(&l, 1.0, 0.01)?;
        let closed = coverage_closed_form(&prior, &basis)?;
        let empirical = coverage_empirical(&sample_gmrf(&prior, shape, 2000, 1)?, &h, &basis)?;
        let p_star = select_p(&closed, SelectPParams::default());
        println!("{topo}: p* = {p_star} of q = {q}");
        for p in [1, 4, 12, 24, q] {
            println!(
                "  p={p:>2}  closed {:.4}  empirical {:.4}  linear {:.4}",
                closed.at(p),
                empirical.at(p),
                p as f64 / q as f64
            );
        }
    }
    Ok(())
}
