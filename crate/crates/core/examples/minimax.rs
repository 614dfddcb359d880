//! Worst-case residual of the best p-dimensional null subspace over the
//! graph-energy ellipsoid, with the witness that attains it.

use gsnr::gmrf::{minimax_bound, sample_ellipsoid, subspace_residual};
use gsnr::spectral::{eig_dense_null, NullRestricted};
use gsnr::{GraphLaplacian, ImageShape, LinearMap, OperatorSpec, Result, Topology};

fn main() -> Result<()> {
    let shape = ImageShape::gray(16, 16)?;
    let h = LinearMap::build(&OperatorSpec::BlockAverageSr { factor: 4 }, shape)?;
    let tau = 1.0;
    for topo in [Topology::Identity, Topology::Grid4NN, Topology::Grid8NN] {
        let l = GraphLaplacian::for_shape(topo, shape)?;
        let basis = eig_dense_null(&h, &l, h.null_dim())?;
        let t = NullRestricted::new(&h, &l)?;
        println!("{topo}");
        for p in [4, 16, 64] {
            let mb = minimax_bound(&basis, p, tau)?;
            let witness = subspace_residual(&basis, p, &mb.witness)?;
            let mut worst = 0.0f64;
            for x in sample_ellipsoid(&t, tau, 500, p as u64)? {
                worst = worst.max(subspace_residual(&basis, p, &x)?);
            }
            println!("  p={p:>2}  bound {:.5}  witness {witness:.5}  worst sample {worst:.5}", mb.bound);
        }
    }
    Ok(())
}
