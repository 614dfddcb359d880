//! Graph Laplacians on an image grid: sparsity, spectral bound and the
//! Dirichlet energy of a smooth and a rough image.

use gsnr::{GraphLaplacian, Result, Topology};
use nalgebra::DVector;

fn main() -> Result<()> {
    let (h, w) = (16, 16);
    let ramp = DVector::from_fn(h * w, |i, _| (i % w) as f64 / w as f64);
    let checker = DVector::from_fn(h * w, |i, _| ((i / w + i % w) % 2) as f64);
    println!("{:<14} {:>6} {:>8} {:>10} {:>10}", "topology", "nnz", "bound", "E(ramp)", "E(checker)");
    for topo in [Topology::Identity, Topology::Grid4NN, Topology::Grid8NN, Topology::SymNormalized] {
        let l = GraphLaplacian::build(topo, h, w)?;
        println!(
            "{:<14} {:>6} {:>8.3} {:>10.4} {:>10.4}",
            topo.to_string(),
            l.matrix().nnz(),
            l.spectral_bound()?,
            l.dirichlet_energy(&ramp)?,
            l.dirichlet_energy(&checker)?
        );
    }
    Ok(())
}
