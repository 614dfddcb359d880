//! Smoothest null-space modes by projected Lanczos, checked against the
//! dense oracle.

use gsnr::linalg::max_principal_angle_sin;
use gsnr::spectral::{eig_dense_null, eig_smallest_null, LanczosOptions};
use gsnr::{GraphLaplacian, ImageShape, LinearMap, OperatorSpec, Result, Topology};

fn main() -> Result<()> {
    let shape = ImageShape::gray(16, 16)?;
    let h = LinearMap::build(&OperatorSpec::BlockAverageSr { factor: 4 }, shape)?;
    let l = GraphLaplacian::for_shape(Topology::Grid4NN, shape)?;
    let k = 8;
    let lanczos = eig_smallest_null(&h, &l, k, &LanczosOptions::default())?;
    let dense = eig_dense_null(&h, &l, k)?;
    println!("null dimension {}, first {k} modes", h.null_dim());
    println!("{:>3} {:>14} {:>14}", "j", "lanczos", "dense");
    for (j, (a, b)) in lanczos.eigenvalues().iter().zip(dense.eigenvalues()).enumerate() {
        println!("{:>3} {a:>14.10} {b:>14.10}", j + 1);
    }
    let sin = max_principal_angle_sin(lanczos.vectors(), dense.vectors());
    println!("largest principal angle sine {sin:.2e}");
    Ok(())
}
