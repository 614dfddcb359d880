//! Range/null decomposition for each operator kind.

use gsnr::linalg::gaussian_vector;
use gsnr::{ImageShape, ImageSignal, LinearMap, OperatorSpec, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let gray = ImageShape::gray(16, 16)?;
    let color = ImageShape::new(3, 16, 16)?;
    let cases = [
        (OperatorSpec::hadamard_ratio(gray, 0.25), gray),
        (OperatorSpec::BlockAverageSr { factor: 4 }, gray),
        (OperatorSpec::BayerMosaic { pattern: Default::default() }, color),
        (OperatorSpec::blur(1.0), gray),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("{:<14} {:>5} {:>5} {:>5} {:>10} {:>10}", "operator", "n", "m", "q", "|x-xr-xn|", "|H xn|");
    for (spec, shape) in cases {
        let h = LinearMap::build(&spec, shape)?;
        let x = ImageSignal::new(shape, gaussian_vector(&mut rng, shape.len()))?;
        let split = h.rnsd_split(&x)?;
        let rest = &x.data - &split.range_part.data - &split.null_part.data;
        let leak = h.apply(&split.null_part.data)?.norm();
        println!(
            "{:<14} {:>5} {:>5} {:>5} {:>10.2e} {:>10.2e}",
            h.kind().to_string(),
            h.n(),
            h.m(),
            h.null_dim(),
            rest.norm(),
            leak
        );
    }
    Ok(())
}
