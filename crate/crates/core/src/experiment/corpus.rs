//! Seeded synthetic image corpora.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gmrf::{sample_gmrf, GmrfPrior};
use crate::graph::{GraphLaplacian, Topology};
use crate::linop::{ImageShape, ImageSignal};

/// Generator of a synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusKind {
    /// GMRF samples rescaled affinely to `[0, 1]`.
    #[default]
    GmrfSample,
    /// Constant rectangles over a smooth gradient, clipped to `[0, 1]`.
    PiecewiseSmooth,
}

impl CorpusKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gmrfsample" | "gmrf" => Ok(CorpusKind::GmrfSample),
            "piecewisesmooth" | "piecewise" => Ok(CorpusKind::PiecewiseSmooth),
            _ => Err(Error::InvalidArgument(format!("unknown corpus kind {s:?}"))),
        }
    }
}

/// Affine map `x ↦ scale·x + offset` applied to one raw sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rescale {
    pub scale: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub images: Vec<ImageSignal>,
    pub kind: CorpusKind,
    pub seed: u64,
    /// Per-image rescaling; empty for piecewise-smooth corpora.
    pub rescale: Vec<Rescale>,
}

impl SyntheticCorpus {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Mean of the squared rescaling factors, 1 without rescaling.
    pub fn mean_scale_sq(&self) -> f64 {
        if self.rescale.is_empty() {
            return 1.0;
        }
        self.rescale.iter().map(|r| r.scale * r.scale).sum::<f64>() / self.rescale.len() as f64
    }
}

/// Default prior of GMRF corpora: `Q = L + 0.01 I` on the 4-neighbour grid.
pub fn default_corpus_prior(shape: ImageShape) -> Result<GmrfPrior> {
    let l = GraphLaplacian::for_shape(Topology::Grid4NN, shape)?;
    GmrfPrior::new(&l, 1.0, 0.01)
}

pub fn generate_corpus(kind: CorpusKind, shape: ImageShape, count: usize, seed: u64) -> Result<SyntheticCorpus> {
    match kind {
        CorpusKind::GmrfSample => generate_gmrf_corpus(&default_corpus_prior(shape)?, shape, count, seed),
        CorpusKind::PiecewiseSmooth => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let images = (0..count).map(|_| piecewise_smooth(shape, &mut rng)).collect();
            Ok(SyntheticCorpus { images, kind, seed, rescale: Vec::new() })
        }
    }
}

/// GMRF samples under `prior`, each rescaled by its own min and max to `[0, 1]`.
pub fn generate_gmrf_corpus(prior: &GmrfPrior, shape: ImageShape, count: usize, seed: u64) -> Result<SyntheticCorpus> {
    let raw = if count == 0 { Vec::new() } else { sample_gmrf(prior, shape, count, seed)? };
    let mut images = Vec::with_capacity(count);
    let mut rescale = Vec::with_capacity(count);
    for x in raw {
        let lo = x.data.min();
        let hi = x.data.max();
        let r = if hi > lo {
            Rescale { scale: 1.0 / (hi - lo), offset: -lo / (hi - lo) }
        } else {
            Rescale { scale: 0.0, offset: 0.5 }
        };
        let data = x.data.map(|v| (r.scale * v + r.offset).clamp(0.0, 1.0));
        images.push(ImageSignal { shape, data });
        rescale.push(r);
    }
    Ok(SyntheticCorpus { images, kind: CorpusKind::GmrfSample, seed, rescale })
}

fn piecewise_smooth(shape: ImageShape, rng: &mut ChaCha8Rng) -> ImageSignal {
    let (h, w) = (shape.height as f64, shape.width as f64);
    let mut data = DVector::zeros(shape.len());
    let base: Vec<f64> = (0..shape.channels).map(|_| rng.random_range(0.2..0.8)).collect();
    let gr: f64 = rng.random_range(-0.3..0.3);
    let gc: f64 = rng.random_range(-0.3..0.3);
    for c in 0..shape.channels {
        for r in 0..shape.height {
            for col in 0..shape.width {
                data[shape.index(c, r, col)] = base[c] + gr * (r as f64 / h - 0.5) + gc * (col as f64 / w - 0.5);
            }
        }
    }
    let rects = rng.random_range(2..=5);
    for _ in 0..rects {
        let r0 = rng.random_range(0..shape.height);
        let c0 = rng.random_range(0..shape.width);
        let r1 = rng.random_range(r0 + 1..=shape.height);
        let c1 = rng.random_range(c0 + 1..=shape.width);
        let level: Vec<f64> = (0..shape.channels).map(|_| rng.random_range(0.0..1.0)).collect();
        for c in 0..shape.channels {
            for r in r0..r1 {
                for col in c0..c1 {
                    data[shape.index(c, r, col)] = level[c];
                }
            }
        }
    }
    ImageSignal { shape, data: data.map(|v: f64| v.clamp(0.0, 1.0)) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_deterministic() {
        let s = ImageShape::gray(8, 8).unwrap();
        for kind in [CorpusKind::GmrfSample, CorpusKind::PiecewiseSmooth] {
            assert!(generate_corpus(kind, s, 0, 1).unwrap().is_empty());
            let a = generate_corpus(kind, s, 3, 7).unwrap();
            let b = generate_corpus(kind, s, 3, 7).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.images[0], generate_corpus(kind, s, 3, 8).unwrap().images[0]);
        }
    }

    #[test]
    fn values_lie_in_unit_interval() {
        let s = ImageShape::new(3, 8, 8).unwrap();
        for kind in [CorpusKind::GmrfSample, CorpusKind::PiecewiseSmooth] {
            for img in generate_corpus(kind, s, 5, 2).unwrap().images {
                assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        let g = generate_corpus(CorpusKind::GmrfSample, ImageShape::gray(8, 8).unwrap(), 4, 3).unwrap();
        for img in &g.images {
            assert!(img.data.min().abs() < 1e-12 && (img.data.max() - 1.0).abs() < 1e-12);
        }
        assert_eq!(g.rescale.len(), 4);
    }

    #[test]
    fn piecewise_smooth_is_smoother_than_noise() {
        let s = ImageShape::gray(16, 16).unwrap();
        let l = GraphLaplacian::build(Topology::Grid4NN, 16, 16).unwrap();
        let corpus = generate_corpus(CorpusKind::PiecewiseSmooth, s, 100, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut smooth, mut noise) = (0.0, 0.0);
        for img in &corpus.images {
            let mean = img.data.mean();
            let var = img.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / img.data.len() as f64;
            // Uniform noise of the same variance: half-width sqrt(3 var).
            let half = (3.0 * var).sqrt();
            let u = DVector::from_fn(img.data.len(), |_, _| rng.random_range(-1.0..1.0) * half);
            smooth += l.dirichlet_energy(&img.data).unwrap();
            noise += l.dirichlet_energy(&u).unwrap();
        }
        assert!(smooth < noise, "{smooth} vs {noise}");
    }

    #[test]
    fn parse_kinds() {
        assert_eq!(CorpusKind::parse("GmrfSample").unwrap(), CorpusKind::GmrfSample);
        assert_eq!(CorpusKind::parse("piecewisesmooth").unwrap(), CorpusKind::PiecewiseSmooth);
        assert!(CorpusKind::parse("celeba").is_err());
    }
}
