//! Denoisers used as proximal steps: orthogonal wavelet soft-thresholding and
//! a total-variation proximal map.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linop::ImageSignal;

/// Orthogonal Daubechies scaling filters, named by vanishing moments
/// (`DbN` has `2N` taps; `Db1` is Haar).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum WaveletFilter {
    #[default]
    Haar,
    Db2,
    Db4,
    Db8,
}

const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

const DB2: [f64; 4] = [
    0.482_962_913_144_534_14,
    0.836_516_303_737_807_9,
    0.224_143_868_042_013_38,
    -0.129_409_522_551_260_38,
];

const DB4: [f64; 8] = [
    0.230_377_813_308_896_5,
    0.714_846_570_552_915_6,
    0.630_880_767_929_858_9,
    -0.027_983_769_416_859_854,
    -0.187_034_811_719_093_08,
    0.030_841_381_835_560_764,
    0.032_883_011_666_885_2,
    -0.010_597_401_785_069_032,
];

const DB8: [f64; 16] = [
    0.054_415_842_243_104_01,
    0.312_871_590_914_299_97,
    0.675_630_736_297_289_8,
    0.585_354_683_654_206_7,
    -0.015_829_105_256_349_306,
    -0.284_015_542_961_546_93,
    0.000_472_484_573_913_282_8,
    0.128_747_426_620_478_46,
    -0.017_369_301_001_807_546,
    -0.044_088_253_930_794_75,
    0.013_981_027_917_398_282,
    0.008_746_094_047_405_777,
    -0.004_870_352_993_451_574,
    -0.000_391_740_373_376_947,
    0.000_675_449_406_450_569_4,
    -0.000_117_476_784_124_769_53,
];

impl WaveletFilter {
    pub fn lowpass(self) -> &'static [f64] {
        match self {
            WaveletFilter::Haar => &HAAR,
            WaveletFilter::Db2 => &DB2,
            WaveletFilter::Db4 => &DB4,
            WaveletFilter::Db8 => &DB8,
        }
    }

    /// Quadrature mirror: `g[i] = (−1)^i h[L−1−i]`.
    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let l = h.len();
        (0..l).map(|i| if i % 2 == 0 { h[l - 1 - i] } else { -h[l - 1 - i] }).collect()
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(WaveletFilter::Haar),
            "db2" => Ok(WaveletFilter::Db2),
            "db4" => Ok(WaveletFilter::Db4),
            "db8" => Ok(WaveletFilter::Db8),
            other => Err(Error::InvalidArgument(format!("unknown wavelet filter {other:?}"))),
        }
    }
}

/// One level of the periodic analysis transform: `x ↦ [approx | detail]`.
fn analyze(x: &[f64], h: &[f64], g: &[f64], out: &mut [f64]) {
    let n = x.len();
    let half = n / 2;
    for k in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for (i, (hi, gi)) in h.iter().zip(g).enumerate() {
            let v = x[(2 * k + i) % n];
            a += hi * v;
            d += gi * v;
        }
        out[k] = a;
        out[half + k] = d;
    }
}

/// Inverse (adjoint) of [`analyze`].
fn synthesize(c: &[f64], h: &[f64], g: &[f64], out: &mut [f64]) {
    let n = c.len();
    let half = n / 2;
    out.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..half {
        let (a, d) = (c[k], c[half + k]);
        for (i, (hi, gi)) in h.iter().zip(g).enumerate() {
            out[(2 * k + i) % n] += hi * a + gi * d;
        }
    }
}

/// Applies a 1-D transform along the rows, then the columns, of the top-left
/// `rows × cols` block of a row-major plane with stride `width`.
fn separable(plane: &mut [f64], width: usize, rows: usize, cols: usize, f: &dyn Fn(&[f64], &mut [f64])) {
    let mut buf_in = vec![0.0; rows.max(cols)];
    let mut buf_out = vec![0.0; rows.max(cols)];
    for r in 0..rows {
        buf_in[..cols].copy_from_slice(&plane[r * width..r * width + cols]);
        f(&buf_in[..cols], &mut buf_out[..cols]);
        plane[r * width..r * width + cols].copy_from_slice(&buf_out[..cols]);
    }
    for c in 0..cols {
        for r in 0..rows {
            buf_in[r] = plane[r * width + c];
        }
        f(&buf_in[..rows], &mut buf_out[..rows]);
        for r in 0..rows {
            plane[r * width + c] = buf_out[r];
        }
    }
}

/// Multilevel 2-D periodic wavelet transform of one plane, in place (Mallat layout).
pub fn dwt2(plane: &mut [f64], height: usize, width: usize, filter: WaveletFilter, levels: usize) -> Result<()> {
    check_dims(height, width, levels)?;
    let h = filter.lowpass();
    let g = filter.highpass();
    let (mut rows, mut cols) = (height, width);
    for _ in 0..levels {
        separable(plane, width, rows, cols, &|x, out| analyze(x, h, &g, out));
        rows /= 2;
        cols /= 2;
    }
    Ok(())
}

/// Inverse of [`dwt2`].
pub fn idwt2(plane: &mut [f64], height: usize, width: usize, filter: WaveletFilter, levels: usize) -> Result<()> {
    check_dims(height, width, levels)?;
    let h = filter.lowpass();
    let g = filter.highpass();
    for level in (0..levels).rev() {
        let (rows, cols) = (height >> level, width >> level);
        // Columns then rows: the exact reverse of the analysis order.
        let mut col = vec![0.0; rows];
        let mut out = vec![0.0; rows];
        for c in 0..cols {
            for r in 0..rows {
                col[r] = plane[r * width + c];
            }
            synthesize(&col, h, &g, &mut out);
            for r in 0..rows {
                plane[r * width + c] = out[r];
            }
        }
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            synthesize(&plane[r * width..r * width + cols], h, &g, &mut out);
            plane[r * width..r * width + cols].copy_from_slice(&out);
        }
    }
    Ok(())
}

fn check_dims(height: usize, width: usize, levels: usize) -> Result<()> {
    let block = 1usize.checked_shl(levels as u32).unwrap_or(0);
    if levels == 0 || block == 0 || height % block != 0 || width % block != 0 || height < block || width < block {
        return Err(Error::InvalidArgument(format!(
            "{levels}-level periodic wavelet transform needs dimensions divisible by 2^{levels}, got {height}x{width}"
        )));
    }
    Ok(())
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Wavelet soft-thresholding: forward transform per channel, shrink every
/// detail coefficient by `threshold`, keep the coarsest approximation band,
/// inverse transform.
pub fn denoise_wavelet_soft(
    x: &ImageSignal,
    filter: WaveletFilter,
    levels: usize,
    threshold: f64,
) -> Result<ImageSignal> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be nonnegative, got {threshold}")));
    }
    let s = x.shape;
    check_dims(s.height, s.width, levels)?;
    let (ah, aw) = (s.height >> levels, s.width >> levels);
    let mut data = x.data.as_slice().to_vec();
    for plane in data.chunks_mut(s.plane()) {
        dwt2(plane, s.height, s.width, filter, levels)?;
        for r in 0..s.height {
            for c in 0..s.width {
                if r >= ah || c >= aw {
                    let v = &mut plane[r * s.width + c];
                    *v = soft(*v, threshold);
                }
            }
        }
        idwt2(plane, s.height, s.width, filter, levels)?;
    }
    Ok(ImageSignal { shape: s, data: DVector::from_vec(data) })
}

/// Proximal map of `weight · TV` (isotropic, per channel) by Chambolle's dual
/// projection iteration.
pub fn denoise_tv(x: &ImageSignal, weight: f64, iterations: usize) -> Result<ImageSignal> {
    if !(weight >= 0.0) {
        return Err(Error::InvalidArgument(format!("TV weight must be nonnegative, got {weight}")));
    }
    if weight == 0.0 || iterations == 0 {
        return Ok(x.clone());
    }
    let s = x.shape;
    let (h, w) = (s.height, s.width);
    let tau = 0.125;
    let mut out = x.data.clone();
    for (ci, plane) in x.data.as_slice().chunks(s.plane()).enumerate() {
        let mut px = vec![0.0; h * w];
        let mut py = vec![0.0; h * w];
        let mut div = vec![0.0; h * w];
        let divergence = |px: &[f64], py: &[f64], div: &mut [f64]| {
            for r in 0..h {
                for c in 0..w {
                    let i = r * w + c;
                    let dx = if c == 0 {
                        px[i]
                    } else if c == w - 1 {
                        -px[i - 1]
                    } else {
                        px[i] - px[i - 1]
                    };
                    let dy = if r == 0 {
                        py[i]
                    } else if r == h - 1 {
                        -py[i - w]
                    } else {
                        py[i] - py[i - w]
                    };
                    div[i] = dx + dy;
                }
            }
        };
        for _ in 0..iterations {
            divergence(&px, &py, &mut div);
            let u: Vec<f64> = div.iter().zip(plane).map(|(d, f)| d - f / weight).collect();
            for r in 0..h {
                for c in 0..w {
                    let i = r * w + c;
                    let gx = if c + 1 < w { u[i + 1] - u[i] } else { 0.0 };
                    let gy = if r + 1 < h { u[i + w] - u[i] } else { 0.0 };
                    let norm = (gx * gx + gy * gy).sqrt();
                    px[i] = (px[i] + tau * gx) / (1.0 + tau * norm);
                    py[i] = (py[i] + tau * gy) / (1.0 + tau * norm);
                }
            }
        }
        divergence(&px, &py, &mut div);
        for (i, (f, d)) in plane.iter().zip(&div).enumerate() {
            out[ci * s.plane() + i] = f - weight * d;
        }
    }
    Ok(ImageSignal { shape: s, data: out })
}

/// Denoiser applied after each gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Denoiser {
    #[default]
    Identity,
    WaveletSoft { filter: WaveletFilter, levels: usize, threshold: f64 },
    TvProx { weight: f64, iterations: usize },
}

impl Denoiser {
    pub fn apply(&self, x: &ImageSignal) -> Result<ImageSignal> {
        match *self {
            Denoiser::Identity => Ok(x.clone()),
            Denoiser::WaveletSoft { filter, levels, threshold } => denoise_wavelet_soft(x, filter, levels, threshold),
            Denoiser::TvProx { weight, iterations } => denoise_tv(x, weight, iterations),
        }
    }
}
