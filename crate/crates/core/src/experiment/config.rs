//! Line-oriented experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! kind = Coverage
//! seed = 42
//!
//! [operator]
//! kind = BlockAverageSr
//! factor = 2
//! height = 8
//! width = 8
//!
//! [graph]
//! topologies = Identity, Grid4NN, Grid8NN
//! ```
//!
//! Keys outside any section are top-level. Unknown sections or keys,
//! duplicates and malformed values are errors; `seed` is mandatory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::denoise::{Denoiser, WaveletFilter};
use crate::error::{Error, Result};
use crate::experiment::corpus::CorpusKind;
use crate::experiment::perturb::DEFAULT_XI_SIGMA;
use crate::experiment::trials::ReconstructionSetup;
use crate::gmrf::SelectPParams;
use crate::graph::Topology;
use crate::linop::{BayerPattern, ImageShape, OperatorKind, OperatorSpec, DEFAULT_BLUR_THRESHOLD, DEFAULT_NOISE_SIGMA2};
use crate::solver::{SolverConfig, Step};
use crate::spectral::EigenMethod;

/// The experiment families the runner knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Spectrum,
    Coverage,
    Predictability,
    SelectP,
    MinimaxBound,
    Reconstruct,
    ConvergenceAblation,
    PerturbedOperator,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Spectrum,
        ExperimentKind::Coverage,
        ExperimentKind::Predictability,
        ExperimentKind::SelectP,
        ExperimentKind::MinimaxBound,
        ExperimentKind::Reconstruct,
        ExperimentKind::ConvergenceAblation,
        ExperimentKind::PerturbedOperator,
    ];

    /// Name of the CLI subcommand running this kind.
    pub fn command(self) -> &'static str {
        match self {
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::Coverage => "coverage",
            ExperimentKind::Predictability => "predictability",
            ExperimentKind::SelectP => "select-p",
            ExperimentKind::MinimaxBound => "minimax",
            ExperimentKind::Reconstruct => "reconstruct",
            ExperimentKind::ConvergenceAblation => "ablate-convergence",
            ExperimentKind::PerturbedOperator => "perturb",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| *c != '-' && *c != '_').collect::<String>().to_ascii_lowercase();
        ExperimentKind::ALL
            .into_iter()
            .find(|k| {
                format!("{k:?}").to_ascii_lowercase() == norm || k.command().replace('-', "") == norm
            })
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment kind {s:?}")))
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Number of modes to use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PChoice {
    /// Chosen from the coverage curve.
    Auto,
    Fixed(usize),
    /// `round(fraction · n)`, at least 1.
    Fraction(f64),
}

impl PChoice {
    /// Resolves to a count for an `n`-pixel problem; `None` for `Auto`.
    pub fn resolve(self, n: usize) -> Option<usize> {
        match self {
            PChoice::Auto => None,
            PChoice::Fixed(p) => Some(p),
            PChoice::Fraction(f) => Some(((f * n as f64).round() as usize).max(1)),
        }
    }
}

/// Forward model of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorConfig {
    pub shape: ImageShape,
    pub spec: OperatorSpec,
    /// Source file of an explicit dense matrix.
    pub dense_path: Option<PathBuf>,
}

/// A fully parsed experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub operator: OperatorConfig,
    pub topologies: Vec<Topology>,
    pub alpha: f64,
    pub epsilon: f64,
    pub sigma2: f64,
    pub p: PChoice,
    pub select: SelectPParams,
    /// Modes computed by `Spectrum`; `None` means the whole null space.
    pub modes: Option<usize>,
    pub eigen_method: EigenMethod,
    pub cache_dir: Option<PathBuf>,
    /// GMRF samples for empirical coverage; 0 skips it.
    pub coverage_samples: usize,
    pub tau: f64,
    pub minimax_samples: usize,
    pub solver: SolverConfig,
    /// `γ_g` values compared by the convergence ablation.
    pub gamma_g_values: Vec<f64>,
    pub trials: usize,
    pub train_count: usize,
    pub xi_sigma: f64,
    pub corpus: CorpusKind,
    /// Hex SHA-256 of the source text.
    pub hash: String,
}

impl ExperimentConfig {
    /// Parses configuration text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Entries::parse(text)?;
        let cfg = build(&mut entries, text)?;
        entries.finish()?;
        Ok(cfg)
    }

    /// Reads and parses a configuration file. A relative `operator.path` is
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(dense), Some(dir)) = (&cfg.operator.dense_path, path.parent()) {
            if dense.is_relative() {
                cfg.operator.dense_path = Some(dir.join(dense));
            }
        }
        Ok(cfg)
    }

    /// Reconstruction settings derived from this configuration.
    pub fn reconstruction_setup(&self) -> ReconstructionSetup {
        ReconstructionSetup {
            shape: self.operator.shape,
            operator: self.operator.spec.clone(),
            sigma2: self.sigma2,
            prior_alpha: self.alpha,
            prior_epsilon: self.epsilon,
            solver: self.solver.clone(),
            p: self.p.resolve(self.operator.shape.len()),
            select: self.select,
            xi_sigma: 0.0,
            train_count: self.train_count,
            corpus: self.corpus,
        }
    }
}

/// Shorthand used by the CLI and tests.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}

struct Entry {
    value: String,
    line: usize,
}

/// `(section, key) → value`, consumed as the config is built so that
/// leftovers can be reported as unknown.
struct Entries {
    map: BTreeMap<(String, String), Entry>,
}

const SECTIONS: [&str; 8] = ["", "operator", "graph", "prior", "select", "solver", "minimax", "perturb"];

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut sections = BTreeSet::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::ConfigLine { line, msg: format!("malformed section header {content:?}") })?
                    .trim()
                    .to_ascii_lowercase();
                if !SECTIONS.contains(&name.as_str()) || name.is_empty() {
                    return Err(Error::ConfigLine { line, msg: format!("unknown section [{name}]") });
                }
                if !sections.insert(name.clone()) {
                    return Err(Error::ConfigLine { line, msg: format!("duplicate section [{name}]") });
                }
                section = name;
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::ConfigLine { line, msg: format!("expected `key = value`, got {content:?}") })?;
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::ConfigLine { line, msg: "empty key".into() });
            }
            let full = qualified(&section, &key);
            if map.insert((section.clone(), key), Entry { value, line }).is_some() {
                return Err(Error::ConfigLine { line, msg: format!("duplicate key `{full}`") });
            }
        }
        Ok(Entries { map })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<Entry> {
        self.map.remove(&(section.to_string(), key.to_string()))
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>> {
        match self.take(section, key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| Error::ConfigLine {
                line: e.line,
                msg: format!("invalid value {:?} for `{}`", e.value, qualified(section, key)),
            }),
        }
    }

    fn with<T>(&mut self, section: &str, key: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
        match self.take(section, key) {
            None => Ok(None),
            Some(e) => f(&e.value).map(Some).map_err(|err| Error::ConfigLine {
                line: e.line,
                msg: format!("`{}`: {}", qualified(section, key), strip_prefix(&err)),
            }),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.into_iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some(((section, key), e)) => {
                Err(Error::ConfigLine { line: e.line, msg: format!("unknown key `{}`", qualified(&section, &key)) })
            }
        }
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

fn strip_prefix(err: &Error) -> String {
    match err {
        Error::InvalidArgument(m) | Error::InvalidOperator(m) | Error::InvalidGraph(m) | Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("expected true or false, got {s:?}"))),
    }
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(f).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty list".into()));
    }
    Ok(items)
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("expected a number, got {s:?}")))
}

fn parse_p(s: &str) -> Result<PChoice> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(PChoice::Auto);
    }
    if let Some(frac) = s.strip_suffix('n') {
        let f = parse_f64(frac.trim())?;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidArgument(format!("fraction of n must lie in (0, 1], got {f}")));
        }
        return Ok(PChoice::Fraction(f));
    }
    match s.parse::<usize>() {
        Ok(p) if p > 0 => Ok(PChoice::Fixed(p)),
        _ => Err(Error::InvalidArgument(format!("expected auto, a positive integer or a fraction like 0.1n, got {s:?}"))),
    }
}

fn parse_step(s: &str) -> Result<Step> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Step::Auto);
    }
    let a = parse_f64(s)?;
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {a}")));
    }
    Ok(Step::Fixed(a))
}

fn nonneg(section: &str, key: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{}` must be nonnegative, got {v}", qualified(section, key))))
    }
}

fn positive(section: &str, key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{}` must be positive, got {v}", qualified(section, key))))
    }
}

fn build(e: &mut Entries, text: &str) -> Result<ExperimentConfig> {
    let kind = e.with("", "kind", ExperimentKind::parse)?;
    let seed: u64 = e.get("", "seed")?.ok_or_else(|| Error::Config("seed required".into()))?;
    let out = e.get::<String>("", "out")?.map(PathBuf::from);
    let trials: usize = e.get("", "trials")?.unwrap_or(20);
    if trials == 0 {
        return Err(Error::Config("`trials` must be at least 1".into()));
    }
    let corpus = e.with("", "corpus", CorpusKind::parse)?.unwrap_or_default();

    let operator = build_operator(e)?;
    let topologies = e.with("graph", "topologies", |s| parse_list(s, Topology::parse))?.unwrap_or(vec![Topology::Grid4NN]);

    let alpha = nonneg("prior", "alpha", e.get("prior", "alpha")?.unwrap_or(1.0))?;
    let epsilon = positive("prior", "epsilon", e.get("prior", "epsilon")?.unwrap_or(0.01))?;
    let sigma2 = nonneg("prior", "sigma2", e.get("prior", "sigma2")?.unwrap_or(DEFAULT_NOISE_SIGMA2))?;
    let train_count: usize = e.get("prior", "train_count")?.unwrap_or(64);

    let p = e.with("select", "p", parse_p)?.unwrap_or(PChoice::Auto);
    let select = SelectPParams {
        kappa: e.get("select", "kappa")?.unwrap_or(0.95),
        delta: nonneg("select", "delta", e.get("select", "delta")?.unwrap_or(1e-3))?,
        plateau: e.get("select", "plateau")?.unwrap_or(10),
    };
    if !(select.kappa > 0.0 && select.kappa <= 1.0) {
        return Err(Error::Config(format!("`select.kappa` must lie in (0, 1], got {}", select.kappa)));
    }
    let modes: Option<usize> = e.get("select", "modes")?;
    let eigen_method = e.with("select", "method", EigenMethod::parse)?.unwrap_or_default();
    let cache_dir = e.get::<String>("select", "cache")?.map(PathBuf::from);
    let coverage_samples: usize = e.get("select", "coverage_samples")?.unwrap_or(5000);

    let tau = positive("minimax", "tau", e.get("minimax", "tau")?.unwrap_or(1.0))?;
    let minimax_samples: usize = e.get("minimax", "samples")?.unwrap_or(1000);

    let xi_sigma = nonneg("perturb", "xi_sigma", e.get("perturb", "xi_sigma")?.unwrap_or(DEFAULT_XI_SIGMA))?;

    let (solver, gamma_g_values) = build_solver(e)?;

    Ok(ExperimentConfig {
        kind,
        seed,
        out,
        operator,
        topologies,
        alpha,
        epsilon,
        sigma2,
        p,
        select,
        modes,
        eigen_method,
        cache_dir,
        coverage_samples,
        tau,
        minimax_samples,
        solver,
        gamma_g_values,
        trials,
        train_count,
        xi_sigma,
        corpus,
        hash: hex(&Sha256::digest(text.as_bytes())),
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn build_operator(e: &mut Entries) -> Result<OperatorConfig> {
    const S: &str = "operator";
    let kind = e.with(S, "kind", OperatorKind::parse)?.unwrap_or(OperatorKind::BlockAverageSr);
    let height: usize = e.get(S, "height")?.unwrap_or(8);
    let width: usize = e.get(S, "width")?.unwrap_or(height);
    let default_channels = if kind == OperatorKind::BayerMosaic { 3 } else { 1 };
    let channels: usize = e.get(S, "channels")?.unwrap_or(default_channels);
    let shape = ImageShape::new(channels, height, width).map_err(|err| Error::Config(strip_prefix(&err)))?;
    let mut dense_path = None;
    let spec = match kind {
        OperatorKind::HadamardCs => {
            let rows: Option<usize> = e.get(S, "rows")?;
            let ratio: Option<f64> = e.get(S, "ratio")?;
            match (rows, ratio) {
                (Some(rows), None) => OperatorSpec::HadamardCs { rows },
                (None, ratio) => OperatorSpec::hadamard_ratio(shape, ratio.unwrap_or(0.25)),
                (Some(_), Some(_)) => return Err(Error::Config("give either `operator.rows` or `operator.ratio`".into())),
            }
        }
        OperatorKind::BlockAverageSr => OperatorSpec::BlockAverageSr { factor: e.get(S, "factor")?.unwrap_or(2) },
        OperatorKind::BayerMosaic => {
            OperatorSpec::BayerMosaic { pattern: e.with(S, "pattern", BayerPattern::parse)?.unwrap_or_default() }
        }
        OperatorKind::GaussianBlur => OperatorSpec::GaussianBlur {
            sigma: positive(S, "sigma", e.get(S, "sigma")?.unwrap_or(1.0))?,
            threshold: positive(S, "threshold", e.get(S, "threshold")?.unwrap_or(DEFAULT_BLUR_THRESHOLD))?,
        },
        OperatorKind::ExplicitDense => {
            let path: String = e.get(S, "path")?.ok_or_else(|| Error::Config("`operator.path` required for ExplicitDense".into()))?;
            dense_path = Some(PathBuf::from(path));
            // Placeholder until the runner loads the file.
            OperatorSpec::ExplicitDense { matrix: nalgebra::DMatrix::zeros(0, 0) }
        }
    };
    Ok(OperatorConfig { shape, spec, dense_path })
}

fn build_solver(e: &mut Entries) -> Result<(SolverConfig, Vec<f64>)> {
    const S: &str = "solver";
    let defaults = ReconstructionSetup::default().solver;
    let alpha = e.with(S, "step", parse_step)?.unwrap_or(defaults.alpha);
    let gamma = nonneg(S, "gamma", e.get(S, "gamma")?.unwrap_or(defaults.gamma))?;
    let gamma_g_values = e
        .with(S, "gamma_g", |s| parse_list(s, parse_f64))?
        .unwrap_or(vec![0.0, 0.1]);
    for &g in &gamma_g_values {
        nonneg(S, "gamma_g", g)?;
    }
    let lambda = nonneg(S, "lambda", e.get(S, "lambda")?.unwrap_or(defaults.lambda))?;
    let iterations: usize = e.get(S, "iterations")?.unwrap_or(defaults.iterations);
    if iterations == 0 {
        return Err(Error::Config("`solver.iterations` must be at least 1".into()));
    }
    let delta = nonneg(S, "delta", e.get(S, "delta")?.unwrap_or(0.0))?;
    let init_pinv = e.with(S, "init_pinv", parse_bool)?.unwrap_or(defaults.init_pinv);

    let denoiser_name = e.get::<String>(S, "denoiser")?.unwrap_or_else(|| "wavelet".into());
    let filter = e.with(S, "filter", WaveletFilter::parse)?;
    let levels: Option<usize> = e.get(S, "levels")?;
    let threshold: Option<f64> = e.get(S, "threshold")?;
    let tv_weight: Option<f64> = e.get(S, "tv_weight")?;
    let tv_iterations: Option<usize> = e.get(S, "tv_iterations")?;
    let denoiser = match denoiser_name.to_ascii_lowercase().as_str() {
        "identity" | "none" => Denoiser::Identity,
        "wavelet" | "waveletsoft" => {
            let (df, dl, dt) = match defaults.denoiser {
                Denoiser::WaveletSoft { filter, levels, threshold } => (filter, levels, threshold),
                _ => (WaveletFilter::Haar, 1, 0.0),
            };
            Denoiser::WaveletSoft {
                filter: filter.unwrap_or(df),
                levels: levels.unwrap_or(dl),
                threshold: nonneg(S, "threshold", threshold.unwrap_or(dt))?,
            }
        }
        "tv" | "tvprox" => Denoiser::TvProx {
            weight: nonneg(S, "tv_weight", tv_weight.unwrap_or(0.05))?,
            iterations: tv_iterations.unwrap_or(20),
        },
        other => return Err(Error::Config(format!("unknown denoiser {other:?}"))),
    };
    let solver = SolverConfig {
        alpha,
        gamma,
        gamma_g: gamma_g_values[0],
        lambda,
        iterations,
        denoiser,
        delta,
        init_pinv,
    };
    Ok((solver, gamma_g_values))
}
