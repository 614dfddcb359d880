//! Executes one experiment kind and writes its artifacts.
//!
//! Every run writes CSV tables and SVG charts into the output directory and
//! finishes with `manifest.txt` (config hash, seed, basis cache keys, file list,
//! wall time). Apart from the wall time, artifacts depend only on the config.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::experiment::config::{ExperimentConfig, ExperimentKind};
use crate::experiment::output::{fmt_f64, write_csv, write_image, write_svg, Cell, ChartLabels, Series};
use crate::experiment::trials::{run_trials, Arm, ReconstructionSetup, TrialReport};
use crate::gmrf::{
    coverage_closed_form, coverage_empirical, coverage_lower_bound, minimax_bound, per_mode_predictability,
    sample_ellipsoid, sample_gmrf, select_p, subspace_residual, CoverageCurve, GmrfPrior,
};
use crate::graph::{GraphLaplacian, Topology};
use crate::linop::{ImageSignal, LinearMap, OperatorSpec};
use crate::solver::spectral_step_size;
use crate::spectral::{smallest_null_modes, BasisCache, LanczosOptions, NullRestricted, NullSpectralBasis};
use crate::DENSE_CAP;

/// Mode images written by the spectrum experiment, per topology.
const MODE_IMAGES: usize = 4;

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    /// Artifacts in write order, relative to `out_dir`; the manifest is last.
    pub files: Vec<String>,
    /// Basis cache keys touched, with `hit` or `miss`.
    pub cache_keys: Vec<String>,
    pub wall_seconds: f64,
}

/// Runs `kind` with `cfg`, writing into `out_dir`. A config that names a
/// different kind is rejected.
pub fn run_experiment(cfg: &ExperimentConfig, kind: ExperimentKind, out_dir: &Path) -> Result<RunOutcome> {
    if let Some(declared) = cfg.kind {
        if declared != kind {
            return Err(Error::Config(format!(
                "config declares kind {declared} but `{}` was requested",
                kind.command()
            )));
        }
    }
    let start = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut run = Run::new(cfg, out_dir)?;
    let result = match kind {
        ExperimentKind::Spectrum => run.spectrum(),
        ExperimentKind::Coverage => run.coverage(),
        ExperimentKind::Predictability => run.predictability(),
        ExperimentKind::SelectP => run.select_p(),
        ExperimentKind::MinimaxBound => run.minimax(),
        ExperimentKind::Reconstruct => run.reconstruct(),
        ExperimentKind::ConvergenceAblation => run.ablation(),
        ExperimentKind::PerturbedOperator => run.perturbed(),
    };
    result.map_err(|e| e.context(format!("{} experiment", kind.command())))?;
    let wall_seconds = start.elapsed().as_secs_f64();
    run.manifest(kind, wall_seconds)?;
    Ok(RunOutcome { kind, out_dir: out_dir.to_path_buf(), files: run.files, cache_keys: run.cache_keys, wall_seconds })
}

/// Builds the forward operator, loading an explicit matrix from its file.
pub fn resolve_operator(cfg: &ExperimentConfig) -> Result<LinearMap> {
    match &cfg.operator.dense_path {
        Some(path) => LinearMap::load_dense_csv(path, cfg.operator.shape),
        None => LinearMap::build(&cfg.operator.spec, cfg.operator.shape),
    }
}

/// Reconstruction settings with the operator resolved.
pub fn resolve_setup(cfg: &ExperimentConfig, h: &LinearMap) -> Result<ReconstructionSetup> {
    let mut setup = cfg.reconstruction_setup();
    if cfg.operator.dense_path.is_some() {
        setup.operator = OperatorSpec::ExplicitDense { matrix: h.to_dense()? };
    }
    Ok(setup)
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    h: LinearMap,
    cache: Option<BasisCache>,
    files: Vec<String>,
    cache_keys: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig, out: &Path) -> Result<Self> {
        let h = resolve_operator(cfg)?;
        let cache = cfg.cache_dir.as_ref().map(BasisCache::new).transpose()?;
        Ok(Run { cfg, out: out.to_path_buf(), h, cache, files: Vec::new(), cache_keys: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.out.join(name)
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
        let path = self.path(name);
        write_csv(&path, header, rows)
    }

    fn svg(&mut self, name: &str, labels: ChartLabels, series: &[Series]) -> Result<()> {
        let path = self.path(name);
        write_svg(&path, &labels, series)
    }

    fn image(&mut self, name: &str, image: &ImageSignal) -> Result<()> {
        if !matches!(image.shape.channels, 1 | 3) {
            return Ok(());
        }
        let ext = if image.shape.channels == 1 { "pgm" } else { "ppm" };
        let path = self.path(&format!("{name}.{ext}"));
        write_image(&path, image)
    }

    fn laplacian(&self, topo: Topology) -> Result<GraphLaplacian> {
        GraphLaplacian::for_shape(topo, self.cfg.operator.shape)
    }

    fn prior(&self, l: &GraphLaplacian) -> Result<GmrfPrior> {
        GmrfPrior::new(l, self.cfg.alpha, self.cfg.epsilon)
    }

    fn q(&self) -> usize {
        self.h.null_dim()
    }

    /// Smallest `k` null modes of `T` for `l`, through the cache when configured.
    fn basis(&mut self, l: &GraphLaplacian, k: usize) -> Result<NullSpectralBasis> {
        let q = self.q();
        if k == 0 || k > q {
            return Err(Error::Config(format!("{k} modes requested but the null space has dimension {q}")));
        }
        let opts = LanczosOptions { seed: self.cfg.seed, ..LanczosOptions::default() };
        match &self.cache {
            Some(cache) => {
                let (basis, key, hit) = cache.load_or_compute(&self.h, l, k, self.cfg.eigen_method, &opts)?;
                self.cache_keys.push(format!("{key} {}", if hit { "hit" } else { "miss" }));
                Ok(basis)
            }
            None => smallest_null_modes(&self.h, l, k, self.cfg.eigen_method, &opts),
        }
    }

    fn full_basis(&mut self, l: &GraphLaplacian) -> Result<NullSpectralBasis> {
        if self.h.n() > DENSE_CAP {
            return Err(Error::Config(format!(
                "the full null spectrum is needed but n = {} exceeds {DENSE_CAP}; set `select.p` and `select.modes`",
                self.h.n()
            )));
        }
        let q = self.q();
        self.basis(l, q)
    }

    /// `p` for one topology: explicit, or selected from the closed-form
    /// coverage curve of the topology's own prior. Also returns the full basis
    /// when it had to be computed.
    fn resolve_p(&mut self, l: &GraphLaplacian) -> Result<(usize, Option<NullSpectralBasis>)> {
        match self.cfg.p.resolve(self.h.n()) {
            Some(p) => Ok((p, None)),
            None => {
                let full = self.full_basis(l)?;
                let curve = coverage_closed_form(&self.prior(l)?, &full)?;
                Ok((select_p(&curve, self.cfg.select), Some(full)))
            }
        }
    }

    /// Eigenvalues of `T` per topology, normalized by the largest one computed
    /// (the true `μ_max` when the whole null space is requested).
    fn spectrum(&mut self) -> Result<()> {
        let k = match self.cfg.modes {
            Some(k) => k,
            None if self.h.n() <= DENSE_CAP => self.q(),
            None => return Err(Error::Config("`select.modes` is required above the dense cap".into())),
        };
        let mut rows = Vec::new();
        let mut series = Vec::new();
        for topo in self.cfg.topologies.clone() {
            let l = self.laplacian(topo)?;
            let basis = self.basis(&l, k)?;
            let mu = basis.eigenvalues();
            let top = mu.last().copied().unwrap_or(0.0);
            for (j, &m) in mu.iter().enumerate() {
                let rel = if top > 0.0 { m / top } else { 0.0 };
                rows.push(vec![topo.to_string().into(), (j + 1).into(), m.into(), rel.into()]);
            }
            series.push(Series::new(topo.to_string(), mu.iter().enumerate().map(|(j, &m)| ((j + 1) as f64, m)).collect()));
            for j in 0..MODE_IMAGES.min(basis.len()) {
                let image = normalized(ImageSignal { shape: self.cfg.operator.shape, data: basis.vector(j) });
                self.image(&format!("mode-{topo}-{}", j + 1), &image)?;
            }
        }
        self.csv("spectrum.csv", &["topology", "j", "mu", "mu_over_max"], &rows)?;
        self.svg("spectrum.svg", ChartLabels::new("Null-restricted spectrum", "mode j", "mu_j"), &series)
    }

    fn coverage(&mut self) -> Result<()> {
        let q = self.q();
        let mut rows = Vec::new();
        let mut series = Vec::new();
        for topo in self.cfg.topologies.clone() {
            let l = self.laplacian(topo)?;
            let prior = self.prior(&l)?;
            let basis = self.full_basis(&l)?;
            let closed = coverage_closed_form(&prior, &basis)?;
            let empirical = if self.cfg.coverage_samples > 0 {
                let samples = sample_gmrf(&prior, self.cfg.operator.shape, self.cfg.coverage_samples, self.cfg.seed)?;
                Some(coverage_empirical(&samples, &self.h, &basis)?)
            } else {
                None
            };
            let lambda = prior.spectrum(&basis);
            for p in 1..=q {
                rows.push(vec![
                    topo.to_string().into(),
                    p.into(),
                    closed.at(p).into(),
                    empirical.as_ref().map_or(Cell::Text(String::new()), |c| c.at(p).into()),
                    (p as f64 / q as f64).into(),
                    coverage_lower_bound(&lambda, p)?.into(),
                ]);
            }
            series.push(curve_series(&format!("{topo} closed form"), &closed));
            if let Some(c) = &empirical {
                series.push(curve_series(&format!("{topo} empirical"), c));
            }
        }
        series.push(Series::new("p/q", vec![(0.0, 0.0), (q as f64, 1.0)]));
        self.csv("coverage.csv", &["topology", "p", "closed_form", "empirical", "linear", "lower_bound"], &rows)?;
        self.svg("coverage.svg", ChartLabels::new("Null-space coverage", "p", "C(p)"), &series)
    }

    fn predictability(&mut self) -> Result<()> {
        let mut rows = Vec::new();
        let mut series = Vec::new();
        for topo in self.cfg.topologies.clone() {
            let l = self.laplacian(topo)?;
            let prior = self.prior(&l)?;
            let (p, full) = self.resolve_p(&l)?;
            let basis = match full {
                Some(full) => full.truncate(p)?,
                None => self.basis(&l, p)?,
            };
            let report = per_mode_predictability(&prior, &self.h, &basis, self.cfg.sigma2)?;
            for j in 0..report.len() {
                rows.push(vec![
                    topo.to_string().into(),
                    (j + 1).into(),
                    report.mu[j].into(),
                    report.rho2[j].into(),
                    report.bound[j].into(),
                    report.c[j].into(),
                ]);
            }
            series.push(Series::new(
                format!("{topo} rho^2"),
                report.rho2.iter().enumerate().map(|(j, &r)| ((j + 1) as f64, r)).collect(),
            ));
        }
        self.csv("predictability.csv", &["topology", "j", "mu", "rho2", "bound", "c"], &rows)?;
        self.svg("predictability.svg", ChartLabels::new("Per-mode predictability", "mode j", "rho_j^2"), &series)
    }

    fn select_p(&mut self) -> Result<()> {
        let q = self.q();
        let params = self.cfg.select;
        let mut rows = Vec::new();
        let mut series = Vec::new();
        for topo in self.cfg.topologies.clone() {
            let l = self.laplacian(topo)?;
            let basis = self.full_basis(&l)?;
            let curve = coverage_closed_form(&self.prior(&l)?, &basis)?;
            let p = select_p(&curve, params);
            rows.push(vec![
                topo.to_string().into(),
                q.into(),
                p.into(),
                curve.at(p).into(),
                params.kappa.into(),
                params.delta.into(),
                params.plateau.into(),
            ]);
            series.push(curve_series(&topo.to_string(), &curve));
        }
        series.push(Series::new("kappa", vec![(0.0, params.kappa), (q as f64, params.kappa)]));
        self.csv("select_p.csv", &["topology", "q", "p_star", "coverage", "kappa", "delta", "plateau"], &rows)?;
        self.svg("select_p.svg", ChartLabels::new("Coverage and selected p", "p", "C(p)"), &series)
    }

    fn minimax(&mut self) -> Result<()> {
        let tau = self.cfg.tau;
        let mut rows = Vec::new();
        let mut sweep = Vec::new();
        let mut series = Vec::new();
        for topo in self.cfg.topologies.clone() {
            let l = self.laplacian(topo)?;
            let (p, full) = self.resolve_p(&l)?;
            if p >= self.q() {
                return Err(Error::Config(format!("the minimax bound needs p < q = {}, got p = {p}", self.q())));
            }
            let basis = match full {
                Some(full) => full,
                None => self.basis(&l, p + 1)?,
            };
            let bound = minimax_bound(&basis, p, tau)?;
            let witness = subspace_residual(&basis, p, &bound.witness)?;
            let t = NullRestricted::new(&self.h, &l)?;
            let mut max_sampled = 0.0f64;
            for x in sample_ellipsoid(&t, tau, self.cfg.minimax_samples, self.cfg.seed)? {
                max_sampled = max_sampled.max(subspace_residual(&basis, p, &x)?);
            }
            rows.push(vec![
                topo.to_string().into(),
                p.into(),
                tau.into(),
                bound.bound.into(),
                witness.into(),
                max_sampled.into(),
            ]);
            let mut points = Vec::with_capacity(p);
            for pp in 1..=p {
                let b = minimax_bound(&basis, pp, tau)?.bound;
                sweep.push(vec![topo.to_string().into(), pp.into(), b.into()]);
                points.push((pp as f64, b));
            }
            series.push(Series::new(topo.to_string(), points));
        }
        self.csv(
            "minimax.csv",
            &["topology", "p", "tau", "bound", "witness_residual", "max_sampled_residual"],
            &rows,
        )?;
        self.csv("minimax_sweep.csv", &["topology", "p", "bound"], &sweep)?;
        self.svg("minimax.svg", ChartLabels::new("Minimax width", "p", "tau / mu_(p+1)"), &series)
    }

    fn gsnr_arms(&self, gamma_g: f64) -> Vec<Arm> {
        std::iter::once(Arm::baseline())
            .chain(self.cfg.topologies.iter().map(|&t| Arm::gsnr(t, gamma_g)))
            .collect()
    }

    fn reconstruct(&mut self) -> Result<()> {
        let setup = resolve_setup(self.cfg, &self.h)?;
        let arms = self.gsnr_arms(self.cfg.solver.gamma_g);
        let report = run_trials(&setup, &arms, self.cfg.trials, self.cfg.seed)?;
        self.trial_artifacts("reconstruct", &report, 0.0)
    }

    fn perturbed(&mut self) -> Result<()> {
        let mut setup = resolve_setup(self.cfg, &self.h)?;
        setup.xi_sigma = self.cfg.xi_sigma;
        let arms = self.gsnr_arms(self.cfg.solver.gamma_g);
        let report = run_trials(&setup, &arms, self.cfg.trials, self.cfg.seed)?;
        self.trial_artifacts("perturb", &report, self.cfg.xi_sigma)
    }

    fn ablation(&mut self) -> Result<()> {
        let setup = resolve_setup(self.cfg, &self.h)?;
        let mut arms = vec![Arm::baseline()];
        for &topo in &self.cfg.topologies {
            for &gg in &self.cfg.gamma_g_values {
                arms.push(Arm { name: format!("gsnr-{topo}-gg{}", fmt_f64(gg)), basis: Some(topo), gamma_g: gg });
            }
        }
        let report = run_trials(&setup, &arms, self.cfg.trials, self.cfg.seed)?;
        self.trial_artifacts("ablation", &report, 0.0)?;

        let mut rows = Vec::new();
        for &topo in &self.cfg.topologies {
            let l = self.laplacian(topo)?;
            for &gg in &self.cfg.gamma_g_values {
                let s = spectral_step_size(&self.h, &l, gg, self.cfg.solver.delta, self.cfg.seed)?;
                rows.push(vec![
                    topo.to_string().into(),
                    gg.into(),
                    s.alpha_star.into(),
                    s.lambda_min.into(),
                    s.lambda_max.into(),
                    s.kappa.into(),
                    s.positive_kappa.into(),
                    s.rho_star.into(),
                ]);
            }
        }
        self.csv(
            "ablation_spectral.csv",
            &["topology", "gamma_g", "alpha_star", "lambda_min", "lambda_max", "kappa", "positive_kappa", "rho_star"],
            &rows,
        )
    }

    /// Per-trial table, per-arm summary, mean PSNR traces and first-trial images.
    fn trial_artifacts(&mut self, prefix: &str, report: &TrialReport, xi_sigma: f64) -> Result<()> {
        let baseline = report.arm("baseline").map(|a| a.final_psnr.clone());
        let mut rows = Vec::new();
        for arm in &report.arms {
            for (t, &v) in arm.final_psnr.iter().enumerate() {
                let gap = baseline.as_ref().map_or(f64::NAN, |b| v - b[t]);
                rows.push(vec![
                    t.into(),
                    arm.name.as_str().into(),
                    v.into(),
                    gap.into(),
                    arm.plateau_iters[t].into(),
                ]);
            }
        }
        self.csv(
            &format!("{prefix}_trials.csv"),
            &["trial", "arm", "final_psnr", "gap_vs_baseline", "plateau_iters"],
            &rows,
        )?;

        let mut summary = Vec::new();
        for arm in &report.arms {
            let gaps: Vec<f64> = match &baseline {
                Some(b) => arm.final_psnr.iter().zip(b).map(|(a, b)| a - b).collect(),
                None => Vec::new(),
            };
            let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
            let mean_gap = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
            summary.push(vec![
                arm.name.as_str().into(),
                report.p.into(),
                report.trials.into(),
                xi_sigma.into(),
                arm.mean_psnr().into(),
                mean_gap.into(),
                min_gap.into(),
                arm.mean_plateau().into(),
            ]);
        }
        self.csv(
            &format!("{prefix}_summary.csv"),
            &["arm", "p", "trials", "xi_sigma", "mean_psnr", "mean_gap", "min_gap", "mean_plateau_iters"],
            &summary,
        )?;

        let series: Vec<Series> = report
            .arms
            .iter()
            .map(|a| Series::new(a.name.clone(), a.mean_trace.iter().enumerate().map(|(k, &v)| (k as f64, v)).collect()))
            .collect();
        self.svg(
            &format!("{prefix}_psnr.svg"),
            ChartLabels::new("Mean PSNR per iteration", "iteration", "PSNR (dB)"),
            &series,
        )?;
        self.image(&format!("{prefix}-truth"), &report.example_truth)?;
        for arm in &report.arms {
            self.image(&format!("{prefix}-{}", arm.name), &arm.example)?;
        }
        Ok(())
    }

    fn manifest(&mut self, kind: ExperimentKind, wall_seconds: f64) -> Result<()> {
        let mut text = String::new();
        text.push_str(&format!("kind = {kind}\n"));
        text.push_str(&format!("seed = {}\n", self.cfg.seed));
        text.push_str(&format!("config_sha256 = {}\n", self.cfg.hash));
        text.push_str(&format!("operator = {}\n", self.h.descriptor()));
        for key in &self.cache_keys {
            text.push_str(&format!("cache_key = {key}\n"));
        }
        for file in &self.files {
            text.push_str(&format!("file = {file}\n"));
        }
        text.push_str(&format!("wall_seconds = {wall_seconds:.3}\n"));
        let path = self.path("manifest.txt");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn curve_series(name: &str, curve: &CoverageCurve) -> Series {
    Series::new(name, curve.values.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v)).collect())
}

/// Affine rescale to `[0, 1]` for display.
fn normalized(image: ImageSignal) -> ImageSignal {
    let (lo, hi) = (image.data.min(), image.data.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    ImageSignal { shape: image.shape, data: image.data.map(|v| (v - lo) / span) }
}
