//! Paired reconstruction trials: baseline PnP against GSNR variants on a
//! shared synthetic corpus.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::denoise::{Denoiser, WaveletFilter};
use crate::error::{Error, Result};
use crate::experiment::corpus::{generate_corpus, generate_gmrf_corpus, CorpusKind};
use crate::experiment::perturb::perturb_operator;
use crate::gmrf::{coverage_closed_form, select_p, GmrfPrior, SelectPParams};
use crate::graph::{GraphLaplacian, Topology};
use crate::linop::{add_gaussian_noise, ImageShape, ImageSignal, LinearMap, OperatorSpec, DEFAULT_NOISE_SIGMA2};
use crate::predictor::{wiener_predictor, CoeffPredictor};
use crate::solver::{iterations_to_plateau, run_gsnr_pgd, GsnrProblem, SolverConfig, Step};
use crate::spectral::{eig_dense_null, NullSpectralBasis};

/// Seed offsets separating the independent random streams of a trial set.
const TRAIN_STREAM: u64 = 0x7261_696e;
const NOISE_STREAM: u64 = 0x6e6f_6973;
const OPERATOR_STREAM: u64 = 0x6f70_6572;

/// One solver variant of a paired comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    /// Laplacian whose null-restricted modes form `S`; `None` disables the GSNR term.
    pub basis: Option<Topology>,
    pub gamma_g: f64,
}

impl Arm {
    /// Plain PnP: `γ = γ_g = 0`.
    pub fn baseline() -> Self {
        Arm { name: "baseline".into(), basis: None, gamma_g: 0.0 }
    }

    pub fn gsnr(topology: Topology, gamma_g: f64) -> Self {
        Arm { name: format!("gsnr-{topology}"), basis: Some(topology), gamma_g }
    }
}

/// Shared settings of a reconstruction trial set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionSetup {
    pub shape: ImageShape,
    pub operator: OperatorSpec,
    pub sigma2: f64,
    /// Weights of the 4-neighbour GMRF that generates the images.
    pub prior_alpha: f64,
    pub prior_epsilon: f64,
    /// Solver settings shared by all arms; `gamma` applies to GSNR arms only
    /// and `gamma_g` is taken from each arm.
    pub solver: SolverConfig,
    /// Number of modes; `None` selects it from the data prior's coverage curve.
    pub p: Option<usize>,
    pub select: SelectPParams,
    /// Entrywise std of the forward-model error; reconstruction uses the nominal operator.
    pub xi_sigma: f64,
    /// Training images used to estimate the rescaled prior.
    pub train_count: usize,
    /// Source of the test images; GMRF samples are drawn from the data prior.
    pub corpus: CorpusKind,
}

impl Default for ReconstructionSetup {
    fn default() -> Self {
        ReconstructionSetup {
            shape: ImageShape { channels: 1, height: 32, width: 32 },
            operator: OperatorSpec::BlockAverageSr { factor: 4 },
            sigma2: DEFAULT_NOISE_SIGMA2,
            prior_alpha: 1.0,
            prior_epsilon: 0.01,
            // A shared fixed step keeps arms comparable; α = 1 is stable while
            // γ + γ_g·μ_max(T) + 1/16 stays below 2 on SR f=4.
            solver: SolverConfig {
                alpha: Step::Fixed(1.0),
                gamma: 1.0,
                gamma_g: 0.0,
                lambda: 1.0,
                iterations: 200,
                denoiser: Denoiser::WaveletSoft { filter: WaveletFilter::Db4, levels: 3, threshold: 0.05 },
                delta: 0.0,
                init_pinv: true,
            },
            p: None,
            select: SelectPParams::default(),
            xi_sigma: 0.0,
            train_count: 64,
            corpus: CorpusKind::GmrfSample,
        }
    }
}

/// Operators, bases and predictors shared by every trial.
#[derive(Debug, Clone)]
pub struct ReconstructionContext {
    pub h: LinearMap,
    pub data_prior: GmrfPrior,
    /// Prior of the rescaled images used by the Wiener predictors.
    pub scaled_prior: GmrfPrior,
    pub p: usize,
    graph: GraphLaplacian,
    laplacians: Vec<(Topology, GraphLaplacian)>,
    models: Vec<(Topology, NullSpectralBasis, CoeffPredictor)>,
}

impl ReconstructionContext {
    pub fn build(setup: &ReconstructionSetup, arms: &[Arm], seed: u64) -> Result<Self> {
        let shape = setup.shape;
        let h = LinearMap::build(&setup.operator, shape)?;
        let graph = GraphLaplacian::for_shape(Topology::Grid4NN, shape)?;
        let data_prior = GmrfPrior::new(&graph, setup.prior_alpha, setup.prior_epsilon)?;
        let train = generate_gmrf_corpus(&data_prior, shape, setup.train_count.max(1), seed ^ TRAIN_STREAM)?;
        let scaled_prior = data_prior.scaled(train.mean_scale_sq().sqrt())?;

        let p = match setup.p {
            Some(p) => p,
            None => {
                let full = eig_dense_null(&h, &graph, h.null_dim())?;
                select_p(&coverage_closed_form(&data_prior, &full)?, setup.select)
            }
        };
        if p == 0 || p > h.null_dim() {
            return Err(Error::InvalidArgument(format!("p = {p} must lie in 1..={}", h.null_dim())));
        }

        let mut laplacians = Vec::new();
        let mut models = Vec::new();
        for topo in arms.iter().filter_map(|a| a.basis) {
            if models.iter().any(|(t, _, _)| *t == topo) {
                continue;
            }
            let l = GraphLaplacian::for_shape(topo, shape)?;
            let basis = eig_dense_null(&h, &l, p)?;
            let g = wiener_predictor(&scaled_prior, &h, &basis, setup.sigma2)?;
            laplacians.push((topo, l));
            models.push((topo, basis, g));
        }
        Ok(ReconstructionContext { h, data_prior, scaled_prior, p, graph, laplacians, models })
    }

    pub fn model(&self, topology: Topology) -> Option<(&NullSpectralBasis, &CoeffPredictor)> {
        self.models.iter().find(|(t, _, _)| *t == topology).map(|(_, b, g)| (b, g))
    }

    /// Solves one measurement with one arm.
    pub fn solve(
        &self,
        setup: &ReconstructionSetup,
        arm: &Arm,
        y: &DVector<f64>,
        truth: &ImageSignal,
        seed: u64,
    ) -> Result<crate::solver::RunTrace> {
        let mut config = setup.solver.clone();
        config.gamma_g = arm.gamma_g;
        let mut problem = GsnrProblem::new(&self.h, &self.graph, y.clone())?;
        match arm.basis {
            Some(topo) => {
                let (basis, g) = self
                    .model(topo)
                    .ok_or_else(|| Error::InvalidArgument(format!("no basis prepared for {topo}")))?;
                problem = problem.with_gsnr(basis, g.predict(y)?)?;
            }
            None => config.gamma = 0.0,
        }
        run_gsnr_pgd(&problem, &config, seed, Some(truth), None)
    }

    pub fn laplacian(&self, topology: Topology) -> Option<&GraphLaplacian> {
        self.laplacians.iter().find(|(t, _)| *t == topology).map(|(_, l)| l)
    }
}

/// Per-arm outcome over all trials.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub name: String,
    pub final_psnr: Vec<f64>,
    /// First iteration within [`PLATEAU_TOL_DB`] of each trial's final PSNR.
    pub plateau_iters: Vec<usize>,
    /// PSNR trace averaged over trials.
    pub mean_trace: Vec<f64>,
    /// Reconstruction of the first trial.
    pub example: ImageSignal,
}

impl ArmSummary {
    pub fn mean_psnr(&self) -> f64 {
        mean(&self.final_psnr)
    }

    pub fn mean_plateau(&self) -> f64 {
        self.plateau_iters.iter().sum::<usize>() as f64 / self.plateau_iters.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub p: usize,
    pub trials: usize,
    pub arms: Vec<ArmSummary>,
    /// Ground truth of the first trial.
    pub example_truth: ImageSignal,
}

impl TrialReport {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.name == name)
    }

    /// Per-trial PSNR differences `a − b`.
    pub fn paired_gaps(&self, a: &str, b: &str) -> Option<Vec<f64>> {
        let (a, b) = (self.arm(a)?, self.arm(b)?);
        Some(a.final_psnr.iter().zip(&b.final_psnr).map(|(x, y)| x - y).collect())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Tolerance used for the iterations-to-plateau statistic.
pub const PLATEAU_TOL_DB: f64 = 0.1;

/// Runs `trials` paired trials: each trial draws one image and one noisy
/// measurement and solves it with every arm. Trials run in parallel and the
/// result is independent of the thread count.
pub fn run_trials(setup: &ReconstructionSetup, arms: &[Arm], trials: usize, seed: u64) -> Result<TrialReport> {
    if trials == 0 || arms.is_empty() {
        return Err(Error::InvalidArgument("need at least one trial and one arm".into()));
    }
    let ctx = ReconstructionContext::build(setup, arms, seed)?;
    let corpus = match setup.corpus {
        CorpusKind::GmrfSample => generate_gmrf_corpus(&ctx.data_prior, setup.shape, trials, seed)?,
        kind => generate_corpus(kind, setup.shape, trials, seed)?,
    };
    let per_trial: Vec<Vec<crate::solver::RunTrace>> = corpus
        .images
        .par_iter()
        .enumerate()
        .map(|(t, x)| {
            let trial_seed = seed.wrapping_add(t as u64);
            let sensing = if setup.xi_sigma > 0.0 {
                perturb_operator(&ctx.h, setup.xi_sigma, trial_seed ^ OPERATOR_STREAM)?
            } else {
                ctx.h.clone()
            };
            let mut y = sensing.apply(&x.data)?;
            add_gaussian_noise(&mut y, setup.sigma2, &mut ChaCha8Rng::seed_from_u64(trial_seed ^ NOISE_STREAM));
            arms.iter().map(|arm| ctx.solve(setup, arm, &y, x, trial_seed)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let arms = arms
        .iter()
        .enumerate()
        .map(|(i, arm)| {
            let traces: Vec<&Vec<f64>> = per_trial.iter().map(|t| &t[i].psnr).collect();
            let len = traces[0].len();
            ArmSummary {
                name: arm.name.clone(),
                final_psnr: traces.iter().map(|t| *t.last().expect("nonempty trace")).collect(),
                plateau_iters: traces
                    .iter()
                    .map(|t| iterations_to_plateau(t, PLATEAU_TOL_DB).expect("nonempty trace"))
                    .collect(),
                mean_trace: (0..len).map(|k| mean(&traces.iter().map(|t| t[k]).collect::<Vec<_>>())).collect(),
                example: per_trial[0][i].final_x.clone(),
            }
        })
        .collect();
    Ok(TrialReport { p: ctx.p, trials, arms, example_truth: corpus.images[0].clone() })
}
