//! Acceptance suite: each criterion prints one PASS/FAIL line with its
//! measurements. The process exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gsnr::experiment::config::{ExperimentConfig, ExperimentKind};
use gsnr::experiment::runner::run_experiment;
use gsnr::experiment::trials::{run_trials, Arm, ReconstructionSetup};
use gsnr::gmrf::{
    coverage_closed_form, coverage_empirical, coverage_from_spectrum, minimax_bound, per_mode_predictability,
    sample_ellipsoid, sample_gmrf, select_p, subspace_residual, GmrfPrior, SelectPParams,
};
use gsnr::linalg::{gaussian_vector, max_principal_angle_sin};
use gsnr::solver::{contraction_rate, quadratic_fixed_point, run_gsnr_pgd, spectral_step_size, GsnrProblem, SolverConfig, Step};
use gsnr::spectral::{eig_dense_null, eig_smallest_null, LanczosOptions, NullRestricted};
use gsnr::{GraphLaplacian, ImageShape, LinearMap, OperatorSpec, Result, Topology};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn gray(size: usize) -> ImageShape {
    ImageShape::gray(size, size).unwrap()
}

fn build(spec: OperatorSpec, shape: ImageShape) -> Result<LinearMap> {
    LinearMap::build(&spec, shape)
}

fn laplacian(topology: Topology, shape: ImageShape) -> Result<GraphLaplacian> {
    GraphLaplacian::for_shape(topology, shape)
}

/// Small exact operators shared by the theory checks.
fn test_operators() -> Result<Vec<(&'static str, LinearMap)>> {
    Ok(vec![
        ("SR f=2 8x8", build(OperatorSpec::BlockAverageSr { factor: 2 }, gray(8))?),
        ("SR f=4 16x16", build(OperatorSpec::BlockAverageSr { factor: 4 }, gray(16))?),
        ("CS 0.25 16x16", build(OperatorSpec::hadamard_ratio(gray(16), 0.25), gray(16))?),
        (
            "Bayer 3x8x8",
            build(OperatorSpec::BayerMosaic { pattern: Default::default() }, ImageShape::new(3, 8, 8)?)?,
        ),
    ])
}

const GRAPHS: [Topology; 3] = [Topology::Grid4NN, Topology::Grid8NN, Topology::SymNormalized];

fn criterion_1() -> Result<Outcome> {
    let ops = vec![
        ("HadamardCS", build(OperatorSpec::hadamard_ratio(gray(32), 0.25), gray(32))?),
        ("BlockAverageSR", build(OperatorSpec::BlockAverageSr { factor: 4 }, gray(32))?),
        ("Bayer", build(OperatorSpec::BayerMosaic { pattern: Default::default() }, ImageShape::new(3, 32, 32)?)?),
        // Wide enough that the discarded singular values lie below 1e-9·σ_max.
        ("GaussianBlur", build(OperatorSpec::GaussianBlur { sigma: 2.5, threshold: 1e-9 }, gray(32))?),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut idem, mut sym, mut split, mut leak) = (0f64, 0f64, 0f64, 0f64);
    for (_, h) in &ops {
        for _ in 0..5 {
            let x = gaussian_vector(&mut rng, h.n()).normalize();
            let z = gaussian_vector(&mut rng, h.n()).normalize();
            let pn = h.project_null(&x)?;
            idem = idem.max((h.project_null(&pn)? - &pn).norm());
            sym = sym.max((pn.dot(&z) - x.dot(&h.project_null(&z)?)).abs());
            split = split.max((&x - h.project_range(&x)? - &pn).norm());
            leak = leak.max(h.apply(&pn)?.norm());
        }
    }
    let pass = idem <= 1e-10 && sym <= 1e-10 && split <= 1e-10 && leak <= 1e-8;
    Ok(Outcome {
        pass,
        detail: format!(
            "{} operators: idempotence {idem:.1e}, symmetry {sym:.1e}, split {split:.1e}, |H Pn x| {leak:.1e}",
            ops.len()
        ),
    })
}

fn criterion_2() -> Result<Outcome> {
    let cases = [
        ("SR f=4 16x16", build(OperatorSpec::BlockAverageSr { factor: 4 }, gray(16))?),
        ("CS 0.25 n=256", build(OperatorSpec::hadamard_ratio(gray(16), 0.25), gray(16))?),
    ];
    let (mut dmu, mut angle) = (0f64, 0f64);
    let mut compared = Vec::new();
    for (name, h) in &cases {
        for topo in GRAPHS {
            let l = laplacian(topo, h.shape())?;
            let all = eig_dense_null(h, &l, h.null_dim())?;
            // Extend past 32 until the cut does not split an eigenspace.
            let mu = all.eigenvalues();
            let mut k = 32;
            while k < mu.len() && mu[k] - mu[k - 1] < 1e-6 {
                k += 1;
            }
            let lz = eig_smallest_null(h, &l, k, &LanczosOptions::default())?;
            for (a, b) in lz.eigenvalues().iter().zip(mu) {
                dmu = dmu.max((a - b).abs());
            }
            let sin = max_principal_angle_sin(
                &all.vectors().columns(0, k).into_owned(),
                &lz.vectors().columns(0, k).into_owned(),
            );
            angle = angle.max(sin.asin());
            compared.push(format!("{name}/{topo}:{k}"));
        }
    }
    Ok(Outcome {
        pass: dmu <= 1e-8 && angle <= 1e-6,
        detail: format!("max |dmu| {dmu:.1e}, max angle {angle:.1e} rad over {}", compared.join(" ")),
    })
}

fn criterion_3() -> Result<Outcome> {
    let mut slack = f64::INFINITY;
    let mut identity_dev = 0f64;
    let mut gaps: BTreeMap<String, f64> = BTreeMap::new();
    for (name, h) in test_operators()? {
        let q = h.null_dim();
        for topo in GRAPHS.into_iter().chain([Topology::Identity]) {
            let l = laplacian(topo, h.shape())?;
            let basis = eig_dense_null(&h, &l, q)?;
            let prior = GmrfPrior::new(&l, 1.0, 0.01)?;
            let curve = coverage_closed_form(&prior, &basis)?;
            for p in 1..=q {
                let lin = p as f64 / q as f64;
                if topo == Topology::Identity {
                    identity_dev = identity_dev.max((curve.at(p) - lin).abs());
                } else {
                    slack = slack.min(curve.at(p) - lin);
                }
            }
            if topo != Topology::Identity && name == "SR f=2 8x8" {
                let samples = sample_gmrf(&prior, h.shape(), 5000, 3)?;
                let emp = coverage_empirical(&samples, &h, &basis)?;
                let gap = (1..=q).map(|p| (emp.at(p) - curve.at(p)).abs()).fold(0.0, f64::max);
                gaps.insert(format!("{name}/{topo}"), gap);
            }
        }
    }
    let worst_gap = gaps.values().copied().fold(0.0, f64::max);
    let pass = slack >= -1e-10 && identity_dev <= 1e-12 && worst_gap <= 0.02;
    let gap_list: Vec<String> = gaps.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
    Ok(Outcome {
        pass,
        detail: format!(
            "min C(p)-p/q {slack:.2e}, identity |C(p)-p/q| {identity_dev:.1e}, empirical gap (tol 0.02): {}",
            gap_list.join(", ")
        ),
    })
}

fn criterion_4() -> Result<Outcome> {
    let h = build(OperatorSpec::BlockAverageSr { factor: 4 }, gray(16))?;
    let tau = 1.0;
    let (mut witness_err, mut excess, mut identity_dev) = (0f64, f64::NEG_INFINITY, 0f64);
    let mut samples = 0;
    for topo in [Topology::Grid4NN, Topology::Grid8NN, Topology::SymNormalized, Topology::Identity] {
        let l = laplacian(topo, h.shape())?;
        let basis = eig_dense_null(&h, &l, h.null_dim())?;
        let t = NullRestricted::new(&h, &l)?;
        for p in [1, 8, 26, 100] {
            let mb = minimax_bound(&basis, p, tau)?;
            let expected = tau / basis.eigenvalues()[p];
            witness_err = witness_err.max((subspace_residual(&basis, p, &mb.witness)? - expected).abs());
            if topo == Topology::Identity {
                identity_dev = identity_dev.max((mb.bound - tau).abs());
            }
            for x in sample_ellipsoid(&t, tau, 1000, p as u64)? {
                excess = excess.max(subspace_residual(&basis, p, &x)? - mb.bound);
                samples += 1;
            }
        }
    }
    Ok(Outcome {
        pass: witness_err <= 1e-8 && excess <= 0.0 && identity_dev <= 1e-8,
        detail: format!(
            "witness error {witness_err:.1e}, max sample residual minus bound {excess:.3e} over {samples} samples, identity |bound-tau| {identity_dev:.1e}"
        ),
    })
}

fn criterion_5() -> Result<Outcome> {
    let (mut violation, mut identity_max, mut eq_err) = (f64::NEG_INFINITY, 0f64, 0f64);
    let mut modes = 0;
    for (_, h) in test_operators()? {
        for topo in GRAPHS.into_iter().chain([Topology::Identity]) {
            let l = laplacian(topo, h.shape())?;
            let basis = eig_dense_null(&h, &l, h.null_dim())?;
            let prior = GmrfPrior::new(&l, 1.0, 0.01)?;
            let r = per_mode_predictability(&prior, &h, &basis, 0.05)?;
            modes += r.len();
            violation = violation.max(r.worst_violation());
            if topo == Topology::Identity {
                identity_max = identity_max.max(r.rho2.iter().copied().fold(0.0, f64::max));
            }
            // Noise-free measurements of the whole range: y determines x_r exactly.
            let exact = per_mode_predictability(&prior, &h, &basis, 0.0)?;
            for (rho, bound) in exact.rho2.iter().zip(&exact.bound) {
                eq_err = eq_err.max((rho - bound).abs());
            }
        }
    }
    Ok(Outcome {
        pass: violation <= 1e-8 && identity_max <= 1e-8 && eq_err <= 1e-8,
        detail: format!(
            "{modes} modes: max rho2-bound {violation:.1e}, identity max rho2 {identity_max:.1e}, noise-free |rho2-bound| {eq_err:.1e}"
        ),
    })
}

fn criterion_6() -> Result<Outcome> {
    let h = build(OperatorSpec::BlockAverageSr { factor: 4 }, gray(32))?;
    let l = laplacian(Topology::Grid4NN, h.shape())?;
    let step = spectral_step_size(&h, &l, 0.1, 0.0, 1)?;
    let y = gaussian_vector(&mut ChaCha8Rng::seed_from_u64(7), h.m());
    let problem = GsnrProblem::new(&h, &l, y)?;
    let cfg = SolverConfig {
        alpha: Step::Fixed(step.alpha_star),
        gamma: 0.0,
        gamma_g: 0.1,
        iterations: 100,
        ..Default::default()
    };
    let xs = quadratic_fixed_point(&problem, &cfg)?;
    let trace = run_gsnr_pgd(&problem, &cfg, 0, None, Some(&xs))?;
    let rate = contraction_rate(&trace)?.max_after_burn_in;
    let base = spectral_step_size(&h, &l, 0.0, 0.0, 1)?;
    let contracts = rate <= step.rho_star + 1e-6;
    let better = step.kappa < base.positive_kappa;
    Ok(Outcome {
        pass: contracts && better,
        detail: format!(
            "rate {rate:.6} vs rho* {:.6} ({}), kappa(0.1) {:.4} vs positive kappa(0) {:.4} ({})",
            step.rho_star,
            if contracts { "ok" } else { "too slow" },
            step.kappa,
            base.positive_kappa,
            if better { "ok" } else { "not lower" }
        ),
    })
}

fn criterion_7() -> Result<Outcome> {
    let params = SelectPParams::default();
    let flat = select_p(&coverage_from_spectrum(&[1.0; 50])?, params);
    let mut one_hot = vec![0.0; 50];
    one_hot[0] = 1.0;
    let hot = select_p(&coverage_from_spectrum(&one_hot)?, params);
    // C(3) = 0.96 ≥ 0.95 and every later increment is 1e-4 ≤ δ, so p* = 3.
    let mut crafted = vec![0.5, 0.3, 0.16];
    crafted.extend(std::iter::repeat_n(1e-4, 400));
    let plateau = select_p(&coverage_from_spectrum(&crafted)?, params);
    Ok(Outcome {
        pass: flat == 50 && hot == 1 && plateau == 3,
        detail: format!("flat {flat} (want 50), one-hot {hot} (want 1), plateau {plateau} (want 3)"),
    })
}

fn criterion_8() -> Result<Outcome> {
    let setup = ReconstructionSetup::default();
    let graph_arm = Arm { name: "gsnr-Grid4NN-gg0.1".into(), basis: Some(Topology::Grid4NN), gamma_g: 0.1 };
    let arms = [
        Arm::baseline(),
        Arm::gsnr(Topology::Grid4NN, 0.0),
        Arm::gsnr(Topology::Identity, 0.0),
        graph_arm,
    ];
    let report = run_trials(&setup, &arms, 20, 42)?;
    let mean = |n: &str| report.arm(n).map(|a| a.mean_psnr()).unwrap_or(f64::NAN);
    let plateau = |n: &str| report.arm(n).map(|a| a.mean_plateau()).unwrap_or(f64::NAN);
    let (base, grid, ident) = (mean("baseline"), mean("gsnr-Grid4NN"), mean("gsnr-Identity"));
    let (p0, p1) = (plateau("gsnr-Grid4NN"), plateau("gsnr-Grid4NN-gg0.1"));
    let pass = grid >= ident && ident >= base && grid - base >= 0.5 && p1 < p0;
    Ok(Outcome {
        pass,
        detail: format!(
            "{} trials, p={}: PSNR baseline {base:.3}, Identity-L {ident:.3}, Grid4NN {grid:.3} (gap {:.3} dB); plateau gg=0 {p0:.2} vs gg=0.1 {p1:.2}",
            report.trials,
            report.p,
            grid - base
        ),
    })
}

fn criterion_9() -> Result<Outcome> {
    let setup = ReconstructionSetup { xi_sigma: 0.005, ..Default::default() };
    let report = run_trials(&setup, &[Arm::baseline(), Arm::gsnr(Topology::Grid4NN, 0.0)], 20, 42)?;
    let gaps = report.paired_gaps("gsnr-Grid4NN", "baseline").unwrap_or_default();
    let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let positive = gaps.iter().filter(|g| **g > 0.0).count();
    Ok(Outcome {
        pass: gaps.len() >= 20 && positive == gaps.len(),
        detail: format!("{positive}/{} paired gaps positive, min gap {min:.3} dB", gaps.len()),
    })
}

const SMALL_SR: &str = "[operator]\nkind = BlockAverageSr\nfactor = 4\nheight = 16\nwidth = 16\n";

fn small_configs() -> Vec<(ExperimentKind, String)> {
    let trial_solver = "[solver]\nstep = 1\niterations = 40\ndenoiser = wavelet\nfilter = haar\nlevels = 2\nthreshold = 0.05\n";
    vec![
        (ExperimentKind::Spectrum, format!("kind = Spectrum\nseed = 5\n{SMALL_SR}[graph]\ntopologies = Grid4NN, Identity\n")),
        (
            ExperimentKind::Coverage,
            format!("kind = Coverage\nseed = 5\n{SMALL_SR}[graph]\ntopologies = Grid8NN\n[select]\ncoverage_samples = 200\n"),
        ),
        (
            ExperimentKind::Predictability,
            format!("kind = Predictability\nseed = 5\n{SMALL_SR}[graph]\ntopologies = Grid4NN\n[select]\np = 20\n"),
        ),
        (ExperimentKind::SelectP, format!("kind = SelectP\nseed = 5\n{SMALL_SR}[graph]\ntopologies = SymNormalized\n")),
        (
            ExperimentKind::MinimaxBound,
            format!("kind = MinimaxBound\nseed = 5\n{SMALL_SR}[graph]\ntopologies = Grid4NN\n[select]\np = 0.1n\n[minimax]\nsamples = 100\n"),
        ),
        (
            ExperimentKind::Reconstruct,
            format!("kind = Reconstruct\nseed = 5\ntrials = 3\n{SMALL_SR}[graph]\ntopologies = Grid4NN\n{trial_solver}"),
        ),
        (
            ExperimentKind::ConvergenceAblation,
            format!("kind = ConvergenceAblation\nseed = 5\ntrials = 3\n{SMALL_SR}[graph]\ntopologies = Grid4NN\n{trial_solver}gamma_g = 0, 0.1\n"),
        ),
        (
            ExperimentKind::PerturbedOperator,
            format!("kind = PerturbedOperator\nseed = 5\ntrials = 3\n{SMALL_SR}[graph]\ntopologies = Grid4NN\n{trial_solver}"),
        ),
    ]
}

fn csv_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| gsnr::Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| gsnr::Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let bytes = fs::read(&path).map_err(|e| gsnr::Error::io(&path, e))?;
            out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), bytes);
        }
    }
    Ok(out)
}

fn criterion_10() -> Result<Outcome> {
    let root = tempfile::tempdir().map_err(|e| gsnr::Error::io(Path::new("tempdir"), e))?;
    let mut files = 0;
    let mut differing = Vec::new();
    for (kind, text) in small_configs() {
        let cfg = ExperimentConfig::parse(&text)?;
        let mut runs = Vec::new();
        for rep in 0..2 {
            let dir = root.path().join(format!("{}-{rep}", kind.command()));
            run_experiment(&cfg, kind, &dir)?;
            runs.push(csv_bytes(&dir)?);
        }
        files += runs[0].len();
        if runs[0].is_empty() || runs[0] != runs[1] {
            differing.push(kind.command());
        }
    }
    Ok(Outcome {
        pass: differing.is_empty(),
        detail: format!("{files} CSVs from 8 experiment kinds, differing: {differing:?}"),
    })
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Result<Outcome>); 10] = [
        ("projector/RNSD suite", Duration::from_secs(10), criterion_1),
        ("Lanczos vs dense oracle", Duration::from_secs(60), criterion_2),
        ("coverage", Duration::from_secs(120), criterion_3),
        ("minimax width", Duration::from_secs(30), criterion_4),
        ("per-mode predictability", Duration::from_secs(60), criterion_5),
        ("convergence rate and conditioning", Duration::from_secs(60), criterion_6),
        ("automatic p", Duration::from_secs(1), criterion_7),
        ("reconstruction ordering", Duration::from_secs(600), criterion_8),
        ("inexact operator", Duration::from_secs(600), criterion_9),
        ("determinism", Duration::from_secs(600), criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {detail} [{:.2} s, budget {} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
