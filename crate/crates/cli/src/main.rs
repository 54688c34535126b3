//! `objscale` command-line front end.
//!
//! Exit codes: 0 on success, 1 for input or usage errors, 2 when the
//! inputs are valid but the computation cannot produce a result.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use objscale::eval::{ate_rmse, load_tum, rse, save_tum, AlignMode, EvalError};
use objscale::optimizer::{solve, JacobianMode, OptimizerError, Problem, SolverConfig};
use objscale::priors::{builtin_sample_priors, load_priors, PriorRepository};
use objscale::scale::{run_pipeline_with, PipelineConfig, ScaleError};
use objscale::sim::{
    export_trajectories, simulate, with_decoy_priors, MisclassTarget, NoiseConfig, SceneSpec, UnscaledMap,
};

use report::{EstimateReport, RunRecord};

#[derive(Parser, Debug)]
#[command(name = "objscale", version, about = "Metric scale recovery for monocular object maps")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Indoor,
    Outdoor,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    None,
    Rigid,
    Sim3,
}

impl From<Mode> for AlignMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::None => AlignMode::None,
            Mode::Rigid => AlignMode::Rigid,
            Mode::Sim3 => AlignMode::Sim3,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene and everything a mapper would observe.
    Simulate {
        #[arg(long, value_enum, conflicts_with = "spec", required_unless_present = "spec")]
        preset: Option<Preset>,
        /// Scene spec JSON instead of a preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Prior file; defaults to the built-in sample priors.
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long)]
        true_scale: Option<f64>,
        /// Log-normal deviation of reconstructed dimensions.
        #[arg(long, default_value_t = 0.0)]
        dim_noise: f64,
        #[arg(long, default_value_t = 0.0)]
        bbox_noise: f64,
        #[arg(long, default_value_t = 0.0)]
        pixel_noise: f64,
        #[arg(long, default_value_t = 0.0)]
        point_jitter: f64,
        #[arg(long, default_value_t = 0.0)]
        misclass_rate: f64,
        /// Relabel misclassified objects to decoy classes with priors scaled by this factor.
        #[arg(long)]
        decoy_factor: Option<f64>,
    },
    /// Recover the metric scale of an unscaled map.
    Estimate {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        priors: PathBuf,
        #[arg(long)]
        no_outlier_elim: bool,
        #[arg(long)]
        no_dim_select: bool,
        #[arg(long)]
        no_uncertainty: bool,
        /// Re-simulate the map under each seed in `A..B` (inclusive).
        #[arg(long)]
        seeds: Option<String>,
        /// Include wall-clock timings in the written report.
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run joint bundle adjustment on a problem file.
    Optimize {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        /// Huber threshold in whitened units.
        #[arg(long)]
        huber: Option<f64>,
        /// Use closed-form Jacobians where available.
        #[arg(long)]
        analytic: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an estimated trajectory against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "none")]
        mode: Mode,
        #[arg(long, default_value_t = objscale::eval::DEFAULT_MAX_DT)]
        max_dt: f64,
        /// Scale that was applied to the estimate; with `--mode sim3` its RSE
        /// against the recovered alignment scale is reported.
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Input(anyhow::Error),
    Domain(anyhow::Error),
}

type CmdResult = Result<(), Failure>;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn domain<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Domain(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Simulate {
            preset,
            spec,
            seed,
            out,
            priors,
            true_scale,
            dim_noise,
            bbox_noise,
            pixel_noise,
            point_jitter,
            misclass_rate,
            decoy_factor,
        } => {
            let noise = NoiseConfig {
                bbox_sigma_px: bbox_noise,
                pixel_sigma_px: pixel_noise,
                dim_noise_frac: dim_noise,
                misclassification_rate: misclass_rate,
                misclass_target: if decoy_factor.is_some() {
                    MisclassTarget::Decoy
                } else {
                    MisclassTarget::Uniform
                },
                point_jitter,
                rng_seed: seed,
                ..NoiseConfig::default()
            };
            cmd_simulate(preset, spec.as_deref(), priors.as_deref(), true_scale, decoy_factor, noise, seed, &out)
        }
        Command::Estimate {
            map,
            priors,
            no_outlier_elim,
            no_dim_select,
            no_uncertainty,
            seeds,
            timing,
            out,
        } => {
            let cfg = PipelineConfig {
                outlier_elimination: !no_outlier_elim,
                dimension_selection: !no_dim_select,
                uncertainty: !no_uncertainty,
                ..PipelineConfig::default()
            };
            cmd_estimate(&map, &priors, &cfg, seeds.as_deref(), timing, &out)
        }
        Command::Optimize {
            problem,
            max_iters,
            huber,
            analytic,
            out,
        } => {
            let cfg = SolverConfig {
                max_iterations: max_iters,
                huber_delta: huber,
                jacobians: if analytic { JacobianMode::Analytic } else { JacobianMode::Numeric },
                ..SolverConfig::default()
            };
            cmd_optimize(&problem, &cfg, &out)
        }
        Command::Eval {
            est,
            gt,
            mode,
            max_dt,
            scale,
            out,
        } => cmd_eval(&est, &gt, mode.into(), max_dt, scale, &out),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// Error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn write_file(path: &Path, text: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(input)?;
    }
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(input)
}

/// `report.json` -> `report.csv`; `solved.json` -> `solved.report.json`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn read_priors(path: Option<&Path>) -> Result<PriorRepository, Failure> {
    match path {
        Some(p) => load_priors(p).map_err(input),
        None => Ok(builtin_sample_priors()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    preset: Option<Preset>,
    spec_path: Option<&Path>,
    priors_path: Option<&Path>,
    true_scale: Option<f64>,
    decoy_factor: Option<f64>,
    noise: NoiseConfig,
    seed: u64,
    out: &Path,
) -> CmdResult {
    let mut spec = match (preset, spec_path) {
        (_, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(input)?;
            serde_json::from_str::<SceneSpec>(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(input)?
        }
        (Some(Preset::Indoor), None) => SceneSpec::indoor(),
        (Some(Preset::Outdoor), None) => SceneSpec::outdoor(),
        (None, None) => return Err(input(anyhow!("either --preset or --spec is required"))),
    };
    if let Some(s) = true_scale {
        spec.true_scale = s;
    }
    let mut priors = read_priors(priors_path)?;
    if let Some(f) = decoy_factor {
        if !(f > 0.0) {
            return Err(input(anyhow!("--decoy-factor must be positive")));
        }
        priors = with_decoy_priors(&priors, f);
    }

    let (scene, map, obs) = simulate(&spec, &noise, &priors, seed).map_err(input)?;
    let (gt, est) = export_trajectories(&scene.cameras, &map.cameras).map_err(domain)?;
    let problem = map.to_problem(&scene.intrinsics, &obs);

    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(input)?;
    write_file(&out.join("scene.json"), &scene.to_json())?;
    write_file(&out.join("map.json"), &map.to_json())?;
    write_file(&out.join("observations.json"), &obs.to_json())?;
    write_file(&out.join("problem.json"), &problem.to_json())?;
    write_file(&out.join("priors.json"), &priors.to_json_string())?;
    save_tum(out.join("gt.tum"), &gt).map_err(input)?;
    save_tum(out.join("est.tum"), &est).map_err(input)?;
    println!(
        "wrote {} objects, {} points, {} cameras, {} detections to {}",
        scene.objects.len(),
        scene.points.len(),
        scene.cameras.len(),
        obs.detections.len(),
        out.display()
    );
    Ok(())
}

fn parse_seeds(text: &str) -> anyhow::Result<std::ops::RangeInclusive<u64>> {
    let (a, b) = match text.split_once("..") {
        Some((a, b)) => (a, b.trim_start_matches('=')),
        None => (text, text),
    };
    let a: u64 = a.trim().parse().with_context(|| format!("bad seed range {text:?}"))?;
    let b: u64 = b.trim().parse().with_context(|| format!("bad seed range {text:?}"))?;
    if a > b {
        bail!("empty seed range {text:?}");
    }
    Ok(a..=b)
}

fn scale_failure(e: ScaleError) -> Failure {
    match e {
        ScaleError::InvalidDims(_) | ScaleError::InconsistentTelemetry { .. } | ScaleError::InvalidProbability => {
            input(e)
        }
        _ => domain(e),
    }
}

fn estimate_once(
    map: &UnscaledMap,
    priors: &PriorRepository,
    cfg: &PipelineConfig,
    seed: Option<u64>,
) -> Result<(RunRecord, objscale::scale::PipelineOutcome), Failure> {
    for e in &map.estimates {
        e.validate().map_err(scale_failure)?;
    }
    let start = Instant::now();
    let outcome = run_pipeline_with(&map.estimates, priors, cfg).map_err(scale_failure)?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let s = outcome.solution.scale;
    let (rse_value, ate) = match map.true_scale {
        Some(truth) => {
            // Camera position error after applying the recovered scale.
            let sq: f64 = map
                .cameras
                .iter()
                .map(|c| (c.pose.translation * (s - truth)).norm_squared())
                .sum();
            let ate = (!map.cameras.is_empty()).then(|| (sq / map.cameras.len() as f64).sqrt());
            (Some(rse(s, truth)), ate)
        }
        None => (None, None),
    };
    info!("seed {seed:?}: scale {s:.6} in {runtime_ms:.3} ms");
    let record = RunRecord {
        seed,
        scale: s,
        rse: rse_value,
        ate,
        num_inliers: outcome.solution.num_inliers,
        num_outliers: outcome.num_outliers,
        runtime_ms: Some(runtime_ms),
    };
    Ok((record, outcome))
}

fn cmd_estimate(
    map_path: &Path,
    priors_path: &Path,
    cfg: &PipelineConfig,
    seeds: Option<&str>,
    timing: bool,
    out: &Path,
) -> CmdResult {
    let priors = load_priors(priors_path).map_err(input)?;
    let map = UnscaledMap::load(map_path).map_err(input)?;

    let mut records = Vec::new();
    let mut samples = None;
    match seeds {
        None => {
            let (record, outcome) = estimate_once(&map, &priors, cfg, None)?;
            records.push(record);
            samples = Some(outcome.samples);
        }
        Some(text) => {
            let range = parse_seeds(text).map_err(input)?;
            let prov = map
                .provenance
                .as_ref()
                .ok_or_else(|| input(anyhow!("--seeds needs a map written by `simulate` (no provenance recorded)")))?;
            for seed in range {
                let noise = NoiseConfig {
                    rng_seed: seed,
                    ..prov.noise.clone()
                };
                let (_, m, _) = simulate(&prov.spec, &noise, &priors, seed).map_err(domain)?;
                records.push(estimate_once(&m, &priors, cfg, Some(seed))?.0);
            }
        }
    }
    if !timing {
        for r in &mut records {
            r.runtime_ms = None;
        }
    }

    let report = EstimateReport::new(cfg, records, samples);
    write_file(out, &report.to_json())?;
    write_file(&sibling(out, ".csv"), &report.to_csv())?;
    match (report.runs.len(), &report.aggregate) {
        (1, _) => {
            let r = &report.runs[0];
            match r.rse {
                Some(e) => println!("scale {:.6}  RSE {:.4}%", r.scale, 100.0 * e),
                None => println!("scale {:.6}", r.scale),
            }
        }
        (n, Some(agg)) => println!(
            "{n} runs  RSE mean {:.4}%  std {:.4}%",
            100.0 * agg.rse_mean,
            100.0 * agg.rse_std
        ),
        (n, None) => println!("{n} runs"),
    }
    Ok(())
}

fn optimizer_failure(e: OptimizerError) -> Failure {
    match e {
        OptimizerError::SingularNormalEquations => domain(e),
        _ => input(e),
    }
}

fn cmd_optimize(problem_path: &Path, cfg: &SolverConfig, out: &Path) -> CmdResult {
    let problem = Problem::load(problem_path).map_err(|e| input(anyhow!(e)))?;
    let (solved, report) = solve(&problem, cfg).map_err(optimizer_failure)?;
    write_file(out, &solved.to_json())?;
    let text = serde_json::to_string_pretty(&report).map_err(input)? + "\n";
    write_file(&sibling(out, ".report.json"), &text)?;
    write_file(&sibling(out, ".report.csv"), &report::solve_csv(&report))?;
    println!(
        "chi2 {:.6e} -> {:.6e} in {} iterations ({})",
        report.initial_chi2, report.final_chi2, report.iterations, report.termination
    );
    Ok(())
}

fn cmd_eval(est_path: &Path, gt_path: &Path, mode: AlignMode, max_dt: f64, scale: Option<f64>, out: &Path) -> CmdResult {
    if !(max_dt > 0.0) {
        return Err(input(anyhow!("--max-dt must be positive")));
    }
    let est = load_tum(est_path).map_err(input)?;
    let gt = load_tum(gt_path).map_err(input)?;
    let result = ate_rmse(&est, &gt, mode, max_dt).map_err(|e| match e {
        EvalError::Parse { .. } | EvalError::Io { .. } => input(e),
        _ => domain(e),
    })?;
    let report = report::EvalReport::new(mode, max_dt, &result, scale);
    write_file(out, &report.to_json())?;
    write_file(&sibling(out, ".csv"), &report.to_csv())?;
    match report.gt_scale {
        Some(s) => println!("ATE {:.6} ({} pairs, sim3 scale {s:.6})", report.ate_rmse, report.num_pairs),
        None => println!("ATE {:.6} ({} pairs)", report.ate_rmse, report.num_pairs),
    }
    Ok(())
}
