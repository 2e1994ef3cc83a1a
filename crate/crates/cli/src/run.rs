//! `run`: initialization at zero coupling, continuation along the coupling
//! schedule, verification, and output.

use log::info;
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use tori_core::init::build_initial;
use tori_core::model::make_pendula;
use tori_core::newton::{continue_parameter, ContinuationNode, StepReport, TorusSolution};
use tori_core::verify::{
    bundle_invariance_error, defect_constant, flow_invariance_error, measure_normal_frequencies, random_angles,
    VerifyOptions,
};
use tori_core::TorusError;

use crate::config::Config;
use crate::{create_file, io_context, CliError};

pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const CONTINUATION_FILE: &str = "continuation.csv";
pub const K_DUMP: &str = "K.coeffs";
pub const W_DUMP: &str = "W.coeffs";
pub const SOLUTION_FILE: &str = "solution.txt";
pub const VERIFY_FILE: &str = "verify.txt";
pub const FAILURE_FILE: &str = "failure.json";

/// Smallest coupling increment before the continuation gives up.
const MIN_EPS_STEP: f64 = 1e-12;

/// Result of a completed run.
#[derive(Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub solution: TorusSolution,
    pub nodes: Vec<ContinuationNode>,
    pub verification: Option<Verification>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    pub flow_error: f64,
    pub bundle_error: f64,
    pub measured_beta: Vec<f64>,
    pub defect_constant: f64,
}

fn solver(stage: &'static str) -> impl FnOnce(TorusError) -> CliError {
    move |source| CliError::Solver { stage, source }
}

/// Run `cfg`, writing into `cfg.output_dir`. On failure a `failure.json`
/// is left there as well.
pub fn run(cfg: &Config) -> Result<RunSummary, CliError> {
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(io_context(format!("cannot create {}", dir.display())))?;
    // A stale failure record from an earlier attempt would be misleading.
    let _ = std::fs::remove_file(dir.join(FAILURE_FILE));
    let out = execute(cfg, &dir);
    if let Err(e) = &out {
        write_failure(&dir, e);
    }
    out
}

/// Best effort: the error itself is still returned to the caller.
pub fn write_failure(dir: &Path, err: &CliError) {
    let _ = std::fs::write(dir.join(FAILURE_FILE), err.record().to_json() + "\n");
}

fn execute(cfg: &Config, dir: &Path) -> Result<RunSummary, CliError> {
    let opts = cfg.newton_options();
    let omega = [cfg.omega[0], cfg.omega[1]];

    info!("building the initial torus on a {0}×{0} grid", cfg.n_f);
    let init = build_initial(&cfg.params(0.0), omega, cfg.n_f, &opts).map_err(solver("initialization"))?;

    info!("continuation along eps = {:?}", cfg.eps_schedule);
    let (solution, nodes) = continue_parameter(
        &init.solution,
        |eps| make_pendula(&cfg.params(eps)),
        &cfg.eps_schedule,
        &opts,
        MIN_EPS_STEP,
    )
    .map_err(solver("continuation"))?;

    let last = nodes.last().expect("continuation returns at least one node");
    write_convergence(&dir.join(CONVERGENCE_FILE), &last.log)?;
    write_continuation(&dir.join(CONTINUATION_FILE), &nodes)?;
    solution
        .k
        .write_coeffs(create_file(&dir.join(K_DUMP))?)
        .map_err(solver("output"))?;
    solution
        .w
        .write_coeffs(create_file(&dir.join(W_DUMP))?)
        .map_err(solver("output"))?;
    write_solution(&dir.join(SOLUTION_FILE), &solution, last.value)?;

    let verification = if cfg.verify {
        let model = make_pendula(&cfg.params(last.value)).map_err(solver("verification"))?;
        let vo = VerifyOptions::default();
        let thetas = random_angles(2, vo.samples, vo.seed);
        info!("integrating {} orbits over t = {}", vo.samples, vo.horizon);
        let v = Verification {
            flow_error: flow_invariance_error(&solution, &model, &thetas, &vo).map_err(solver("verification"))?,
            bundle_error: bundle_invariance_error(&solution, &model, &thetas, &vo).map_err(solver("verification"))?,
            measured_beta: measure_normal_frequencies(&solution, &model, &thetas[0], &vo)
                .map_err(solver("verification"))?,
            defect_constant: defect_constant(&last.log),
        };
        write_verification(&dir.join(VERIFY_FILE), &v, &solution.freq.beta, &vo)?;
        Some(v)
    } else {
        None
    };

    Ok(RunSummary {
        output_dir: dir.to_path_buf(),
        solution,
        nodes,
        verification,
    })
}

/// One row of `convergence.csv`.
#[derive(Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ConvergenceRow {
    pub step: usize,
    #[serde(rename = "E_K")]
    pub e_k: f64,
    #[serde(rename = "E_W")]
    pub e_w: f64,
    pub dlambda: f64,
    pub dalpha: f64,
    pub alpha: f64,
    pub sym_defect: f64,
    pub red_defect: f64,
    pub tail_energy: f64,
}

/// 17 significant digits, so that values round-trip exactly.
fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io {
        context: format!("cannot create {}", path.display()),
        source: e.into(),
    })
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        context: format!("cannot write {}", path.display()),
        source: e.into(),
    }
}

pub fn write_convergence(path: &Path, log: &[StepReport]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "step",
        "E_K",
        "E_W",
        "dlambda",
        "dalpha",
        "alpha",
        "sym_defect",
        "red_defect",
        "tail_energy",
    ])
    .map_err(csv_error(path))?;
    for r in log {
        let mut rec = vec![r.step.to_string()];
        rec.extend(
            [
                r.residual_k,
                r.residual_w,
                r.dlambda,
                r.dalpha,
                r.alpha,
                r.sym_defect,
                r.red_defect,
                r.tail_energy,
            ]
            .map(sci),
        );
        w.write_record(&rec).map_err(csv_error(path))?;
    }
    w.flush()
        .map_err(io_context(format!("cannot write {}", path.display())))
}

fn write_continuation(path: &Path, nodes: &[ContinuationNode]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["eps", "steps", "residual", "lambda1", "lambda2"])
        .map_err(csv_error(path))?;
    for n in nodes {
        let residual = n.log.last().map(StepReport::residual).unwrap_or(f64::NAN);
        let mut rec = vec![sci(n.value), n.log.len().saturating_sub(1).to_string(), sci(residual)];
        rec.extend(n.lambda.iter().map(|&l| sci(l)));
        w.write_record(&rec).map_err(csv_error(path))?;
    }
    w.flush()
        .map_err(io_context(format!("cannot write {}", path.display())))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|&x| sci(x)).collect::<Vec<_>>().join(" ")
}

fn write_solution(path: &Path, sol: &TorusSolution, eps: f64) -> Result<(), CliError> {
    let mut f = create_file(path)?;
    let text = format!(
        "eps {}\nomega {}\nbeta {}\nlambda {}\nalpha {}\n",
        sci(eps),
        join(&sol.freq.omega),
        join(&sol.freq.beta),
        join(&sol.lambda),
        join(&sol.alpha)
    );
    f.write_all(text.as_bytes())
        .map_err(io_context(format!("cannot write {}", path.display())))
}

fn write_verification(path: &Path, v: &Verification, beta: &[f64], vo: &VerifyOptions) -> Result<(), CliError> {
    let beta_error = v
        .measured_beta
        .iter()
        .zip(beta)
        .map(|(m, b)| (m - b).abs())
        .fold(0.0, f64::max);
    let text = format!(
        "horizon {}\nsamples {}\nseed {}\nflow_invariance_error {}\nbundle_invariance_error {}\n\
         measured_beta {}\nbeta_error {}\ndefect_constant {}\n",
        vo.horizon,
        vo.samples,
        vo.seed,
        sci(v.flow_error),
        sci(v.bundle_error),
        join(&v.measured_beta),
        sci(beta_error),
        sci(v.defect_constant)
    );
    create_file(path)?
        .write_all(text.as_bytes())
        .map_err(io_context(format!("cannot write {}", path.display())))
}
