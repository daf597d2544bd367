//! Execute a validated run: compute on a local thread pool, write the data
//! files, then write the manifest last so its presence marks a complete
//! run. Output bytes do not depend on the worker count.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use epsim_core::analysis::{derive_seed, fit_fringe, phase_difference, FringeResult};
use epsim_core::evolve::propagate_nh_trajectory;
use epsim_core::protocols::{
    run_encircle_tomography, run_phase_interferometry, run_transfer_map, start_modes, Engine,
    FringeScan, Shots, Target, TomographyRecord, TransferMapCell,
};
use epsim_core::spectra::{ep_locations, riemann_surface, SurfacePoint};
use epsim_core::{Direction, ParameterLoop};

use crate::config::{self, Effective, Experiment, PhasePlan, Plan, RunConfig};
use crate::CliError;

/// Everything the binary resolved from flags and environment.
#[derive(Debug, Clone)]
pub struct RunRequest {
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    /// Worker threads; `None` or `Some(0)` lets the pool pick.
    pub jobs: Option<usize>,
    /// Replaces the config sampling seed when set.
    pub seed: Option<u64>,
    /// Subcommand the user invoked; must match the config `experiment`.
    pub expected: Experiment,
    pub dump_trajectory: bool,
    pub traj_stride: usize,
}

/// What a finished run wrote, for the final console summary.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub files: Vec<(String, usize)>,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
struct OutputEntry {
    file: String,
    rows: usize,
    sha256: String,
}

#[derive(Debug, Clone, Serialize)]
struct Timings {
    compute_ms: u128,
    write_ms: u128,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    created_unix_s: u64,
    experiment: &'static str,
    jobs: usize,
    effective: &'a Effective,
    config: &'a RunConfig,
    outputs: &'a [OutputEntry],
    timings: Timings,
}

/// One fringe scan with its fit, tagged by the grid point that produced it.
#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub j_min: f64,
    pub direction: Direction,
    pub target: Target,
    pub scan: FringeScan,
    pub fit: FringeResult,
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn run(req: &RunRequest) -> Result<RunSummary, CliError> {
    let cfg = RunConfig::from_path(&req.config_path)?;
    if cfg.experiment != req.expected {
        return Err(CliError::Config(format!(
            "config experiment is \"{}\" but the {} subcommand expects \"{}\"",
            cfg.experiment.as_str(),
            subcommand_name(req.expected),
            req.expected.as_str()
        )));
    }
    if req.dump_trajectory {
        if cfg.experiment != Experiment::Tomography {
            return Err(CliError::Config(
                "--dump-trajectory only applies to the encircle subcommand".into(),
            ));
        }
        if cfg.engine.to_core() != Engine::Nh {
            return Err(CliError::Config(
                "--dump-trajectory needs engine = \"nh\"; density-matrix runs have no amplitude trajectory".into(),
            ));
        }
        if req.traj_stride == 0 {
            return Err(CliError::Config("--traj-stride must be positive".into()));
        }
    }
    let (plan, effective) = config::plan(&cfg, req.seed)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(req.jobs.unwrap_or(0))
        .build()
        .map_err(runtime)?;
    let jobs = pool.current_num_threads();

    std::fs::create_dir_all(&req.out_dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", req.out_dir.display())))?;

    let t_compute = Instant::now();
    let computed = pool.install(|| compute(&plan, req))?;
    let compute_ms = t_compute.elapsed().as_millis();

    let t_write = Instant::now();
    let mut outputs = Vec::new();
    for (name, text, rows) in &computed {
        let path = req.out_dir.join(name);
        std::fs::write(&path, text)
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        let digest = Sha256::digest(text.as_bytes());
        let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect::<String>();
        outputs.push(OutputEntry { file: name.clone(), rows: *rows, sha256 });
    }
    let write_ms = t_write.elapsed().as_millis();

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        created_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        experiment: cfg.experiment.as_str(),
        jobs,
        effective: &effective,
        config: &cfg,
        outputs: &outputs,
        timings: Timings { compute_ms, write_ms },
    };
    let manifest_path = req.out_dir.join("manifest.json");
    write_atomic(
        &manifest_path,
        &serde_json::to_string_pretty(&manifest).map_err(runtime)?,
    )?;

    Ok(RunSummary {
        out_dir: req.out_dir.clone(),
        files: outputs.into_iter().map(|o| (o.file, o.rows)).collect(),
        manifest: manifest_path,
    })
}

fn subcommand_name(exp: Experiment) -> &'static str {
    match exp {
        Experiment::Spectrum => "spectrum",
        Experiment::Tomography => "encircle",
        Experiment::Phase => "phase",
        Experiment::TransferMap => "transfer-map",
    }
}

/// The manifest lands under its final name only once fully written.
fn write_atomic(path: &Path, text: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text)
        .map_err(|e| runtime(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| runtime(format!("cannot rename {}: {e}", tmp.display())))
}

type NamedFile = (String, String, usize);

fn compute(plan: &Plan, req: &RunRequest) -> Result<Vec<NamedFile>, CliError> {
    match plan {
        Plan::Spectrum { j_grid, delta_grid, gamma } => {
            let points = riemann_surface(j_grid, delta_grid, *gamma).map_err(runtime)?;
            let eps = ep_locations(*gamma).map_err(runtime)?;
            Ok(spectrum_files(&points, &eps))
        }
        Plan::Tomography { lp, opts, .. } => {
            let records = run_encircle_tomography(lp, opts).map_err(runtime)?;
            let mut files = vec![tomography_file(&records)];
            if req.dump_trajectory {
                files.push(trajectory_file(lp, &opts.integrator, req.traj_stride)?);
            }
            Ok(files)
        }
        Plan::Phase(pp) => {
            let outcomes = compute_phase(pp)?;
            Ok(vec![phase_csv(&outcomes), phase_summary(&outcomes)?])
        }
        Plan::Transfer { j_min_grid, period_grid, directions, opts } => {
            let cells =
                run_transfer_map(j_min_grid, period_grid, directions, opts).map_err(runtime)?;
            Ok(vec![transfer_file(&cells)])
        }
    }
}

/// Run every (j_min, direction, target) scan of a phase plan. Tasks run in
/// parallel but land in grid order, and each task draws its own sampling
/// seed, so results do not depend on the worker count.
pub fn compute_phase(pp: &PhasePlan) -> Result<Vec<PhaseOutcome>, CliError> {
    let mut tasks = Vec::new();
    for &j_min in &pp.j_min_grid {
        for &direction in &pp.directions {
            for &target in &pp.targets {
                tasks.push((j_min, direction, target));
            }
        }
    }
    tasks
        .par_iter()
        .enumerate()
        .map(|(k, &(j_min, direction, target))| {
            let lp = ParameterLoop {
                j_max: pp.j_max,
                j_min,
                delta_amp: direction.sign() * pp.delta_amp,
                period: pp.period,
                gamma: pp.gamma,
            };
            let mut opts = pp.opts.clone();
            opts.target = target;
            if let Shots::Sampled { shots, seed } = opts.shots {
                opts.shots = Shots::Sampled { shots, seed: derive_seed(seed, k as u64, 5) };
            }
            let scan = run_phase_interferometry(&lp, &opts).map_err(runtime)?;
            let fit = fit_fringe(&scan.phases, &scan.p_f).map_err(runtime)?;
            Ok(PhaseOutcome { j_min, direction, target, scan, fit })
        })
        .collect()
}

fn spectrum_files(points: &[SurfacePoint], eps: &[epsim_core::spectra::EpLocation]) -> Vec<NamedFile> {
    let mut spectrum = String::from(
        "J,Delta,re_lambda_plus,im_lambda_plus,re_lambda_minus,im_lambda_minus\n",
    );
    let mut overlap = String::from("J,Delta,overlap\n");
    for p in points {
        spectrum.push_str(&format!(
            "{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e}\n",
            p.j, p.delta, p.lambda_plus.re, p.lambda_plus.im, p.lambda_minus.re, p.lambda_minus.im
        ));
        overlap.push_str(&format!("{:.11e},{:.11e},{:.11e}\n", p.j, p.delta, p.overlap));
    }
    let mut markers = String::from("J,Delta\n");
    for ep in eps {
        markers.push_str(&format!("{:.11e},{:.11e}\n", ep.j, ep.delta));
    }
    vec![
        ("spectrum.csv".into(), spectrum, points.len()),
        ("overlap.csv".into(), overlap, points.len()),
        ("ep_markers.csv".into(), markers, eps.len()),
    ]
}

fn tomography_file(records: &[TomographyRecord]) -> NamedFile {
    let mut text = String::from("t_us,x,y,z,survival,x_eig,y_eig,z_eig\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.t, r.x, r.y, r.z, r.survival, r.x_eig, r.y_eig, r.z_eig
        ));
    }
    ("tomography.csv".into(), text, records.len())
}

fn trajectory_file(
    lp: &ParameterLoop,
    integrator: &epsim_core::IntegratorConfig,
    stride: usize,
) -> Result<NamedFile, CliError> {
    let psi0 = start_modes(lp).map_err(runtime)?.psi_minus;
    let traj = propagate_nh_trajectory(&psi0, lp, lp.period, integrator, stride).map_err(runtime)?;
    let mut text = String::from("t_us,re_psi_e,im_psi_e,re_psi_f,im_psi_f,norm2\n");
    for (t, s) in traj.times.iter().zip(&traj.states) {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t,
            s[0].re,
            s[0].im,
            s[1].re,
            s[1].im,
            s.norm_squared()
        ));
    }
    let rows = traj.times.len();
    Ok(("trajectory.csv".into(), text, rows))
}

fn phase_csv(outcomes: &[PhaseOutcome]) -> NamedFile {
    let mut text = String::from("phase_rad,p_f,target,direction,j_min\n");
    let mut rows = 0;
    for o in outcomes {
        for (phi, p) in o.scan.phases.iter().zip(&o.scan.p_f) {
            text.push_str(&format!("{},{},{},{},{}\n", phi, p, o.target, o.direction, o.j_min));
            rows += 1;
        }
    }
    ("phase.csv".into(), text, rows)
}

#[derive(Serialize)]
struct FringeEntry {
    j_min: f64,
    direction: &'static str,
    target: &'static str,
    offset: f64,
    contrast: f64,
    chi_rad: f64,
    reliable: bool,
}

#[derive(Serialize)]
struct DiffEntry {
    j_min: f64,
    target: &'static str,
    ccw_minus_cw_rad: f64,
    reliable: bool,
}

#[derive(Serialize)]
struct PhaseSummary {
    fringes: Vec<FringeEntry>,
    phase_differences: Vec<DiffEntry>,
}

fn phase_summary(outcomes: &[PhaseOutcome]) -> Result<NamedFile, CliError> {
    let fringes = outcomes
        .iter()
        .map(|o| FringeEntry {
            j_min: o.j_min,
            direction: o.direction.as_str(),
            target: o.target.as_str(),
            offset: o.fit.offset,
            contrast: o.fit.contrast,
            chi_rad: o.fit.chi,
            reliable: o.fit.reliable,
        })
        .collect();
    let mut phase_differences = Vec::new();
    for o in outcomes.iter().filter(|o| o.direction == Direction::Ccw) {
        let partner = outcomes.iter().find(|q| {
            q.direction == Direction::Cw && q.target == o.target && q.j_min == o.j_min
        });
        if let Some(q) = partner {
            let d = phase_difference(&o.fit, &q.fit);
            phase_differences.push(DiffEntry {
                j_min: o.j_min,
                target: o.target.as_str(),
                ccw_minus_cw_rad: d.value,
                reliable: d.reliable,
            });
        }
    }
    let text = serde_json::to_string_pretty(&PhaseSummary { fringes, phase_differences })
        .map_err(runtime)?;
    let rows = outcomes.len();
    Ok(("phase_summary.json".into(), text, rows))
}

fn transfer_file(cells: &[TransferMapCell]) -> NamedFile {
    let mut text = String::from("j_min,period_us,direction,p_psi_minus,survival,error\n");
    for c in cells {
        let p = c.p_psi_minus.map(|v| v.to_string()).unwrap_or_default();
        let s = c.survival.map(|v| v.to_string()).unwrap_or_default();
        let e = c
            .error
            .as_deref()
            .unwrap_or("")
            .replace(',', ";")
            .replace('\n', " ");
        text.push_str(&format!("{},{},{},{},{},{}\n", c.j_min, c.period, c.direction, p, s, e));
    }
    ("transfer_map.csv".into(), text, cells.len())
}
