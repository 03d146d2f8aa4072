//! The four subcommands, as library calls.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ocp_core::adaptive::{run_staged, stage_dir, RunMethod, RunRecord, StageRecord};
use ocp_core::aonn::{ControlModel, SurrogateTriplet};
use ocp_core::diffcore::checkpoint::{load_network, NetworkManifest};
use ocp_core::diffcore::{Method, Network};
use ocp_core::metrics::{errors_against_exact, make_eval_grid, write_report, FieldErrors, ReportRow};
use ocp_core::problems::trainset::format_real;
use ocp_core::problems::{by_name, ControlKind, ProblemSpec, TrainingSet};
use serde::{Deserialize, Serialize};

use crate::config::{parse_config, RunConfig};
use crate::error::{CliError, Result};

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "OCP_ADAPTIVE_OUT";
const DEFAULT_ROOT: &str = "runs";
const MANIFEST: &str = "run.toml";
const SNAPSHOT: &str = "config.toml";
const FAILURE: &str = "failure.toml";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT))
}

pub fn run_dir(root: &Path, cfg: &RunConfig, seed: u64) -> PathBuf {
    let base = Path::new(&cfg.output);
    let base = if base.is_absolute() { base.to_path_buf() } else { root.join(base) };
    base.join(format!("seed_{seed}"))
}

/// What a run directory holds, next to its config snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub problem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub method: String,
    pub seed: u64,
    pub stages: usize,
    pub n_r: usize,
    pub n_ep: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| {
            CliError::Core(ocp_core::Error::Integrity(format!("{}: {e}", path.display())))
        })?;
        toml::from_str(&text)
            .map_err(|e| CliError::Core(ocp_core::Error::Integrity(format!("{}: {}", path.display(), e.message()))))
    }

    pub fn method(&self) -> Result<RunMethod> {
        Ok(RunMethod::from_name(&self.method)?)
    }

    pub fn problem(&self) -> Result<Box<dyn ProblemSpec>> {
        Ok(by_name(&self.problem, self.alpha)?)
    }
}

/// Machine-readable record left behind by a failed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureRecord {
    pub kind: String,
    pub message: String,
    pub seed: u64,
    pub completed_stages: usize,
}

impl FailureRecord {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(FAILURE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        toml::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Core(ocp_core::Error::Parse(e.message().to_string())))
    }
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| CliError::Core(ocp_core::Error::Parse(e.to_string())))?;
    fs::write(path, text)?;
    Ok(())
}

/// Clears a previous run of ours; refuses to touch anything else.
fn prepare_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let ours = dir.join(MANIFEST).exists() || dir.join(FAILURE).exists();
        let empty = fs::read_dir(dir)?.next().is_none();
        if !ours && !empty {
            return Err(CliError::Config {
                line: None,
                message: format!("{} exists and is not a run directory", dir.display()),
            });
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn completed_stages(dir: &Path) -> usize {
    (0..).take_while(|&k| stage_dir(dir, k).join("log.csv").exists()).count()
}

/// Runs every seed of `cfg` under `root`. Each run directory gets the config
/// snapshot, a manifest, per-stage checkpoints, `record.csv` and
/// `report.csv`; a failed run leaves `failure.toml` next to whatever stages
/// completed.
pub fn cmd_run(cfg: &RunConfig, root: &Path, progress: &mut dyn FnMut(u64, &StageRecord)) -> Result<Vec<PathBuf>> {
    let problem = by_name(&cfg.problem, cfg.alpha)?;
    let mut dirs = Vec::new();
    for &seed in &cfg.seeds {
        let dir = run_dir(root, cfg, seed);
        prepare_dir(&dir)?;
        fs::write(dir.join(SNAPSHOT), cfg.snapshot(&[seed]))?;
        let adaptive = cfg.for_seed(seed);
        let manifest = RunManifest {
            problem: cfg.problem.clone(),
            alpha: cfg.alpha,
            method: cfg.method.name().into(),
            seed,
            stages: adaptive.stages,
            n_r: adaptive.n_r,
            n_ep: adaptive.dal.n_ep,
            eval: adaptive.eval.as_ref().map(|e| e.label()),
        };
        write_toml(&dir.join(MANIFEST), &manifest)?;
        let outcome = run_staged(problem.as_ref(), cfg.method, &adaptive, Some(&dir), &mut |r| progress(seed, r));
        match outcome {
            Ok(out) => {
                let rows = report_rows(&out.record, &cfg.method.name().to_string());
                write_report(&rows, BufWriter::new(fs::File::create(dir.join("report.csv"))?))?;
            }
            Err(e) => {
                let err = CliError::Core(e);
                let record = FailureRecord {
                    kind: err.kind().into(),
                    message: err.to_string(),
                    seed,
                    completed_stages: completed_stages(&dir),
                };
                write_toml(&dir.join(FAILURE), &record)?;
                return Err(err);
            }
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

fn report_rows(record: &RunRecord, label: &str) -> Vec<ReportRow> {
    record
        .stages
        .iter()
        .map(|s| ReportRow {
            method: label.to_string(),
            set_size: s.set_size,
            wall_seconds: s.wall_seconds,
            rel_l2_u: s.rel_l2_u,
            rel_l2_y: s.rel_l2_y,
        })
        .collect()
}

fn integrity(msg: String) -> CliError {
    CliError::Core(ocp_core::Error::Integrity(msg))
}

fn checked_network(path: &Path, problem: &dyn ProblemSpec, inputs: usize) -> Result<(Network, NetworkManifest)> {
    let (net, manifest) = load_network(path)?;
    if let Some(p) = &manifest.problem {
        if p != problem.name() {
            return Err(integrity(format!(
                "{} was trained on {p}, not {}",
                path.display(),
                problem.name()
            )));
        }
    }
    if manifest.layer_sizes.first() != Some(&inputs) {
        return Err(integrity(format!(
            "{} takes {:?} inputs, {} needs {inputs}",
            path.display(),
            manifest.layer_sizes.first(),
            problem.name()
        )));
    }
    Ok((net, manifest))
}

/// Surrogates saved at `stage` of a run, checked against `problem`.
pub fn load_triplet(dir: &Path, stage: usize, problem: &dyn ProblemSpec) -> Result<SurrogateTriplet> {
    let sd = stage_dir(dir, stage);
    if !sd.exists() {
        return Err(integrity(format!("{} has no stage {stage}", dir.display())));
    }
    let (y, _) = checked_network(&sd.join("y.ckpt"), problem, problem.feature_dim())?;
    let (p, _) = checked_network(&sd.join("p.ckpt"), problem, problem.feature_dim())?;
    let u_path = sd.join("u.ckpt");
    let control = if u_path.exists() {
        ControlModel::Network(checked_network(&u_path, problem, problem.control_feature_dim())?.0)
    } else {
        ControlModel::OptimalityMap
    };
    Ok(SurrogateTriplet::from_networks(y, p, control, Method::default()))
}

/// Files written by an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub stage: usize,
    pub fields: PathBuf,
    /// Boundary control values, for boundary-control problems.
    pub control: Option<PathBuf>,
    /// Relative errors, when the problem has a closed-form solution.
    pub errors: Option<FieldErrors>,
}

fn coord_header(problem: &dyn ProblemSpec) -> Vec<String> {
    let mut h: Vec<String> = (1..=problem.spatial_dim()).map(|i| format!("x{i}")).collect();
    h.extend((1..=problem.param_dim()).map(|i| format!("xi{i}")));
    h
}

fn write_row<W: Write>(w: &mut W, point: &[f64], values: &[f64]) -> Result<()> {
    let cols: Vec<String> = point.iter().chain(values).map(|v| format_real(*v)).collect();
    writeln!(w, "{}", cols.join(","))?;
    Ok(())
}

/// Evaluates the run in `dir` at one parameter on a grid. `stage` defaults to
/// the last completed stage; `problem` (when given) must match the run.
pub fn cmd_eval(
    dir: &Path,
    xi: &[f64],
    resolution: &[usize],
    stage: Option<usize>,
    problem: Option<&str>,
) -> Result<EvalOutput> {
    let manifest = RunManifest::load(dir)?;
    if let Some(name) = problem {
        if name != manifest.problem {
            return Err(integrity(format!(
                "run in {} was trained on {}, not {name}",
                dir.display(),
                manifest.problem
            )));
        }
    }
    let problem = manifest.problem()?;
    let problem = problem.as_ref();
    let stage = match stage {
        Some(k) => k,
        None => completed_stages(dir)
            .checked_sub(1)
            .ok_or_else(|| integrity(format!("{} has no completed stage", dir.display())))?,
    };
    let triplet = load_triplet(dir, stage, problem)?;
    let grid = make_eval_grid(problem, xi, resolution)?;
    let y = triplet.state_at(problem, &grid.points)?;
    let p = triplet.adjoint_at(problem, &grid.points)?;
    let u = triplet.control_at(problem, &grid.control_points)?;
    let has_exact = problem.exact_state(&grid.points[0]).is_some();

    let out_dir = dir.join("eval");
    fs::create_dir_all(&out_dir)?;
    let fields = out_dir.join(format!("fields_stage{stage}.csv"));
    let mut w = BufWriter::new(fs::File::create(&fields)?);
    let distributed = problem.control_kind() == ControlKind::Distributed;
    let mut header = coord_header(problem);
    header.extend(["y", "p"].map(String::from));
    if distributed {
        header.push("u".into());
    }
    if has_exact {
        header.extend(["y_exact", "p_exact", "y_abs_err"].map(String::from));
        if distributed {
            header.extend(["u_exact", "u_abs_err"].map(String::from));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, q) in grid.points.iter().enumerate() {
        let mut vals = vec![y[i], p[i]];
        if distributed {
            vals.push(u[i]);
        }
        if has_exact {
            let (ye, pe) = (problem.exact_state(q).unwrap_or(f64::NAN), problem.exact_adjoint(q).unwrap_or(f64::NAN));
            vals.extend([ye, pe, (y[i] - ye).abs()]);
            if distributed {
                let ue = problem.exact_control(q).unwrap_or(f64::NAN);
                vals.extend([ue, (u[i] - ue).abs()]);
            }
        }
        write_row(&mut w, q, &vals)?;
    }
    w.flush()?;

    let control = if distributed {
        None
    } else {
        let path = out_dir.join(format!("control_stage{stage}.csv"));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        let mut header = coord_header(problem);
        header.push("u".into());
        if has_exact {
            header.extend(["u_exact", "u_abs_err"].map(String::from));
        }
        writeln!(w, "{}", header.join(","))?;
        for (i, q) in grid.control_points.iter().enumerate() {
            let mut vals = vec![u[i]];
            if has_exact {
                let ue = problem.exact_control(q).unwrap_or(f64::NAN);
                vals.extend([ue, (u[i] - ue).abs()]);
            }
            write_row(&mut w, q, &vals)?;
        }
        w.flush()?;
        Some(path)
    };

    let errors = errors_against_exact(&triplet, problem, &grid)?;
    if let Some(e) = errors {
        let mut w = BufWriter::new(fs::File::create(out_dir.join(format!("errors_stage{stage}.csv")))?);
        writeln!(w, "field,rel_l2")?;
        writeln!(w, "u,{:e}\ny,{:e}\np,{:e}", e.control, e.state, e.adjoint)?;
        w.flush()?;
    }
    Ok(EvalOutput {
        stage,
        fields,
        control,
        errors,
    })
}

/// One completed run found by `compare`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub record: RunRecord,
}

impl RunSummary {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(dir)?;
        if let Some(f) = FailureRecord::load(dir)? {
            return Err(CliError::Compare(format!("run in {} failed: {}", dir.display(), f.message)));
        }
        let file = fs::File::open(dir.join("record.csv"))
            .map_err(|e| CliError::Compare(format!("{}: no run record ({e})", dir.display())))?;
        let record = RunRecord::read_csv(file, manifest.method()?, &manifest.problem)?;
        Ok(RunSummary {
            dir: dir.to_path_buf(),
            manifest,
            record,
        })
    }

    pub fn label(&self) -> String {
        format!("{}/seed{}", self.manifest.method, self.manifest.seed)
    }

    pub fn final_stage(&self) -> Option<&StageRecord> {
        self.record.stages.last()
    }
}

/// Merged tables over several runs of one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
    /// Final-stage row per run.
    pub report: String,
    /// `method,seed,stage,set_size,rel_l2_u,rel_l2_y`.
    pub by_samples: String,
    /// `method,seed,epoch,rel_l2_u,rel_l2_y`, epochs counted in DAL
    /// iterations.
    pub by_epoch: String,
}

/// Each input is a config (all its seeds) or a run directory.
pub fn cmd_compare(inputs: &[PathBuf], root: &Path) -> Result<Comparison> {
    let mut runs = Vec::new();
    for input in inputs {
        if input.is_dir() {
            runs.push(RunSummary::load(input)?);
        } else {
            let cfg = parse_config(input)?;
            for &seed in &cfg.seeds {
                runs.push(RunSummary::load(&run_dir(root, &cfg, seed))?);
            }
        }
    }
    if runs.len() < 2 {
        return Err(CliError::Compare(format!("need at least two runs, got {}", runs.len())));
    }
    let problem = runs[0].manifest.problem.clone();
    if let Some(other) = runs.iter().find(|r| r.manifest.problem != problem) {
        return Err(CliError::Compare(format!(
            "runs mix problems {problem} and {} ({})",
            other.manifest.problem,
            other.dir.display()
        )));
    }

    let mut rows = Vec::new();
    for r in &runs {
        let last = r
            .final_stage()
            .ok_or_else(|| CliError::Compare(format!("{} has no completed stage", r.dir.display())))?;
        rows.push(ReportRow {
            method: r.label(),
            set_size: last.set_size,
            wall_seconds: last.wall_seconds,
            rel_l2_u: last.rel_l2_u,
            rel_l2_y: last.rel_l2_y,
        });
    }
    let mut report = Vec::new();
    write_report(&rows, &mut report)?;

    let mut by_samples = String::from("method,seed,stage,set_size,rel_l2_u,rel_l2_y\n");
    let mut by_epoch = String::from("method,seed,epoch,rel_l2_u,rel_l2_y\n");
    for r in &runs {
        let (m, seed) = (&r.manifest.method, r.manifest.seed);
        for s in &r.record.stages {
            by_samples.push_str(&format!("{m},{seed},{},{},{:e},{:e}\n", s.stage, s.set_size, s.rel_l2_u, s.rel_l2_y));
            let epoch = (s.stage + 1) * r.manifest.n_ep;
            by_epoch.push_str(&format!("{m},{seed},{epoch},{:e},{:e}\n", s.rel_l2_u, s.rel_l2_y));
        }
    }
    Ok(Comparison {
        runs,
        report: String::from_utf8(report).expect("report is ASCII"),
        by_samples,
        by_epoch,
    })
}

impl Comparison {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), &self.report)?;
        fs::write(dir.join("error_vs_samples.csv"), &self.by_samples)?;
        fs::write(dir.join("error_vs_epoch.csv"), &self.by_epoch)?;
        Ok(())
    }
}

/// The training set `S_k` of a run.
pub fn cmd_export_samples(dir: &Path, stage: usize) -> Result<TrainingSet> {
    let manifest = RunManifest::load(dir)?;
    let problem = manifest.problem()?;
    let path = stage_dir(dir, stage).join("trainset.csv");
    let file = fs::File::open(&path).map_err(|e| integrity(format!("{}: {e}", path.display())))?;
    let set = TrainingSet::read_csv(file, problem.spatial_dim(), problem.param_dim())?;
    if set.len() != (stage + 1) * manifest.n_r {
        return Err(integrity(format!(
            "{} holds {} points, expected {}",
            path.display(),
            set.len(),
            (stage + 1) * manifest.n_r
        )));
    }
    Ok(set)
}
