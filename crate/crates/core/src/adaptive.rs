//! Staged training with adaptive growth of the collocation set.
//!
//! Each stage trains the surrogates on the current set (warm-started from
//! the previous stage), fits the flow to the residual-induced density with
//! the previous stage's flow as proposal, and adds `n_r` flow samples that
//! lie in the domain. The two baselines share the loop: plain AONN grows
//! the set with uniform points, and the joint baseline replaces the
//! control network by the pointwise optimality map.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::aonn::{
    continue_aonn, draw_batch, evaluate_losses, joint_iterate_on, loss_adjoint, loss_state, Architecture, Batch,
    ControlModel, DalHyperparams, DalState, LogRow, DalReport, SurrogateTriplet, TrainingLog,
};
use crate::diffcore::checkpoint::save_network;
use crate::error::{Error, Result};
use crate::flow::{Flow, FlowConfig, FlowTraining};
use crate::metrics::{mean_errors, EvalSpec};
use crate::problems::{cutoff, sample_uniform, ProblemSpec, Source, TrainingSet};
use crate::seeds;

/// Acceptance below this fraction after `COLLAPSE_DRAWS · n_r` draws is a
/// sampler collapse.
pub const MIN_ACCEPTANCE: f64 = 0.01;
pub const COLLAPSE_DRAWS: usize = 100;

/// Training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMethod {
    /// DAL training, uniform set growth.
    Aonn,
    /// Joint training through the optimality map, flow set growth.
    Das2,
    /// DAL training, flow set growth.
    AdaptiveAonn,
}

impl RunMethod {
    pub fn name(self) -> &'static str {
        match self {
            RunMethod::Aonn => "aonn",
            RunMethod::Das2 => "das2",
            RunMethod::AdaptiveAonn => "adaptive-aonn",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "aonn" => Ok(RunMethod::Aonn),
            "das2" => Ok(RunMethod::Das2),
            "adaptive-aonn" => Ok(RunMethod::AdaptiveAonn),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected aonn, das2 or adaptive-aonn)"
            ))),
        }
    }

    fn uses_flow(self) -> bool {
        !matches!(self, RunMethod::Aonn)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveConfig {
    /// Number of stages `N_adaptive`.
    pub stages: usize,
    /// Points added per stage (and size of the initial set).
    pub n_r: usize,
    pub dal: DalHyperparams,
    pub arch: Architecture,
    pub flow: FlowConfig,
    pub flow_training: FlowTraining,
    /// Flow draws per missing point in each refinement round.
    pub oversample: usize,
    pub seed: u64,
    pub eval: Option<EvalSpec>,
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.n_r == 0 || self.oversample == 0 {
            return Err(Error::Range("stages, n_r and oversample must be positive".into()));
        }
        self.dal.validate()?;
        self.flow.validate()?;
        self.flow_training.validate()
    }
}

/// Summary of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub set_size: usize,
    pub loss_state: f64,
    pub loss_adjoint: f64,
    pub loss_control: f64,
    /// Mean cross entropy over the last tenth of the flow steps; NaN when
    /// the flow was not trained in this stage.
    pub flow_ce: f64,
    pub rel_l2_u: f64,
    pub rel_l2_y: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: RunMethod,
    pub problem: String,
    pub eval_label: Option<String>,
    pub stages: Vec<StageRecord>,
    pub logs: Vec<TrainingLog>,
}

impl RunRecord {
    pub const HEADER: &'static str = "stage,set_size,L_s,L_a,L_u,flow_CE,rel_l2_u,rel_l2_y,wall_seconds";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for s in &self.stages {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:.3}",
                s.stage,
                s.set_size,
                s.loss_state,
                s.loss_adjoint,
                s.loss_control,
                s.flow_ce,
                s.rel_l2_u,
                s.rel_l2_y,
                s.wall_seconds
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R, method: RunMethod, problem: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        if header.join(",") != Self::HEADER {
            return Err(Error::Parse(format!("run record header {header:?}")));
        }
        let mut stages = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let bad = || Error::Parse(format!("run record row {}", i + 2));
            let f = |k: usize| -> Result<f64> { rec.get(k).ok_or_else(bad)?.parse().map_err(|_| bad()) };
            let n = |k: usize| -> Result<usize> { rec.get(k).ok_or_else(bad)?.parse().map_err(|_| bad()) };
            stages.push(StageRecord {
                stage: n(0)?,
                set_size: n(1)?,
                loss_state: f(2)?,
                loss_adjoint: f(3)?,
                loss_control: f(4)?,
                flow_ce: f(5)?,
                rel_l2_u: f(6)?,
                rel_l2_y: f(7)?,
                wall_seconds: f(8)?,
            });
        }
        Ok(RunRecord {
            method,
            problem: problem.into(),
            eval_label: None,
            stages,
            logs: Vec::new(),
        })
    }
}

/// `(r_s² + r_a²)·h` at each point; zero where the cutoff vanishes.
pub fn residual_density(triplet: &SurrogateTriplet, problem: &dyn ProblemSpec, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let h: Vec<f64> = points.iter().map(|p| cutoff(p, problem)).collect();
    let (rs, ra) = triplet.residuals_at(problem, points)?;
    Ok(h.iter()
        .zip(rs.iter().zip(&ra))
        .map(|(&h, (s, a))| if h > 0.0 { (s * s + a * a) * h } else { 0.0 })
        .collect())
}

/// Adds `n_r` flow samples that satisfy domain membership, tagged `stage`.
/// Draws `oversample` candidates per missing point per round.
pub fn refine_training_set(
    set: &TrainingSet,
    flow: &Flow,
    problem: &dyn ProblemSpec,
    n_r: usize,
    stage: usize,
    oversample: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingSet> {
    if flow.dim() != problem.dim() {
        return Err(Error::Shape(format!("flow of dimension {} for {}", flow.dim(), problem.name())));
    }
    let mut out = set.clone();
    let (mut accepted, mut drawn) = (0usize, 0usize);
    while accepted < n_r {
        let want = (n_r - accepted) * oversample.max(1);
        let (x, _) = flow.sample(want, rng)?;
        drawn += want;
        for row in x.outer_iter() {
            if accepted == n_r {
                break;
            }
            let p = row.to_vec();
            if problem.contains(&p) {
                out.push(&p, stage, Source::Flow)?;
                accepted += 1;
            }
        }
        if accepted < n_r && drawn >= COLLAPSE_DRAWS * n_r && (accepted as f64) < MIN_ACCEPTANCE * drawn as f64 {
            return Err(Error::SamplerCollapse(format!(
                "{accepted} of {drawn} flow samples fall in the domain"
            )));
        }
    }
    Ok(out)
}

fn uniform_points(problem: &dyn ProblemSpec, n: usize, stage: usize, rng: &mut ChaCha8Rng) -> Result<TrainingSet> {
    let s = sample_uniform(problem, n, rng)?;
    let mut out = TrainingSet::new(problem.spatial_dim(), problem.param_dim());
    for p in s.iter() {
        out.push(p, stage, Source::Uniform)?;
    }
    Ok(out)
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub triplet: SurrogateTriplet,
    pub flow: Option<Flow>,
    pub record: RunRecord,
    pub set: TrainingSet,
}

pub fn stage_dir(root: &Path, stage: usize) -> PathBuf {
    root.join(format!("stage_{stage}"))
}

fn save_stage(
    root: &Path,
    stage: usize,
    problem: &dyn ProblemSpec,
    triplet: &SurrogateTriplet,
    flow: Option<&Flow>,
    set: &TrainingSet,
    log: &TrainingLog,
    record: &RunRecord,
) -> Result<()> {
    let dir = stage_dir(root, stage);
    fs::create_dir_all(&dir)?;
    let name = Some(problem.name());
    save_network(&dir.join("y.ckpt"), &triplet.state, name, Some("state"))?;
    save_network(&dir.join("p.ckpt"), &triplet.adjoint, name, Some("adjoint"))?;
    if let Some(u) = triplet.control_network() {
        save_network(&dir.join("u.ckpt"), u, name, Some("control"))?;
    }
    if let Some(f) = flow {
        f.save(&dir.join("flow.ckpt"))?;
    }
    set.write_csv(std::io::BufWriter::new(fs::File::create(dir.join("trainset.csv"))?))?;
    log.write_csv(std::io::BufWriter::new(fs::File::create(dir.join("log.csv"))?))?;
    record.write_csv(std::io::BufWriter::new(fs::File::create(root.join("record.csv"))?))?;
    Ok(())
}

fn tail_mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let k = (v.len() / 10).max(1);
    v[v.len() - k..].iter().sum::<f64>() / k as f64
}

/// Joint training of one stage: `n_ep` rounds, each on a fresh batch.
fn joint_stage(
    triplet: &mut SurrogateTriplet,
    problem: &dyn ProblemSpec,
    hp: &DalHyperparams,
    set: &TrainingSet,
    rng: &mut ChaCha8Rng,
    log: &mut TrainingLog,
) -> Result<()> {
    let start = Instant::now();
    let mut state = DalState::new(hp);
    for _ in 0..hp.n_ep {
        let batch = Batch::new(problem, draw_batch(set, hp.batch_size, rng)?, hp.boundary_batch)?;
        joint_iterate_on(triplet, problem, hp, &batch, state.n)?;
        log.rows.push(LogRow {
            report: DalReport {
                iteration: state.iteration,
                loss_state: loss_state(triplet, problem, &batch)?,
                loss_adjoint: loss_adjoint(triplet, problem, &batch)?,
                loss_control: f64::NAN,
                c: f64::NAN,
                n: state.n,
            },
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        state.n += hp.n_aug;
        state.iteration += 1;
    }
    Ok(())
}

/// Runs `method` for `cfg.stages` stages. With `out_dir`, every stage is
/// checkpointed under `stage_<k>/` and `record.csv` is rewritten, so a
/// failure keeps all completed stages on disk. `progress` sees each stage
/// record as it completes.
pub fn run_staged(
    problem: &dyn ProblemSpec,
    method: RunMethod,
    cfg: &AdaptiveConfig,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&StageRecord),
) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let grids = match &cfg.eval {
        Some(e) => Some(e.grids(problem)?),
        None => None,
    };
    let mut triplet = SurrogateTriplet::new(problem, &cfg.arch, cfg.dal.method, cfg.seed)?;
    if method == RunMethod::Das2 {
        triplet = SurrogateTriplet::from_networks(triplet.state, triplet.adjoint, ControlModel::OptimalityMap, cfg.dal.method);
        // The joint optimizer covers both networks.
        let dim = triplet.state.param_count() + triplet.adjoint.param_count();
        triplet.state_opt = crate::diffcore::OptimizerState::new(cfg.dal.method, dim);
    }
    let mut flow = if method.uses_flow() {
        Some(Flow::new(&problem.bounding_box(), cfg.flow.clone(), seeds::derive(cfg.seed, seeds::FLOW_INIT))?)
    } else {
        None
    };
    let mut uniform_rng = seeds::rng(cfg.seed, seeds::UNIFORM_SAMPLES);
    let mut batch_rng = seeds::rng(cfg.seed, seeds::BATCHES);
    let mut set = uniform_points(problem, cfg.n_r, 0, &mut uniform_rng)?;
    let mut record = RunRecord {
        method,
        problem: problem.name().into(),
        eval_label: cfg.eval.as_ref().map(EvalSpec::label),
        stages: Vec::new(),
        logs: Vec::new(),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    for k in 0..cfg.stages {
        if set.len() != (k + 1) * cfg.n_r {
            return Err(Error::Integrity(format!("stage {k} set holds {} points", set.len())));
        }
        let mut log = TrainingLog::default();
        let mut state = DalState::new(&cfg.dal);
        match method {
            RunMethod::Das2 => joint_stage(&mut triplet, problem, &cfg.dal, &set, &mut batch_rng, &mut log)?,
            _ => continue_aonn(&mut triplet, problem, &cfg.dal, &set, &mut state, &mut batch_rng, &mut log, cfg.dal.n_ep)?,
        }
        let (ls, la, lu) = evaluate_losses(&triplet, problem, &set, state.c, cfg.dal.boundary_batch)?;
        let errors = match &grids {
            Some(g) => mean_errors(&triplet, problem, g)?,
            None => None,
        };

        // The last stage's flow would only feed points nobody trains on.
        let last = k + 1 == cfg.stages;
        let mut flow_ce = f64::NAN;
        let mut next = None;
        if !last {
            next = Some(match flow.as_mut() {
                Some(f) => {
                    let mut rng = seeds::rng(cfg.seed, seeds::FLOW_TRAIN + k as u64);
                    let t = &triplet;
                    let mut target = |x: &Array2<f64>| {
                        let pts: Vec<Vec<f64>> = x.outer_iter().map(|r| r.to_vec()).collect();
                        residual_density(t, problem, &pts)
                    };
                    let hist = f.train_cross_entropy(&mut target, &cfg.flow_training, &mut rng)?;
                    flow_ce = tail_mean(&hist);
                    let mut rng = seeds::rng(cfg.seed, seeds::REFINE + k as u64);
                    refine_training_set(&set, f, problem, cfg.n_r, k + 1, cfg.oversample, &mut rng)?
                }
                None => {
                    let mut s = set.clone();
                    s.extend(&uniform_points(problem, cfg.n_r, k + 1, &mut uniform_rng)?)?;
                    s
                }
            });
        }
        let rec = StageRecord {
            stage: k,
            set_size: set.len(),
            loss_state: ls,
            loss_adjoint: la,
            loss_control: if method == RunMethod::Das2 { f64::NAN } else { lu },
            flow_ce,
            rel_l2_u: errors.map_or(f64::NAN, |e| e.control),
            rel_l2_y: errors.map_or(f64::NAN, |e| e.state),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        record.stages.push(rec);
        if let Some(dir) = out_dir {
            save_stage(dir, k, problem, &triplet, flow.as_ref(), &set, &log, &record)?;
        }
        record.logs.push(log);
        progress(&rec);
        if let Some(s) = next {
            set = s;
        }
    }
    Ok(RunOutcome {
        triplet,
        flow,
        record,
        set,
    })
}

/// Adaptive AONN: DAL training with flow-driven set growth.
pub fn run_adaptive_aonn(problem: &dyn ProblemSpec, cfg: &AdaptiveConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    run_staged(problem, RunMethod::AdaptiveAonn, cfg, out_dir, &mut |_| {})
}

/// Joint baseline with the control given by the optimality map.
pub fn run_das2_baseline(problem: &dyn ProblemSpec, cfg: &AdaptiveConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    run_staged(problem, RunMethod::Das2, cfg, out_dir, &mut |_| {})
}
