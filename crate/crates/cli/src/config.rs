//! Run configuration files.
//!
//! A config is a TOML document. Top-level keys pick the problem, the method
//! and the seeds; tables tune the stage schedule, the DAL loop, the network
//! shape, the flow and the evaluation grid. Everything except `problem`,
//! `method`, `adaptive.stages` and `adaptive.n_r` has a default.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use ocp_core::adaptive::{AdaptiveConfig, RunMethod};
use ocp_core::aonn::{Architecture, DalHyperparams};
use ocp_core::diffcore::{Activation, Method};
use ocp_core::flow::{FlowConfig, FlowTraining};
use ocp_core::metrics::EvalSpec;
use ocp_core::problems::by_name;
use serde::Deserialize;
use toml::Spanned;

use crate::error::{CliError, Result};

pub const REQUIRED_KEYS: [&str; 4] = ["problem", "method", "adaptive.stages", "adaptive.n_r"];

/// Fully resolved run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    /// Regularization override (oracle1d only).
    pub alpha: Option<f64>,
    pub method: RunMethod,
    pub seeds: Vec<u64>,
    /// Run directory, relative to the output root unless absolute.
    pub output: String,
    /// Shared settings; `seed` is replaced per run.
    pub adaptive: AdaptiveConfig,
}

impl RunConfig {
    /// Settings of the run for one seed.
    pub fn for_seed(&self, seed: u64) -> AdaptiveConfig {
        AdaptiveConfig {
            seed,
            ..self.adaptive.clone()
        }
    }

    /// TOML text that parses back to this config, with every default spelled
    /// out. `seeds` overrides the seed list.
    pub fn snapshot(&self, seeds: &[u64]) -> String {
        let a = &self.adaptive;
        let d = &a.dal;
        let mut s = String::new();
        let _ = writeln!(s, "problem = {:?}", self.problem);
        let _ = writeln!(s, "method = {:?}", self.method.name());
        let _ = writeln!(s, "seeds = {seeds:?}");
        let _ = writeln!(s, "output = {:?}", self.output);
        if let Some(alpha) = self.alpha {
            let _ = writeln!(s, "alpha = {}", real(alpha));
        }
        let _ = writeln!(s, "\n[adaptive]");
        let _ = writeln!(s, "stages = {}", a.stages);
        let _ = writeln!(s, "n_r = {}", a.n_r);
        let _ = writeln!(s, "oversample = {}", a.oversample);
        let _ = writeln!(s, "\n[dal]");
        let _ = writeln!(s, "gamma = {}", real(d.gamma));
        let _ = writeln!(s, "c0 = {}", real(d.c0));
        let _ = writeln!(s, "n0 = {}", d.n0);
        let _ = writeln!(s, "n_aug = {}", d.n_aug);
        let _ = writeln!(s, "n_ep = {}", d.n_ep);
        let _ = writeln!(s, "batch_size = {}", d.batch_size);
        let _ = writeln!(s, "inner_steps = {}", d.inner_steps);
        let _ = writeln!(s, "boundary_batch = {}", d.boundary_batch);
        let _ = writeln!(s, "divergence_factor = {}", real(d.divergence_factor));
        match d.method {
            Method::QuasiNewton { memory } => {
                let _ = writeln!(s, "optimizer = \"lbfgs\"\nlbfgs_memory = {memory}");
            }
            Method::AdaptiveMoment { lr } => {
                let _ = writeln!(s, "optimizer = \"adam\"\nlearning_rate = {}", real(lr));
            }
        }
        let _ = writeln!(s, "\n[network]");
        let _ = writeln!(s, "hidden = {:?}", a.arch.hidden);
        let _ = writeln!(s, "activation = {:?}", a.arch.activation.name());
        let f = &a.flow;
        let _ = writeln!(s, "\n[flow]");
        let _ = writeln!(s, "blocks = {}", f.blocks);
        let _ = writeln!(s, "layers = {}", f.layers);
        let _ = writeln!(s, "hidden = {}", f.hidden);
        let _ = writeln!(s, "depth = {}", f.depth);
        let _ = writeln!(s, "scale_cap = {}", real(f.scale_cap));
        let t = &a.flow_training;
        let _ = writeln!(s, "\n[flow_training]");
        let _ = writeln!(s, "steps = {}", t.steps);
        let _ = writeln!(s, "batch = {}", t.batch);
        let _ = writeln!(s, "learning_rate = {}", real(t.learning_rate));
        let _ = writeln!(s, "refresh = {}", t.refresh);
        if let Some(e) = &a.eval {
            let xi: Vec<String> = e
                .xi
                .iter()
                .map(|x| format!("[{}]", x.iter().map(|v| real(*v)).collect::<Vec<_>>().join(", ")))
                .collect();
            let _ = writeln!(s, "\n[eval]");
            let _ = writeln!(s, "xi = [{}]", xi.join(", "));
            let _ = writeln!(s, "resolution = {:?}", e.resolution);
        }
        s
    }
}

/// Shortest round-tripping float literal that TOML accepts.
fn real(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E']) || !v.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    problem: Option<Spanned<String>>,
    method: Option<Spanned<String>>,
    seeds: Option<Spanned<Vec<u64>>>,
    output: Option<Spanned<String>>,
    alpha: Option<Spanned<f64>>,
    adaptive: Option<AdaptiveTable>,
    dal: Option<DalTable>,
    network: Option<NetworkTable>,
    flow: Option<FlowTable>,
    flow_training: Option<FlowTrainingTable>,
    eval: Option<EvalTable>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdaptiveTable {
    stages: Option<Spanned<usize>>,
    n_r: Option<Spanned<usize>>,
    oversample: Option<Spanned<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DalTable {
    gamma: Option<Spanned<f64>>,
    c0: Option<Spanned<f64>>,
    n0: Option<Spanned<usize>>,
    n_aug: Option<Spanned<usize>>,
    n_ep: Option<Spanned<usize>>,
    batch_size: Option<Spanned<usize>>,
    inner_steps: Option<Spanned<usize>>,
    boundary_batch: Option<Spanned<usize>>,
    divergence_factor: Option<Spanned<f64>>,
    optimizer: Option<Spanned<String>>,
    lbfgs_memory: Option<Spanned<usize>>,
    learning_rate: Option<Spanned<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkTable {
    hidden: Option<Spanned<Vec<usize>>>,
    activation: Option<Spanned<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowTable {
    blocks: Option<Spanned<usize>>,
    layers: Option<Spanned<usize>>,
    hidden: Option<Spanned<usize>>,
    depth: Option<Spanned<usize>>,
    scale_cap: Option<Spanned<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowTrainingTable {
    steps: Option<Spanned<usize>>,
    batch: Option<Spanned<usize>>,
    learning_rate: Option<Spanned<f64>>,
    refresh: Option<Spanned<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalTable {
    xi: Spanned<Vec<Vec<f64>>>,
    resolution: Spanned<Vec<usize>>,
}

/// Byte offsets to line numbers, for error messages.
struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn of(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.0.len());
        self.0[..end].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn range<T>(&self, v: &Spanned<T>, msg: impl Into<String>) -> CliError {
        CliError::Config {
            line: Some(self.of(v.span())),
            message: msg.into(),
        }
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let lines = Lines(text);
    let file: File = toml::from_str(text).map_err(|e| CliError::Config {
        line: e.span().map(|s| lines.of(s)),
        message: e.message().trim().to_string(),
    })?;

    let adaptive = file.adaptive.unwrap_or_default();
    let mut missing = Vec::new();
    if file.problem.is_none() {
        missing.push(REQUIRED_KEYS[0]);
    }
    if file.method.is_none() {
        missing.push(REQUIRED_KEYS[1]);
    }
    if adaptive.stages.is_none() {
        missing.push(REQUIRED_KEYS[2]);
    }
    if adaptive.n_r.is_none() {
        missing.push(REQUIRED_KEYS[3]);
    }
    if !missing.is_empty() {
        return Err(CliError::MissingKeys(missing.into_iter().map(String::from).collect()));
    }
    let (problem_s, method_s) = (file.problem.unwrap(), file.method.unwrap());
    let (stages, n_r) = (adaptive.stages.unwrap(), adaptive.n_r.unwrap());

    let alpha = match &file.alpha {
        Some(a) if !(*a.get_ref() > 0.0 && a.get_ref().is_finite()) => {
            return Err(lines.range(a, format!("alpha = {} must be positive", a.get_ref())));
        }
        Some(a) if problem_s.get_ref() != "oracle1d" => {
            return Err(lines.range(a, "alpha can only be set for oracle1d"));
        }
        a => a.as_ref().map(|v| *v.get_ref()),
    };
    let problem = by_name(problem_s.get_ref(), alpha).map_err(|e| lines.range(&problem_s, e.to_string()))?;
    let method = RunMethod::from_name(method_s.get_ref()).map_err(|e| lines.range(&method_s, e.to_string()))?;

    let positive = |v: &Spanned<usize>, name: &str| -> Result<usize> {
        if *v.get_ref() == 0 {
            Err(lines.range(v, format!("{name} must be positive")))
        } else {
            Ok(*v.get_ref())
        }
    };
    let positive_real = |v: &Spanned<f64>, name: &str| -> Result<f64> {
        let x = *v.get_ref();
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            Err(lines.range(v, format!("{name} = {x} must be positive")))
        }
    };

    let seeds = match file.seeds {
        Some(s) if s.get_ref().is_empty() => return Err(lines.range(&s, "seeds must not be empty")),
        Some(s) => s.into_inner(),
        None => vec![0],
    };

    let mut dal = DalHyperparams::default();
    let dt = file.dal.unwrap_or_default();
    if let Some(g) = &dt.gamma {
        let x = *g.get_ref();
        if !(x > 0.0 && x <= 1.0) {
            return Err(lines.range(g, format!("gamma = {x} outside (0, 1]")));
        }
        dal.gamma = x;
    }
    if let Some(v) = &dt.c0 {
        dal.c0 = positive_real(v, "c0")?;
    }
    if let Some(v) = &dt.n0 {
        dal.n0 = positive(v, "n0")?;
    }
    if let Some(v) = &dt.n_aug {
        dal.n_aug = *v.get_ref();
    }
    if let Some(v) = &dt.n_ep {
        dal.n_ep = positive(v, "n_ep")?;
    }
    if let Some(v) = &dt.batch_size {
        dal.batch_size = positive(v, "batch_size")?;
    }
    if let Some(v) = &dt.inner_steps {
        dal.inner_steps = positive(v, "inner_steps")?;
    }
    if let Some(v) = &dt.boundary_batch {
        dal.boundary_batch = positive(v, "boundary_batch")?;
    }
    if let Some(v) = &dt.divergence_factor {
        let x = *v.get_ref();
        if !(x > 1.0) {
            return Err(lines.range(v, format!("divergence_factor = {x} must exceed 1")));
        }
        dal.divergence_factor = x;
    }
    let optimizer = dt.optimizer.as_ref().map(|s| s.get_ref().as_str()).unwrap_or("lbfgs");
    dal.method = match optimizer {
        "lbfgs" => {
            if let Some(lr) = &dt.learning_rate {
                return Err(lines.range(lr, "learning_rate applies to optimizer = \"adam\""));
            }
            match &dt.lbfgs_memory {
                Some(m) => Method::QuasiNewton {
                    memory: positive(m, "lbfgs_memory")?,
                },
                None => Method::default(),
            }
        }
        "adam" => {
            if let Some(m) = &dt.lbfgs_memory {
                return Err(lines.range(m, "lbfgs_memory applies to optimizer = \"lbfgs\""));
            }
            Method::AdaptiveMoment {
                lr: match &dt.learning_rate {
                    Some(lr) => positive_real(lr, "learning_rate")?,
                    None => 1e-3,
                },
            }
        }
        other => {
            let at = dt.optimizer.as_ref().unwrap();
            return Err(lines.range(at, format!("unknown optimizer `{other}` (expected lbfgs or adam)")));
        }
    };

    let mut arch = Architecture::default();
    if let Some(nt) = file.network {
        if let Some(h) = nt.hidden {
            if h.get_ref().is_empty() || h.get_ref().contains(&0) {
                return Err(lines.range(&h, "hidden widths must be a non-empty list of positive sizes"));
            }
            arch.hidden = h.into_inner();
        }
        if let Some(a) = nt.activation {
            arch.activation = Activation::from_name(a.get_ref()).map_err(|e| lines.range(&a, e.to_string()))?;
        }
    }

    let mut flow = FlowConfig::default();
    if let Some(ft) = file.flow {
        if let Some(v) = &ft.blocks {
            flow.blocks = positive(v, "flow.blocks")?;
        }
        if let Some(v) = &ft.layers {
            flow.layers = positive(v, "flow.layers")?;
        }
        if let Some(v) = &ft.hidden {
            flow.hidden = positive(v, "flow.hidden")?;
        }
        if let Some(v) = &ft.depth {
            flow.depth = positive(v, "flow.depth")?;
        }
        if let Some(v) = &ft.scale_cap {
            flow.scale_cap = positive_real(v, "flow.scale_cap")?;
        }
    }

    let mut flow_training = FlowTraining::default();
    if let Some(tt) = file.flow_training {
        if let Some(v) = &tt.steps {
            flow_training.steps = *v.get_ref();
        }
        if let Some(v) = &tt.batch {
            flow_training.batch = positive(v, "flow_training.batch")?;
        }
        if let Some(v) = &tt.learning_rate {
            flow_training.learning_rate = positive_real(v, "flow_training.learning_rate")?;
        }
        if let Some(v) = &tt.refresh {
            flow_training.refresh = *v.get_ref();
        }
    }

    let eval = match file.eval {
        None => None,
        Some(et) => {
            if et.xi.get_ref().is_empty() {
                return Err(lines.range(&et.xi, "eval.xi must list at least one parameter"));
            }
            if let Some(bad) = et.xi.get_ref().iter().find(|x| x.len() != problem.param_dim()) {
                return Err(lines.range(
                    &et.xi,
                    format!("eval.xi entry {bad:?} has {} values, {} expects {}", bad.len(), problem.name(), problem.param_dim()),
                ));
            }
            let spec = EvalSpec {
                xi: et.xi.get_ref().clone(),
                resolution: et.resolution.get_ref().clone(),
            };
            spec.grids(problem.as_ref()).map_err(|e| lines.range(&et.resolution, e.to_string()))?;
            Some(spec)
        }
    };

    let oversample = match &adaptive.oversample {
        Some(v) => positive(v, "adaptive.oversample")?,
        None => 4,
    };
    let cfg = AdaptiveConfig {
        stages: positive(&stages, "adaptive.stages")?,
        n_r: positive(&n_r, "adaptive.n_r")?,
        dal,
        arch,
        flow,
        flow_training,
        oversample,
        seed: seeds[0],
        eval,
    };
    cfg.validate().map_err(|e| CliError::Config {
        line: None,
        message: e.to_string(),
    })?;

    let output = match file.output {
        Some(o) if o.get_ref().trim().is_empty() => return Err(lines.range(&o, "output must not be empty")),
        Some(o) => o.into_inner(),
        None => format!("{}_{}", problem.name(), method.name()),
    };
    Ok(RunConfig {
        problem: problem.name().to_string(),
        alpha,
        method,
        seeds,
        output,
        adaptive: cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "problem = \"oracle1d\"\nmethod = \"aonn\"\n[adaptive]\nstages = 1\nn_r = 10\n";

    fn line_of(err: CliError) -> Option<usize> {
        match err {
            CliError::Config { line, .. } => line,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn empty_file_lists_every_required_key() {
        match parse_config_str("") {
            Err(CliError::MissingKeys(keys)) => assert_eq!(keys, REQUIRED_KEYS),
            other => panic!("{other:?}"),
        }
        match parse_config_str("problem = \"test1\"\n") {
            Err(CliError::MissingKeys(keys)) => assert_eq!(keys, ["method", "adaptive.stages", "adaptive.n_r"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.problem, "oracle1d");
        assert_eq!(c.method, RunMethod::Aonn);
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.output, "oracle1d_aonn");
        assert_eq!(c.adaptive.dal, DalHyperparams::default());
        assert_eq!(c.adaptive.flow, FlowConfig::default());
        assert!(c.adaptive.eval.is_none());
    }

    #[test]
    fn gamma_out_of_range_points_at_its_line() {
        let text = format!("{MINIMAL}[dal]\ngamma = 1.5\n");
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
        assert_eq!(line_of(err), Some(7));
    }

    #[test]
    fn unknown_keys_and_type_errors_carry_lines() {
        let err = parse_config_str(&format!("{MINIMAL}[dal]\ngama = 0.9\n")).unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
        assert_eq!(line_of(err), Some(7));
        let err = parse_config_str(&format!("{MINIMAL}[dal]\nn0 = \"ten\"\n")).unwrap_err();
        assert_eq!(line_of(err), Some(7));
        let err = parse_config_str("problem = \"test2\"\nmethod = \"aonn\"\n[adaptive]\nstages = 1\nn_r = 1\n").unwrap_err();
        assert_eq!(line_of(err), Some(1));
        let err = parse_config_str("problem = \"test1\"\nmethod = \"pinn\"\n[adaptive]\nstages = 1\nn_r = 1\n").unwrap_err();
        assert_eq!(line_of(err), Some(2));
    }

    #[test]
    fn eval_xi_must_match_the_parameter_dimension() {
        let text = "problem = \"test1\"\nmethod = \"aonn\"\n[adaptive]\nstages = 1\nn_r = 1\n[eval]\nxi = [[0.25]]\nresolution = [8, 8]\n";
        assert_eq!(line_of(parse_config_str(text).unwrap_err()), Some(7));
    }

    #[test]
    fn optimizer_keys_must_match_the_optimizer() {
        let text = format!("{MINIMAL}[dal]\nlearning_rate = 0.01\n");
        assert_eq!(line_of(parse_config_str(&text).unwrap_err()), Some(7));
        let text = format!("{MINIMAL}[dal]\noptimizer = \"adam\"\nlearning_rate = 0.01\n");
        let c = parse_config_str(&text).unwrap();
        assert_eq!(c.adaptive.dal.method, Method::AdaptiveMoment { lr: 0.01 });
    }

    #[test]
    fn snapshot_parses_back_to_the_same_config() {
        let text = "problem = \"test1\"\nmethod = \"adaptive-aonn\"\nseeds = [3, 4]\n\
                    [adaptive]\nstages = 2\nn_r = 100\n[dal]\ngamma = 0.985\nc0 = 100\n\
                    [flow_training]\nlearning_rate = 1e-4\n[eval]\nxi = [[0.25, 2.0]]\nresolution = [16, 8]\n";
        let c = parse_config_str(text).unwrap();
        let back = parse_config_str(&c.snapshot(&c.seeds)).unwrap();
        assert_eq!(back, c);
        let one = parse_config_str(&c.snapshot(&[4])).unwrap();
        assert_eq!(one.seeds, vec![4]);
        assert_eq!(real(100.0), "100.0");
        assert_eq!(real(1e-4), "0.0001");
    }
}
