//! Relative errors on evaluation grids, reference fields and run reports.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aonn::SurrogateTriplet;
use crate::error::{Error, Result};
use crate::problems::{trainset::format_real, ControlKind, ProblemSpec, SpatioParamPoint};

/// `‖pred − ref‖₂ / ‖ref‖₂`.
pub fn relative_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} reference values",
            pred.len(),
            reference.len()
        )));
    }
    let den: f64 = reference.iter().map(|v| v * v).sum();
    if !(den > 0.0) {
        return Err(Error::UndefinedMetric("reference has zero norm".into()));
    }
    let num: f64 = pred.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((num / den).sqrt())
}

/// Grid at a fixed parameter value, filtered by domain membership.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub xi: Vec<f64>,
    pub resolution: Vec<usize>,
    /// Points for the state and adjoint.
    pub points: Vec<SpatioParamPoint>,
    /// Points for the control (the interior grid for a distributed control,
    /// a boundary grid otherwise).
    pub control_points: Vec<SpatioParamPoint>,
}

pub fn make_eval_grid(problem: &dyn ProblemSpec, xi: &[f64], resolution: &[usize]) -> Result<EvalGrid> {
    let points: Vec<_> = problem
        .grid_points(xi, resolution)?
        .into_iter()
        .filter(|p| problem.contains(p))
        .collect();
    let control_points = match problem.control_kind() {
        ControlKind::Distributed => points.clone(),
        ControlKind::Boundary => problem.control_grid_points(xi, resolution)?,
    };
    Ok(EvalGrid {
        xi: xi.to_vec(),
        resolution: resolution.to_vec(),
        points,
        control_points,
    })
}

/// Relative errors of one surrogate on one grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldErrors {
    pub control: f64,
    pub state: f64,
    pub adjoint: f64,
}

/// Which ξ values an error refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// One entry is a fixed-ξ error; several are averaged.
    pub xi: Vec<Vec<f64>>,
    pub resolution: Vec<usize>,
}

impl EvalSpec {
    pub fn label(&self) -> String {
        if self.xi.len() == 1 {
            format!("fixed xi={:?}", self.xi[0])
        } else {
            format!("mean over {} xi values", self.xi.len())
        }
    }

    pub fn grids(&self, problem: &dyn ProblemSpec) -> Result<Vec<EvalGrid>> {
        if self.xi.is_empty() {
            return Err(Error::Config("evaluation needs at least one xi".into()));
        }
        self.xi.iter().map(|xi| make_eval_grid(problem, xi, &self.resolution)).collect()
    }
}

/// Errors against the problem's closed-form solution, `None` when it has none.
pub fn errors_against_exact(
    triplet: &SurrogateTriplet,
    problem: &dyn ProblemSpec,
    grid: &EvalGrid,
) -> Result<Option<FieldErrors>> {
    let exact = |f: &dyn Fn(&[f64]) -> Option<f64>, pts: &[SpatioParamPoint]| -> Option<Vec<f64>> {
        pts.iter().map(|p| f(p)).collect()
    };
    let (Some(y), Some(u), Some(p)) = (
        exact(&|q| problem.exact_state(q), &grid.points),
        exact(&|q| problem.exact_control(q), &grid.control_points),
        exact(&|q| problem.exact_adjoint(q), &grid.points),
    ) else {
        return Ok(None);
    };
    Ok(Some(FieldErrors {
        control: relative_l2(&triplet.control_at(problem, &grid.control_points)?, &u)?,
        state: relative_l2(&triplet.state_at(problem, &grid.points)?, &y)?,
        adjoint: relative_l2(&triplet.adjoint_at(problem, &grid.points)?, &p)?,
    }))
}

/// Mean errors over the grids, `None` when the problem has no closed form.
pub fn mean_errors(triplet: &SurrogateTriplet, problem: &dyn ProblemSpec, grids: &[EvalGrid]) -> Result<Option<FieldErrors>> {
    let mut acc = FieldErrors {
        control: 0.0,
        state: 0.0,
        adjoint: 0.0,
    };
    for g in grids {
        let Some(e) = errors_against_exact(triplet, problem, g)? else {
            return Ok(None);
        };
        acc.control += e.control;
        acc.state += e.state;
        acc.adjoint += e.adjoint;
    }
    let n = grids.len().max(1) as f64;
    Ok(Some(FieldErrors {
        control: acc.control / n,
        state: acc.state / n,
        adjoint: acc.adjoint / n,
    }))
}

/// Stored reference field for problems without a closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub manifest: ReferenceManifest,
    pub points: Vec<[f64; 2]>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceManifest {
    pub problem: String,
    pub xi: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl Reference {
    pub const HEADER: &'static str = "x1,x2,y,u,p";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for i in 0..self.points.len() {
            let row = [self.points[i][0], self.points[i][1], self.y[i], self.u[i], self.p[i]];
            let line: Vec<String> = row.iter().map(|v| format_real(*v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, manifest: ReferenceManifest) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        if header.join(",") != Self::HEADER {
            return Err(Error::Parse(format!("reference header {header:?}, expected {}", Self::HEADER)));
        }
        let mut out = Reference {
            manifest,
            points: Vec::new(),
            y: Vec::new(),
            u: Vec::new(),
            p: Vec::new(),
        };
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("reference row {}: bad number `{s}`", i + 2))))
                .collect::<Result<_>>()?;
            if v.len() != 5 {
                return Err(Error::Parse(format!("reference row {} has {} fields", i + 2, v.len())));
            }
            out.points.push([v[0], v[1]]);
            out.y.push(v[2]);
            out.u.push(v[3]);
            out.p.push(v[4]);
        }
        Ok(out)
    }

    /// Writes `<stem>.csv` and `<stem>.toml` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let text = toml::to_string(&self.manifest).map_err(|e| Error::Integrity(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.toml")), text)?;
        let f = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(format!("{stem}.toml")))?;
        let manifest: ReferenceManifest = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        let f = std::fs::File::open(dir.join(format!("{stem}.csv")))?;
        Reference::read_csv(f, manifest)
    }

    /// Errors of a surrogate at the reference points (distributed control only).
    pub fn errors(&self, triplet: &SurrogateTriplet, problem: &dyn ProblemSpec) -> Result<FieldErrors> {
        if self.manifest.problem != problem.name() {
            return Err(Error::Integrity(format!(
                "reference for {} used with {}",
                self.manifest.problem,
                problem.name()
            )));
        }
        let pts: Vec<SpatioParamPoint> = self
            .points
            .iter()
            .map(|x| {
                let mut p = x.to_vec();
                p.extend_from_slice(&self.manifest.xi);
                p
            })
            .collect();
        Ok(FieldErrors {
            control: relative_l2(&triplet.control_at(problem, &pts)?, &self.u)?,
            state: relative_l2(&triplet.state_at(problem, &pts)?, &self.y)?,
            adjoint: relative_l2(&triplet.adjoint_at(problem, &pts)?, &self.p)?,
        })
    }
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub set_size: usize,
    pub wall_seconds: f64,
    pub rel_l2_u: f64,
    pub rel_l2_y: f64,
}

pub const REPORT_HEADER: &str = "method,set_size,wall_seconds,rel_l2_u,rel_l2_y";

pub fn write_report<W: Write>(rows: &[ReportRow], mut w: W) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.3},{:e},{:e}",
            r.method, r.set_size, r.wall_seconds, r.rel_l2_u, r.rel_l2_y
        )?;
    }
    Ok(())
}
