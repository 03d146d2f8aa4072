//! Collocation sets with per-point provenance.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// How a collocation point was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Uniform,
    Flow,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Uniform => "uniform",
            Source::Flow => "flow",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Source::Uniform),
            "flow" => Ok(Source::Flow),
            other => Err(Error::Parse(format!("unknown point source `{other}`"))),
        }
    }
}

/// A multiset of points stored row-major, with the stage that added each
/// point and how it was generated.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    spatial_dim: usize,
    param_dim: usize,
    coords: Vec<f64>,
    stage: Vec<usize>,
    source: Vec<Source>,
}

impl TrainingSet {
    pub fn new(spatial_dim: usize, param_dim: usize) -> Self {
        TrainingSet {
            spatial_dim,
            param_dim,
            coords: Vec::new(),
            stage: Vec::new(),
            source: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.spatial_dim + self.param_dim
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn len(&self) -> usize {
        self.stage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stage.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn stage(&self, i: usize) -> usize {
        self.stage[i]
    }

    pub fn source(&self, i: usize) -> Source {
        self.source[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim().max(1))
    }

    pub fn push(&mut self, point: &[f64], stage: usize, source: Source) -> Result<()> {
        if point.len() != self.dim() {
            return Err(Error::Shape(format!(
                "point of length {} in a set of dimension {}",
                point.len(),
                self.dim()
            )));
        }
        if point.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite collocation point {point:?}")));
        }
        self.coords.extend_from_slice(point);
        self.stage.push(stage);
        self.source.push(source);
        Ok(())
    }

    /// Multiset union: every point of `other` is appended, duplicates kept.
    pub fn extend(&mut self, other: &TrainingSet) -> Result<()> {
        if other.spatial_dim != self.spatial_dim || other.param_dim != self.param_dim {
            return Err(Error::Shape("training sets of different dimensions".into()));
        }
        self.coords.extend_from_slice(&other.coords);
        self.stage.extend_from_slice(&other.stage);
        self.source.extend_from_slice(&other.source);
        Ok(())
    }

    /// Points added at or before `stage`.
    pub fn up_to_stage(&self, stage: usize) -> TrainingSet {
        let mut out = TrainingSet::new(self.spatial_dim, self.param_dim);
        for i in 0..self.len() {
            if self.stage[i] <= stage {
                out.coords.extend_from_slice(self.point(i));
                out.stage.push(self.stage[i]);
                out.source.push(self.source[i]);
            }
        }
        out
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (1..=self.spatial_dim).map(|i| format!("x{i}")).collect();
        h.extend((1..=self.param_dim).map(|i| format!("xi{i}")));
        h.push("stage".into());
        h.push("source".into());
        h
    }

    /// CSV with header `x1..xn,xi1..xid,stage,source`; reals carry 17
    /// significant digits so the file round-trips exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line = self.header().join(",");
        line.push('\n');
        w.write_all(line.as_bytes())?;
        for i in 0..self.len() {
            line.clear();
            for v in self.point(i) {
                line.push_str(&format_real(*v));
                line.push(',');
            }
            line.push_str(&self.stage[i].to_string());
            line.push(',');
            line.push_str(self.source[i].as_str());
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, spatial_dim: usize, param_dim: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let mut set = TrainingSet::new(spatial_dim, param_dim);
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect::<Vec<_>>();
        if headers != set.header() {
            return Err(Error::Parse(format!(
                "unexpected header {headers:?}, expected {:?}",
                set.header()
            )));
        }
        let d = set.dim();
        let mut p = vec![0.0; d];
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let bad = |what: &str| Error::Parse(format!("row {}: bad {what}", row + 2));
            for (k, v) in p.iter_mut().enumerate() {
                *v = rec.get(k).ok_or_else(|| bad("coordinate"))?.parse().map_err(|_| bad("coordinate"))?;
            }
            let stage = rec.get(d).ok_or_else(|| bad("stage"))?.parse().map_err(|_| bad("stage"))?;
            let source = Source::parse(rec.get(d + 1).ok_or_else(|| bad("source"))?)?;
            set.push(&p, stage, source)?;
        }
        Ok(set)
    }
}

/// Scientific notation with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}
