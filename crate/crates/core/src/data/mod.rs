//! Pair-file I/O, normalization, synthetic benchmark generators, and
//! direction-balanced ROC-AUC evaluation.

mod generators;
mod metrics;

pub use generators::{
    gen_anm, gen_anm_parts, gen_ce_gauss, gen_ce_multi, gen_ce_net, AnmConfig, AnmFunction,
    AnmParts, CauseDist, CeMultiFunc, CeMultiMode, NoiseSpec, RffGp,
};
pub use metrics::{balance_directions, roc_auc};

use std::fmt;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth or predicted causal direction of a bivariate pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    XtoY,
    YtoX,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::XtoY => Direction::YtoX,
            Direction::YtoX => Direction::XtoY,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "XtoY" | "x->y" | "->" => Ok(Direction::XtoY),
            "YtoX" | "y->x" | "<-" => Ok(Direction::YtoX),
            other => Err(Error::InvalidParameter {
                name: "direction".into(),
                reason: format!("unknown direction {other:?}"),
            }),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::XtoY => write!(f, "XtoY"),
            Direction::YtoX => write!(f, "YtoX"),
        }
    }
}

/// Paired numeric samples with an optional ground-truth direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub label: Option<Direction>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset columns",
                expected: x.len(),
                got: y.len(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset values"));
        }
        Ok(Self {
            name: name.into(),
            x,
            y,
            label: None,
        })
    }

    pub fn with_label(mut self, label: Direction) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }

    pub fn y_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }

    /// Swap the roles of x and y and flip the label. An involution.
    pub fn mirrored(&self) -> Self {
        Self {
            name: self.name.clone(),
            x: self.y.clone(),
            y: self.x.clone(),
            label: self.label.map(Direction::flipped),
        }
    }
}

/// Load a whitespace-separated two-column pair file.
pub fn load_pair_file(path: &Path) -> Result<Dataset> {
    let content = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pair".to_string());
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() > 2 {
            // Multivariate pairs are out of scope; only two-variable pairs
            // are supported.
            return Err(Error::TooManyColumns {
                path: path.display().to_string(),
                cols: cols.len(),
            });
        }
        if cols.len() < 2 {
            return Err(Error::PairFileParse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: format!("expected 2 columns, found {}", cols.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| Error::PairFileParse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: format!("cannot parse {s:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::PairFileParse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    reason: "non-finite value".into(),
                });
            }
            Ok(v)
        };
        x.push(parse(cols[0])?);
        y.push(parse(cols[1])?);
    }
    if x.len() < 2 {
        return Err(Error::PairFileParse {
            path: path.display().to_string(),
            line: x.len(),
            reason: "need at least 2 rows".into(),
        });
    }
    Dataset::new(name, x, y)
}

/// Write a pair file; values print in shortest round-trip form.
pub fn save_pair_file(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(data.len() * 32);
    for (a, b) in data.x.iter().zip(&data.y) {
        out.push_str(&format!("{a} {b}\n"));
    }
    let mut f = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(out.as_bytes()).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn column_moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    // 1/N convention, so the two-point case standardizes to exactly +-1.
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Standardize both columns to empirical mean 0 and standard deviation 1.
pub fn normalize(data: &Dataset) -> Result<Dataset> {
    let mut out = data.clone();
    for (col, name) in [(&mut out.x, "x"), (&mut out.y, "y")] {
        let (mean, var) = column_moments(col);
        if var <= f64::EPSILON * (mean * mean + 1.0) {
            return Err(Error::ZeroVariance { column: match name {
                "x" => "x",
                _ => "y",
            }});
        }
        let sd = var.sqrt();
        for v in col.iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
    Ok(out)
}
