//! Point-cloud file I/O: a human-inspectable UTF-8 JSON format for desk-scale
//! datasets. One `PointCloudFile` holds one graph sample; dataset files hold a
//! JSON array of them (a single top-level object is also accepted on read).
//!
//! Numbers are serialized with shortest-round-trip precision, so a write →
//! read cycle reproduces every `f64` bit-exactly. Non-finite values are
//! rejected in both directions (JSON cannot carry them losslessly).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum DataError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("inconsistent point cloud: {0}")]
    Inconsistent(String),
}

/// A named per-node scalar field: either one value per node (`[P]`) or a
/// row of `k` values per node (`[P, k]`).
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(untagged)]
pub enum ScalarField {
    Flat(Vec<f64>),
    Wide(Vec<Vec<f64>>),
}

impl ScalarField {
    pub fn num_points(&self) -> usize {
        match self {
            ScalarField::Flat(v) => v.len(),
            ScalarField::Wide(v) => v.len(),
        }
    }

    /// Channel count: 1 for a flat field, the row width otherwise.
    pub fn width(&self) -> Option<usize> {
        match self {
            ScalarField::Flat(_) => Some(1),
            ScalarField::Wide(rows) => {
                let w = rows.first().map(Vec::len).unwrap_or(0);
                rows.iter().all(|r| r.len() == w).then_some(w)
            }
        }
    }

    /// Row-major `[P, width]` copy.
    pub fn to_rows(&self) -> Vec<f64> {
        match self {
            ScalarField::Flat(v) => v.clone(),
            ScalarField::Wide(rows) => rows.iter().flatten().copied().collect(),
        }
    }

    fn values(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match self {
            ScalarField::Flat(v) => Box::new(v.iter().copied()),
            ScalarField::Wide(rows) => Box::new(rows.iter().flatten().copied()),
        }
    }
}

/// Optional supervision attached to a cloud.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq, Default)]
pub struct CloudTargets {
    /// One invariant scalar for the whole graph (e.g. an energy).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<f64>,
    /// One `n`-vector per node (e.g. forces or displacements), `[P][n]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_vector: Option<Vec<Vec<f64>>>,
}

/// One geometric graph sample.
///
/// `edges` rows are `[receiver, sender]`; when absent, consumers build their
/// own connectivity (fully connected by default).
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct PointCloudFile {
    /// `[P][n]` node positions.
    pub positions: Vec<Vec<f64>>,
    /// Named per-node scalar fields.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scalars: BTreeMap<String, ScalarField>,
    /// Named per-node vector fields, each `[P][n]`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub vectors: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<CloudTargets>,
}

impl PointCloudFile {
    pub fn num_points(&self) -> usize {
        self.positions.len()
    }

    /// Ambient dimension, from the first position row.
    pub fn dim(&self) -> usize {
        self.positions.first().map(Vec::len).unwrap_or(0)
    }

    /// Positions flattened row-major to `[P * n]`.
    pub fn positions_flat(&self) -> Vec<f64> {
        self.positions.iter().flatten().copied().collect()
    }

    /// Checks every structural invariant: consistent point counts, vector
    /// dimensions matching the positions, edge indices in range, finite
    /// values throughout.
    pub fn validate(&self) -> Result<(), DataError> {
        let p = self.num_points();
        let dim = self.dim();
        if p == 0 {
            return Err(DataError::Inconsistent("no points".into()));
        }
        if dim == 0 || self.positions.iter().any(|row| row.len() != dim) {
            return Err(DataError::Inconsistent(format!(
                "positions must be a [P, n] table; first row has {dim} columns"
            )));
        }
        fn check_finite(name: &str, mut vals: impl Iterator<Item = f64>) -> Result<(), DataError> {
            if vals.any(|v| !v.is_finite()) {
                Err(DataError::Inconsistent(format!(
                    "{name} contains a non-finite value"
                )))
            } else {
                Ok(())
            }
        }
        check_finite("positions", self.positions.iter().flatten().copied())?;
        for (name, field) in &self.scalars {
            if field.num_points() != p {
                return Err(DataError::Inconsistent(format!(
                    "scalar field {name:?} covers {} points, positions have {p}",
                    field.num_points()
                )));
            }
            if field.width().is_none() {
                return Err(DataError::Inconsistent(format!(
                    "scalar field {name:?} has ragged rows"
                )));
            }
            check_finite(&format!("scalar field {name:?}"), field.values())?;
        }
        for (name, rows) in &self.vectors {
            if rows.len() != p || rows.iter().any(|r| r.len() != dim) {
                return Err(DataError::Inconsistent(format!(
                    "vector field {name:?} must be [{p}][{dim}]"
                )));
            }
            check_finite(
                &format!("vector field {name:?}"),
                rows.iter().flatten().copied(),
            )?;
        }
        if let Some(edges) = &self.edges {
            for &[i, j] in edges {
                if i >= p || j >= p {
                    return Err(DataError::Inconsistent(format!(
                        "edge [{i}, {j}] out of range for {p} points"
                    )));
                }
            }
        }
        if let Some(t) = &self.targets {
            if let Some(s) = t.scalar {
                if !s.is_finite() {
                    return Err(DataError::Inconsistent(
                        "scalar target is non-finite".into(),
                    ));
                }
            }
            if let Some(v) = &t.node_vector {
                if v.len() != p || v.iter().any(|r| r.len() != dim) {
                    return Err(DataError::Inconsistent(format!(
                        "vector target must be [{p}][{dim}]"
                    )));
                }
                check_finite("vector target", v.iter().flatten().copied())?;
            }
        }
        Ok(())
    }
}

/// Read-side tolerance: a dataset is an array of clouds, but a single
/// top-level object is accepted as a one-element dataset.
#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<PointCloudFile>),
    One(Box<PointCloudFile>),
}

pub fn write_clouds<W: Write>(clouds: &[PointCloudFile], w: W) -> Result<(), DataError> {
    for c in clouds {
        c.validate()?;
    }
    serde_json::to_writer(w, clouds)?;
    Ok(())
}

pub fn read_clouds<R: Read>(r: R) -> Result<Vec<PointCloudFile>, DataError> {
    let parsed: OneOrMany = serde_json::from_reader(r)?;
    let clouds = match parsed {
        OneOrMany::Many(v) => v,
        OneOrMany::One(c) => vec![*c],
    };
    for c in &clouds {
        c.validate()?;
    }
    Ok(clouds)
}

pub fn save_clouds(clouds: &[PointCloudFile], path: &Path) -> Result<(), DataError> {
    let f = BufWriter::new(File::create(path)?);
    write_clouds(clouds, f)
}

pub fn load_clouds(path: &Path) -> Result<Vec<PointCloudFile>, DataError> {
    let f = BufReader::new(File::open(path)?);
    read_clouds(f)
}
