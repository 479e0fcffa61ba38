//! Observations, datasets, three-fold splits and empirical measures.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One record `O = (X, A, Y, ξ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub a: bool,
    pub y: f64,
    pub xi: bool,
}

impl Observation {
    /// Builds an observation, checking that `y ∈ [0, 1]` and all covariates are finite.
    pub fn new(x: Vec<f64>, a: bool, y: f64, xi: bool) -> Result<Self> {
        let o = Observation { x, a, y, xi };
        o.check(true)?;
        Ok(o)
    }

    fn check(&self, unit_outcome: bool) -> Result<()> {
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariates"));
        }
        if !self.y.is_finite() {
            return Err(Error::NonFinite("outcome"));
        }
        if unit_outcome && !(0.0..=1.0).contains(&self.y) {
            return Err(Error::Invalid(format!("outcome {} outside [0, 1]", self.y)));
        }
        Ok(())
    }

    #[inline]
    pub fn a_f64(&self) -> f64 {
        if self.a {
            1.0
        } else {
            0.0
        }
    }

    #[inline]
    pub fn xi_f64(&self) -> f64 {
        if self.xi {
            1.0
        } else {
            0.0
        }
    }
}

/// An immutable, nonempty collection of observations sharing dimension `d`.
///
/// A dataset built with [`Dataset::new_raw`] may hold outcomes outside `[0, 1]`
/// (the realistic scenario before preprocessing); the learning pipeline
/// refuses such data.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    obs: Vec<Observation>,
    d: usize,
    unit_range: bool,
}

impl Dataset {
    pub fn new(obs: Vec<Observation>) -> Result<Self> {
        Self::build(obs, true)
    }

    /// Like [`Dataset::new`] but only requires finite values.
    pub fn new_raw(obs: Vec<Observation>) -> Result<Self> {
        Self::build(obs, false)
    }

    fn build(obs: Vec<Observation>, unit_range: bool) -> Result<Self> {
        let first = obs.first().ok_or(Error::Invalid("dataset is empty".into()))?;
        let d = first.x.len();
        for o in &obs {
            if o.x.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: o.x.len(),
                });
            }
            o.check(unit_range)?;
        }
        let unit_range = unit_range || obs.iter().all(|o| (0.0..=1.0).contains(&o.y));
        Ok(Dataset { obs, d, unit_range })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// True when every outcome lies in `[0, 1]`.
    pub fn is_unit_range(&self) -> bool {
        self.unit_range
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.obs[i]
    }

    /// Covariate rows at `indices`, packed contiguously.
    pub fn covariates(&self, indices: &[usize]) -> Covariates {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            values.extend_from_slice(&self.obs[i].x);
        }
        Covariates { d: self.d, values }
    }

    /// Reads the CSV format `x1,...,xd,a,y,xi`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        Self::read_csv_inner(reader, true)
    }

    /// Reads the CSV format without requiring `y ∈ [0, 1]`.
    pub fn read_csv_raw<R: Read>(reader: R) -> Result<Self> {
        Self::read_csv_inner(reader, false)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }

    fn read_csv_inner<R: Read>(reader: R, unit_range: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 4 || cols[cols.len() - 3..] != ["a", "y", "xi"] {
            return Err(Error::Invalid(format!(
                "header must be x1,...,xd,a,y,xi; got {}",
                cols.join(",")
            )));
        }
        let d = cols.len() - 3;
        for (j, name) in cols[..d].iter().enumerate() {
            if *name != format!("x{}", j + 1) {
                return Err(Error::Invalid(format!(
                    "column {} should be x{}, found `{name}`",
                    j + 1,
                    j + 1
                )));
            }
        }
        let mut obs = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = row + 2;
            let num = |j: usize| -> Result<f64> {
                rec[j]
                    .parse::<f64>()
                    .map_err(|_| Error::Invalid(format!("line {line}: cannot parse `{}` as a number", &rec[j])))
            };
            let flag = |j: usize| -> Result<bool> {
                match &rec[j] {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::Invalid(format!(
                        "line {line}: column {} must be 0 or 1, found `{other}`",
                        cols[j]
                    ))),
                }
            };
            let x = (0..d).map(num).collect::<Result<Vec<_>>>()?;
            let o = Observation {
                x,
                a: flag(d)?,
                y: num(d + 1)?,
                xi: flag(d + 2)?,
            };
            o.check(unit_range)
                .map_err(|e| Error::Invalid(format!("line {line}: {e}")))?;
            obs.push(o);
        }
        Self::build(obs, unit_range)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.d).map(|j| format!("x{j}")).collect();
        header.extend(["a", "y", "xi"].map(String::from));
        w.write_record(&header)?;
        for o in &self.obs {
            let mut rec: Vec<String> = o.x.iter().map(|v| v.to_string()).collect();
            rec.push(u8::from(o.a).to_string());
            rec.push(o.y.to_string());
            rec.push(u8::from(o.xi).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Row-major covariate matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariates {
    d: usize,
    values: Vec<f64>,
}

impl Covariates {
    pub fn new(d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 || !values.len().is_multiple_of(d) {
            return Err(Error::Invalid(format!(
                "{} values do not form rows of width {d}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariates"));
        }
        Ok(Covariates { d, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(d, values)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }
}

/// Disjoint index sets `n1`, `n2`, `n3` covering `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub n1: Vec<usize>,
    pub n2: Vec<usize>,
    pub n3: Vec<usize>,
}

impl FoldSplit {
    pub fn folds(&self) -> [&[usize]; 3] {
        [&self.n1, &self.n2, &self.n3]
    }
}

/// Uniformly random partition into three folds whose sizes differ by at most one.
///
/// Indices are shuffled once and dealt round-robin; each fold is returned sorted.
pub fn split_folds(data: &Dataset, seed: u64) -> Result<FoldSplit> {
    split_indices(data.len(), seed)
}

pub fn split_indices(n: usize, seed: u64) -> Result<FoldSplit> {
    if n < 3 {
        return Err(Error::InsufficientData(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds: [Vec<usize>; 3] = Default::default();
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % 3].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    let [n1, n2, n3] = folds;
    Ok(FoldSplit { n1, n2, n3 })
}

/// Uniform weights over a nonempty index set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmpiricalMeasure {
    indices: Vec<usize>,
}

impl EmpiricalMeasure {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        Ok(EmpiricalMeasure { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.indices.len() as f64
    }
}

pub fn empirical_mean<F>(data: &Dataset, m: &EmpiricalMeasure, f: F) -> Result<f64>
where
    F: Fn(&Observation) -> f64,
{
    if m.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let total: f64 = m.indices.iter().map(|&i| f(&data.obs[i])).sum();
    Ok(total * m.weight())
}
