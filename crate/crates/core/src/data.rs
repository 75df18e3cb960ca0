//! Sample matrices with optional anomaly labels and domain tags, and their CSV form.
//!
//! CSV layout: header `x0,…,x{D-1}[,label][,domain]`, one sample per row,
//! `label` is `0` (normal) or `1` (anomaly).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::DomainId;

pub const NORMAL: u8 = 0;
pub const ANOMALY: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
    labels: Option<Vec<u8>>,
    domains: Option<Vec<DomainId>>,
}

impl Dataset {
    /// Wraps a row-major `N×dim` matrix.
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dataset dimension must be positive".into()));
        }
        if values.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: values.len() % dim,
            });
        }
        Ok(Self {
            dim,
            values,
            labels: None,
            domains: None,
        })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(dim, values)
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: labels.len(),
            });
        }
        if labels.iter().any(|&l| l > ANOMALY) {
            return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_domain(mut self, k: &DomainId) -> Self {
        self.domains = Some(vec![k.clone(); self.len()]);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn domains(&self) -> Option<&[DomainId]> {
        self.domains.as_deref()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(p) => Err(Error::non_finite(format!("in dataset row {}", p / self.dim))),
            None => Ok(()),
        }
    }

    /// Rows at `indices`, in that order, carrying their labels and domains along.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            values,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            domains: self
                .domains
                .as_ref()
                .map(|d| indices.iter().map(|&i| d[i].clone()).collect()),
        }
    }

    /// The first `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Rows labelled normal; unlabelled data counts as normal.
    pub fn normal_only(&self) -> Self {
        match &self.labels {
            None => self.clone(),
            Some(l) => {
                let idx: Vec<usize> = (0..self.len()).filter(|&i| l[i] == NORMAL).collect();
                self.select(&idx)
            }
        }
    }

    /// Stacks datasets of equal dimension; labels/domains survive only if every part has them.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Self> {
        let parts: Vec<&Dataset> = parts.into_iter().collect();
        let first = parts.first().ok_or(Error::EmptyBatch)?;
        let dim = first.dim;
        let mut values = Vec::new();
        let mut labels = Some(Vec::new());
        let mut domains = Some(Vec::new());
        for p in &parts {
            if p.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim,
                });
            }
            values.extend_from_slice(&p.values);
            labels = match (labels, &p.labels) {
                (Some(mut acc), Some(l)) => {
                    acc.extend_from_slice(l);
                    Some(acc)
                }
                _ => None,
            };
            domains = match (domains, &p.domains) {
                (Some(mut acc), Some(d)) => {
                    acc.extend_from_slice(d);
                    Some(acc)
                }
                _ => None,
            };
        }
        Ok(Self {
            dim,
            values,
            labels,
            domains,
        })
    }

    /// Splits by the domain column. Untagged rows go under `fallback`.
    pub fn split_by_domain(&self, fallback: &DomainId) -> BTreeMap<DomainId, Dataset> {
        let mut groups: BTreeMap<DomainId, Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            let k = self
                .domains
                .as_ref()
                .map_or_else(|| fallback.clone(), |d| d[i].clone());
            groups.entry(k).or_default().push(i);
        }
        groups
            .into_iter()
            .map(|(k, idx)| (k, self.select(&idx)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        if self.domains.is_some() {
            header.push("domain".into());
        }
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for (i, row) in self.rows().enumerate() {
            record.clear();
            record.extend(row.iter().map(|v| v.to_string()));
            if let Some(l) = &self.labels {
                record.push(l[i].to_string());
            }
            if let Some(d) = &self.domains {
                record.push(d[i].to_string());
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r.headers()?.clone();
        let mut dim = 0;
        let mut label_col = None;
        let mut domain_col = None;
        for (i, name) in header.iter().enumerate() {
            match name.trim() {
                "label" => label_col = Some(i),
                "domain" => domain_col = Some(i),
                n if n == format!("x{dim}") && label_col.is_none() && domain_col.is_none() => dim += 1,
                other => {
                    return Err(Error::Format(format!("unexpected CSV column `{other}`")));
                }
            }
        }
        if dim == 0 {
            return Err(Error::Format("CSV has no x0 column".into()));
        }
        let mut values = Vec::new();
        let mut labels = label_col.map(|_| Vec::new());
        let mut domains = domain_col.map(|_| Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            for j in 0..dim {
                let v: f64 = rec[j].trim().parse().map_err(|_| {
                    Error::Format(format!("row {line}: cannot parse `{}` as a number", &rec[j]))
                })?;
                values.push(v);
            }
            if let (Some(c), Some(l)) = (label_col, labels.as_mut()) {
                let v: u8 = rec[c]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("row {line}: bad label `{}`", &rec[c])))?;
                l.push(v);
            }
            if let (Some(c), Some(d)) = (domain_col, domains.as_mut()) {
                d.push(DomainId::from(rec[c].trim()));
            }
        }
        let mut ds = Dataset::new(dim, values)?;
        if let Some(l) = labels {
            ds = ds.with_labels(l)?;
        }
        ds.domains = domains;
        Ok(ds)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }
}
