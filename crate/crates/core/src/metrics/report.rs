//! Flat `key = value` text reports with CSV side tables.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DciResult, MetricResult, PosteriorDiagnostics, TcMethod};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
    tables: Vec<Table>,
}

#[derive(Debug, Clone, PartialEq)]
struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn add_table(&mut self, name: impl Into<String>, header: Vec<String>, rows: Vec<Vec<String>>) {
        self.tables.push(Table { name: name.into(), header, rows });
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.iter().map(|t| t.name.as_str())
    }

    pub fn extend(&mut self, other: Report) {
        self.entries.extend(other.entries);
        self.tables.extend(other.tables);
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Reads back the output of [`Report::to_text`]; tables are not included.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut r = Report::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            r.push(k.trim(), v.trim());
        }
        Ok(r)
    }

    pub fn table_csv(&self, name: &str) -> Result<String> {
        let t = self
            .tables
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("no table named {name}")))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&t.header).map_err(csv_err)?;
        for row in &t.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes `<stem>.txt` and one `<stem>_<table>.csv` per table into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = vec![dir.join(format!("{stem}.txt"))];
        fs::write(&written[0], self.to_text())?;
        for t in &self.tables {
            let path = dir.join(format!("{stem}_{}.csv", t.name));
            fs::write(&path, self.table_csv(&t.name)?)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Score, per-factor accuracies and the vote table under `prefix`.
    pub fn votes(prefix: &str, m: &MetricResult, factor_names: &[String]) -> Self {
        let mut r = Report::new();
        r.push(format!("{prefix}.score"), format!("{:.2}", m.score));
        if let Some(pf) = &m.per_factor {
            for (name, v) in factor_names.iter().zip(pf) {
                r.push(format!("{prefix}.accuracy.{name}"), format!("{v:.2}"));
            }
        }
        let d = m.votes.latent_dim();
        let excluded: Vec<String> = (0..d).filter(|&j| m.votes.excluded[j]).map(|j| j.to_string()).collect();
        r.push(format!("{prefix}.excluded_latents"), if excluded.is_empty() { "none".into() } else { excluded.join(" ") });
        let mut header = vec!["latent".to_string(), "split".to_string()];
        header.extend(factor_names.iter().cloned());
        header.push("assigned".into());
        let mut rows = Vec::new();
        for (split, table) in [("train", &m.votes.train), ("eval", &m.votes.eval)] {
            for (j, counts) in table.iter().enumerate() {
                let label = if j == d { "none".to_string() } else { j.to_string() };
                let mut row = vec![label, split.to_string()];
                row.extend(counts.iter().map(|c| c.to_string()));
                let assigned = m.votes.classifier[j].map_or("-".to_string(), |k| factor_names[k].clone());
                row.push(assigned);
                rows.push(row);
            }
        }
        r.add_table(format!("{prefix}_votes"), header, rows);
        r
    }

    pub fn dci(prefix: &str, m: &DciResult, factor_names: &[String]) -> Self {
        let mut r = Report::new();
        r.push(format!("{prefix}.disentanglement"), format!("{:.4}", m.disentanglement));
        r.push(format!("{prefix}.completeness"), format!("{:.4}", m.completeness));
        r.push(format!("{prefix}.informativeness"), format!("{:.4}", m.informativeness));
        for (name, e) in factor_names.iter().zip(&m.per_factor_error) {
            r.push(format!("{prefix}.error.{name}"), format!("{e:.4}"));
        }
        let mut header = vec!["latent".to_string()];
        header.extend(factor_names.iter().cloned());
        let rows = m
            .importance
            .iter()
            .enumerate()
            .map(|(i, row)| std::iter::once(i.to_string()).chain(row.iter().map(|v| format!("{v:.6}"))).collect())
            .collect();
        r.add_table(format!("{prefix}_importance"), header, rows);
        r
    }

    pub fn diagnostics(prefix: &str, m: &PosteriorDiagnostics) -> Self {
        let mut r = Report::new();
        let method = match m.tc_method {
            TcMethod::GaussianFit => "gaussian_fit",
            TcMethod::Discriminator => "discriminator",
        };
        r.push(format!("{prefix}.tc"), format!("{:.5}", m.tc));
        r.push(format!("{prefix}.tc_method"), method);
        for (j, v) in m.per_dim_kl.iter().enumerate() {
            r.push(format!("{prefix}.kl.{j}"), format!("{v:.5}"));
        }
        r.push(format!("{prefix}.kl_z"), format!("{:.5}", m.kl_z));
        r.push(format!("{prefix}.gap"), format!("{:.5}", m.gap()));
        r.push(format!("{prefix}.samples"), m.samples);
        r
    }
}
