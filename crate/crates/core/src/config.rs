//! Pipeline settings and the flat `key = value` config file format.

use serde::Serialize;

use crate::affinity::{validate_params, AffinityParams};
use crate::error::{Error, Result};
use crate::saliency::Neighborhood;
use crate::spectral::SolverKind;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub k: usize,
    pub t0: f64,
    pub alpha: f64,
    pub tau_ncut: f64,
    pub tau_filter: f64,
    pub neighborhood: Neighborhood,
    pub solver: SolverKind,
    /// Images processed concurrently; 0 means one per available core.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let a = AffinityParams::default();
        PipelineConfig {
            k: a.k,
            t0: a.t0,
            alpha: a.alpha,
            tau_ncut: a.tau_ncut,
            tau_filter: 0.95,
            neighborhood: Neighborhood::Eight,
            solver: SolverKind::Dense,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn affinity_params(&self) -> AffinityParams {
        AffinityParams {
            k: self.k,
            t0: self.t0,
            alpha: self.alpha,
            tau_ncut: self.tau_ncut,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_params(&self.affinity_params())?;
        if !(self.tau_filter > 0.0 && self.tau_filter < 1.0) {
            return Err(Error::Parameter(format!(
                "tau must be in (0, 1), got {}",
                self.tau_filter
            )));
        }
        Ok(())
    }

    /// Settings that affect the output, as embedded in annotation files.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Sets one option by name. Dashes and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let bad = |what: &str| Error::Parameter(format!("{key}: expected {what}, got {value:?}"));
        match key.as_str() {
            "k" => self.k = value.parse().map_err(|_| bad("a positive integer"))?,
            "t0" => self.t0 = value.parse().map_err(|_| bad("a number"))?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad("a number"))?,
            "tau_ncut" => self.tau_ncut = value.parse().map_err(|_| bad("a number"))?,
            "tau" | "tau_filter" => self.tau_filter = value.parse().map_err(|_| bad("a number"))?,
            "neighborhood" => self.neighborhood = value.parse()?,
            "solver" => self.solver = value.parse()?,
            "workers" => self.workers = value.parse().map_err(|_| bad("an integer"))?,
            _ => return Err(Error::Parameter(format!("unknown option {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` comments,
    /// optional quotes around values.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = strip_comment(line).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parameter(format!("config line {}: expected key = value", n + 1))
            })?;
            let value = unquote(value.trim());
            self.set(key, value)
                .map_err(|e| Error::Parameter(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(v)
}
