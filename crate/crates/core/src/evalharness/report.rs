use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores for one generated set. Written as key–value TOML and as a CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub n_real: usize,
    pub n_generated: usize,
    /// Mean `|½ − accuracy|` over the classifier seeds.
    pub ds_classifier: f64,
    pub ds_accuracy: f64,
    pub ds_per_seed: Vec<f64>,
    /// Train-on-synthetic, test-on-real MAE in normalised units.
    pub ps: f64,
    /// Train-on-real reference on the same test pairs.
    pub ps_trtr: f64,
    /// Per-feature TSTR MAE in degrees, degrees and feet.
    pub ps_physical: Vec<f64>,
    pub ps_trtr_physical: Vec<f64>,
    pub reference_ds: f64,
    pub reference_ps: f64,
    pub ri_ds: f64,
    pub ri_ps: f64,
    pub constraint_pass_rate: f64,
    pub real_constraint_pass_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recon_rmse: Option<f64>,
    /// Effective configuration of the run that produced the report.
    #[serde(default)]
    pub config: toml::Table,
}

const CSV_COLUMNS: [&str; 16] = [
    "method",
    "n_real",
    "n_generated",
    "ds_classifier",
    "ds_accuracy",
    "ps",
    "ps_trtr",
    "ps_lat",
    "ps_lon",
    "ps_alt",
    "reference_ds",
    "reference_ps",
    "ri_ds",
    "ri_ps",
    "constraint_pass_rate",
    "real_constraint_pass_rate",
];

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.ds_classifier) {
            return Err(Error::invalid(format!("discriminative score {} outside [0, 0.5]", self.ds_classifier)));
        }
        if !(self.ps >= 0.0) || !(self.ps_trtr >= 0.0) {
            return Err(Error::invalid("predictive scores must be non-negative"));
        }
        for r in [self.constraint_pass_rate, self.real_constraint_pass_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("pass rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report fields are TOML-representable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("report: {e}")))
    }

    pub fn csv_header() -> String {
        let mut h = CSV_COLUMNS.join(",");
        h.push_str(",recon_rmse");
        h
    }

    pub fn csv_row(&self) -> String {
        let p = |i: usize| self.ps_physical.get(i).copied().unwrap_or(f64::NAN);
        let fields = [
            self.method.clone(),
            self.n_real.to_string(),
            self.n_generated.to_string(),
            self.ds_classifier.to_string(),
            self.ds_accuracy.to_string(),
            self.ps.to_string(),
            self.ps_trtr.to_string(),
            p(0).to_string(),
            p(1).to_string(),
            p(2).to_string(),
            self.reference_ds.to_string(),
            self.reference_ps.to_string(),
            self.ri_ds.to_string(),
            self.ri_ps.to_string(),
            self.constraint_pass_rate.to_string(),
            self.real_constraint_pass_rate.to_string(),
            self.recon_rmse.map_or(String::new(), |v| v.to_string()),
        ];
        fields.join(",")
    }

    /// Writes `report.toml` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let toml_path = dir.join("report.toml");
        std::fs::write(&toml_path, self.to_toml()).map_err(|e| Error::io(&toml_path, e))?;
        let csv_path = dir.join("report.csv");
        let csv = format!("{}\n{}\n", Self::csv_header(), self.csv_row());
        std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))
    }
}
