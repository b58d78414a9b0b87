//! Parameter flags. They mirror the params JSON; a `--config` file supplies
//! the base set and any flag given on the command line wins.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use repeller::{ConstructionParams, Variant};

use crate::CliError;

#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    /// JSON file with a parameter set (same field names as the flags).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// `full` or `physical`; picks that variant's defaults when no config is given.
    #[arg(long)]
    pub variant: Option<Variant>,

    #[arg(long)]
    pub q: Option<f64>,

    #[arg(long)]
    pub b: Option<f64>,

    /// Cell ratio of the Full variant.
    #[arg(long)]
    pub a: Option<f64>,

    #[arg(long)]
    pub alpha: Option<f64>,

    #[arg(long)]
    pub beta: Option<f64>,

    #[arg(long)]
    pub epsilon: Option<f64>,

    #[arg(long)]
    pub n_max: Option<usize>,

    #[arg(long)]
    pub tol_root: Option<f64>,

    #[arg(long)]
    pub tol_glue: Option<f64>,
}

impl ParamArgs {
    pub fn resolve(&self) -> Result<ConstructionParams, CliError> {
        let mut p = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<ConstructionParams>(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => match self.variant.unwrap_or(Variant::Full) {
                Variant::Full => ConstructionParams::full_default(),
                Variant::Physical => ConstructionParams::physical_default(),
            },
        };
        if let Some(v) = self.variant {
            p.variant = v;
        }
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.q, self.q);
        set(&mut p.b, self.b);
        set(&mut p.tol_root, self.tol_root);
        set(&mut p.tol_glue, self.tol_glue);
        if self.a.is_some() {
            p.a = self.a;
        }
        if self.alpha.is_some() {
            p.alpha = self.alpha;
        }
        if self.beta.is_some() {
            p.beta = self.beta;
        }
        if self.epsilon.is_some() {
            p.epsilon = self.epsilon;
        }
        if let Some(n) = self.n_max {
            p.n_max = n;
        }
        Ok(p.resolved())
    }
}
