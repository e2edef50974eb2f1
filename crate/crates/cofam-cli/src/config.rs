//! Run configuration: one TOML document with an explicit schema version.
//! Unknown keys anywhere are hard errors, and every term field is validated
//! against its kind so typos cannot silently change a model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use cofam::terms::{TermKind, TermSpec};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub terms: Vec<TermConfig>,
    /// Smoothing-parameter overrides by slot name, e.g. `"b0.t" = 10.0`.
    #[serde(default)]
    pub lambda: BTreeMap<String, f64>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Long-format response table: region,t,count.
    pub response: PathBuf,
    /// Optional long-format log-exposure table: region,t,offset.
    #[serde(default)]
    pub offsets: Option<PathBuf>,
    #[serde(default)]
    pub scalars: Vec<NamedFile>,
    #[serde(default)]
    pub compositions: Vec<NamedFile>,
    #[serde(default)]
    pub densities: Vec<NamedFile>,
    #[serde(default)]
    pub functionals: Vec<NamedFile>,
    #[serde(default)]
    pub graphs: Vec<GraphFile>,
    #[serde(default)]
    pub groups: Vec<NamedFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedFile {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub name: String,
    pub path: PathBuf,
    /// "adjacency" (edge list) or "coords" (region,x,y — Gabriel graph).
    pub kind: GraphKind,
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Adjacency,
    Coords,
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_regions: usize,
    pub t_len: usize,
    pub xi: f64,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub x: Option<String>,
    #[serde(default)]
    pub x1: Option<String>,
    #[serde(default)]
    pub x2: Option<String>,
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub graph: Option<String>,
    #[serde(default)]
    pub k_x: Option<usize>,
    #[serde(default)]
    pub k_t: Option<usize>,
    #[serde(default)]
    pub k_s: Option<usize>,
    #[serde(default)]
    pub by: Option<String>,
    #[serde(default)]
    pub lag: Option<usize>,
    #[serde(default)]
    pub x_order: Option<usize>,
    #[serde(default)]
    pub t_order: Option<usize>,
}

pub fn load(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(CliError::Config {
            path: path.to_path_buf(),
            message: format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            ),
        });
    }
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    Ok((config, base))
}

impl TermConfig {
    /// Validate the field set against the kind and build the library spec.
    pub fn to_spec(&self, config_path: &Path) -> Result<TermSpec> {
        let fail = |message: String| CliError::Config {
            path: config_path.to_path_buf(),
            message: format!("term '{}': {message}", self.id),
        };
        let need_str = |field: &str, v: &Option<String>| {
            v.clone().ok_or_else(|| fail(format!("kind '{}' requires '{field}'", self.kind)))
        };
        let need_num = |field: &str, v: &Option<usize>| {
            v.ok_or_else(|| fail(format!("kind '{}' requires '{field}'", self.kind)))
        };
        // which of the kind-specific fields each kind consumes
        let allowed: &[&str] = match self.kind.as_str() {
            "intercept" => &["k_t"],
            "linear" => &["x"],
            "linear_tv" => &["x", "k_t"],
            "smooth" => &["x", "k_x"],
            "smooth_tv" => &["x", "k_x", "k_t"],
            "interaction" => &["x1", "x2", "k_x"],
            "concurrent" => &["x", "k_x"],
            "fun_on_fun" => &["x", "k_s", "k_t"],
            "composition" => &["x"],
            "composition_tv" => &["x", "k_t"],
            "fun_composition" => &["x", "k_s", "k_t"],
            "random_intercept" => &["group", "k_t", "graph"],
            other => return Err(fail(format!("unknown kind '{other}'"))),
        };
        let present: &[(&str, bool)] = &[
            ("x", self.x.is_some()),
            ("x1", self.x1.is_some()),
            ("x2", self.x2.is_some()),
            ("group", self.group.is_some()),
            ("graph", self.graph.is_some()),
            ("k_x", self.k_x.is_some()),
            ("k_t", self.k_t.is_some()),
            ("k_s", self.k_s.is_some()),
        ];
        for (field, set) in present {
            if *set && !allowed.contains(field) {
                return Err(fail(format!(
                    "field '{field}' is not used by kind '{}'",
                    self.kind
                )));
            }
        }
        let kind = match self.kind.as_str() {
            "intercept" => TermKind::Intercept {
                k_t: need_num("k_t", &self.k_t)?,
            },
            "linear" => TermKind::LinearScalar {
                x: need_str("x", &self.x)?,
            },
            "linear_tv" => TermKind::LinearScalarTv {
                x: need_str("x", &self.x)?,
                k_t: need_num("k_t", &self.k_t)?,
            },
            "smooth" => TermKind::SmoothScalar {
                x: need_str("x", &self.x)?,
                k_x: need_num("k_x", &self.k_x)?,
            },
            "smooth_tv" => TermKind::SmoothScalarTv {
                x: need_str("x", &self.x)?,
                k_x: need_num("k_x", &self.k_x)?,
                k_t: need_num("k_t", &self.k_t)?,
            },
            "interaction" => TermKind::TensorInteraction {
                x1: need_str("x1", &self.x1)?,
                x2: need_str("x2", &self.x2)?,
                k_x: need_num("k_x", &self.k_x)?,
            },
            "concurrent" => TermKind::ConcurrentSmooth {
                x: need_str("x", &self.x)?,
                k_x: need_num("k_x", &self.k_x)?,
            },
            "fun_on_fun" => TermKind::FunOnFun {
                x: need_str("x", &self.x)?,
                k_s: need_num("k_s", &self.k_s)?,
                k_t: need_num("k_t", &self.k_t)?,
            },
            "composition" => TermKind::CompositionLinear {
                x: need_str("x", &self.x)?,
            },
            "composition_tv" => TermKind::CompositionLinearTv {
                x: need_str("x", &self.x)?,
                k_t: need_num("k_t", &self.k_t)?,
            },
            "fun_composition" => TermKind::FunComposition {
                x: need_str("x", &self.x)?,
                k_s: need_num("k_s", &self.k_s)?,
                k_t: need_num("k_t", &self.k_t)?,
            },
            "random_intercept" => TermKind::RandomIntercept {
                group: need_str("group", &self.group)?,
                k_t: need_num("k_t", &self.k_t)?,
                graph: self.graph.clone(),
            },
            _ => unreachable!("kind validated above"),
        };
        let mut spec = TermSpec::new(self.id.clone(), kind);
        if let Some(by) = &self.by {
            spec = spec.with_by(by.clone());
        }
        if let Some(lag) = self.lag {
            spec = spec.with_lag(lag);
        }
        if let Some(x_order) = self.x_order {
            spec.x_order = x_order;
        }
        if let Some(t_order) = self.t_order {
            spec.t_order = t_order;
        }
        Ok(spec)
    }
}
