//! Data ingestion: turn the configured tables into a `DataBundle`. Every
//! malformed input produces a diagnostic naming file, line and field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use cofam::bayes::{normalize_density, DensityCurve, Grid};
use cofam::simplex::{closure, closure_replacing_zeros, Composition};
use cofam::spatial::{gabriel_graph, read_adjacency, SpatialGraph};
use cofam::terms::{DataBundle, FunctionalCovariate, GroupMap, ScalarCovariate};

use crate::config::{DataConfig, GraphKind};
use crate::error::{CliError, Result};
use crate::table::Table;

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// When set, zero/negative composition parts and density values are
    /// replaced by this fraction before closure; otherwise they are errors.
    pub zero_replace: Option<f64>,
}

/// Region labels in first-appearance order, plus a lookup index.
struct RegionIndex {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl RegionIndex {
    fn get(&self, table: &Table, row: &(usize, Vec<String>), col: usize) -> Result<usize> {
        let name = table.cell(row, col);
        self.index.get(name).copied().ok_or_else(|| CliError::Parse {
            file: table.file.clone(),
            line: row.0,
            field: table.header[col].clone(),
            message: format!("unknown region '{name}'"),
        })
    }
}

/// Long-format numeric surface (region, t, value) covering every cell once.
fn read_long_surface(
    path: &Path,
    value_col: &str,
    regions: &RegionIndex,
    grid_t: &Grid<f64>,
) -> Result<DMatrix<f64>> {
    let table = Table::read(path)?;
    let c_region = table.column("region")?;
    let c_t = table.column("t")?;
    let c_value = table.column(value_col)?;
    let n = regions.labels.len();
    let t_len = grid_t.len();
    let mut out = DMatrix::from_element(n, t_len, f64::NAN);
    for row in &table.rows {
        let i = regions.get(&table, row, c_region)?;
        let t = table.parse_f64(row, c_t)?;
        let l = t_position(grid_t, t).ok_or_else(|| CliError::Parse {
            file: table.file.clone(),
            line: row.0,
            field: "t".into(),
            message: format!("time {t} is not on the response grid"),
        })?;
        if !out[(i, l)].is_nan() {
            return Err(CliError::Parse {
                file: table.file.clone(),
                line: row.0,
                field: "t".into(),
                message: format!("duplicate cell (region '{}', t {t})", regions.labels[i]),
            });
        }
        out[(i, l)] = table.parse_f64(row, c_value)?;
    }
    for i in 0..n {
        for l in 0..t_len {
            if out[(i, l)].is_nan() {
                return Err(CliError::Table {
                    file: path.to_path_buf(),
                    message: format!(
                        "missing cell: region '{}', t {}",
                        regions.labels[i],
                        grid_t.points()[l]
                    ),
                });
            }
        }
    }
    Ok(out)
}

fn t_position(grid: &Grid<f64>, t: f64) -> Option<usize> {
    grid.points().iter().position(|&p| p == t)
}

/// Load everything the fit needs. Paths in the config resolve against the
/// config file's directory.
pub fn load_data(
    cfg: &DataConfig,
    base: &Path,
    opts: &IngestOptions,
) -> Result<DataBundle<f64>> {
    let resolve = |p: &PathBuf| base.join(p);

    // response establishes the region order and the time grid
    let response_path = resolve(&cfg.response);
    let table = Table::read(&response_path)?;
    let c_region = table.column("region")?;
    let c_t = table.column("t")?;
    let c_count = table.column("count")?;
    let mut labels: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut t_values: Vec<f64> = Vec::new();
    for row in &table.rows {
        let name = table.cell(row, c_region);
        if !index.contains_key(name) {
            index.insert(name.to_string(), labels.len());
            labels.push(name.to_string());
        }
        let t = table.parse_f64(row, c_t)?;
        if !t.is_finite() {
            return Err(CliError::Parse {
                file: table.file.clone(),
                line: row.0,
                field: "t".into(),
                message: format!("time {t} is not finite"),
            });
        }
        if !t_values.contains(&t) {
            t_values.push(t);
        }
        // validate counts early so the error carries the line
        let count = table.parse_f64(row, c_count)?;
        if count < 0.0 {
            return Err(CliError::Parse {
                file: table.file.clone(),
                line: row.0,
                field: "count".into(),
                message: format!("count {count} is negative"),
            });
        }
    }
    if labels.is_empty() {
        return Err(CliError::Table {
            file: response_path.clone(),
            message: "response table has no rows".into(),
        });
    }
    t_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let grid_t = Grid::new(DVector::from_vec(t_values)).map_err(|e| CliError::Table {
        file: response_path.clone(),
        message: format!("response time grid: {e}"),
    })?;
    let regions = RegionIndex { labels, index };
    let y = read_long_surface(&response_path, "count", &regions, &grid_t)?;

    let offsets = match &cfg.offsets {
        Some(p) => read_long_surface(&resolve(p), "offset", &regions, &grid_t)?,
        None => DMatrix::zeros(regions.labels.len(), grid_t.len()),
    };

    let mut bundle = DataBundle {
        regions: regions.labels.clone(),
        grid_t: grid_t.clone(),
        y,
        offsets,
        scalars: BTreeMap::new(),
        compositions: BTreeMap::new(),
        densities: BTreeMap::new(),
        functionals: BTreeMap::new(),
        graphs: BTreeMap::new(),
        groups: BTreeMap::new(),
    };

    for entry in &cfg.scalars {
        let value = read_scalar(&resolve(&entry.path), &regions, &grid_t)?;
        bundle.scalars.insert(entry.name.clone(), value);
    }
    for entry in &cfg.compositions {
        let comps = read_compositions(&resolve(&entry.path), &regions, opts)?;
        bundle.compositions.insert(entry.name.clone(), comps);
    }
    for entry in &cfg.densities {
        let curves = read_densities(&resolve(&entry.path), &regions, opts)?;
        bundle.densities.insert(entry.name.clone(), curves);
    }
    for entry in &cfg.functionals {
        let (grid, curves) = read_wide_curves(&resolve(&entry.path), &regions)?;
        bundle
            .functionals
            .insert(entry.name.clone(), FunctionalCovariate { grid, curves });
    }
    for entry in &cfg.graphs {
        let graph = read_graph(&resolve(&entry.path), entry.kind, &regions)?;
        bundle.graphs.insert(entry.name.clone(), graph);
    }
    for entry in &cfg.groups {
        let group = read_groups(&resolve(&entry.path), &regions)?;
        bundle.groups.insert(entry.name.clone(), group);
    }
    Ok(bundle)
}

/// Scalar covariate file: `region,value` (constant) or `region,t,value`
/// (per-time series), distinguished by the presence of a `t` column.
fn read_scalar(
    path: &Path,
    regions: &RegionIndex,
    grid_t: &Grid<f64>,
) -> Result<ScalarCovariate<f64>> {
    let table = Table::read(path)?;
    if table.header.iter().any(|h| h == "t") {
        return Ok(ScalarCovariate::Series(read_long_surface(
            path, "value", regions, grid_t,
        )?));
    }
    let c_region = table.column("region")?;
    let c_value = table.column("value")?;
    let n = regions.labels.len();
    let mut out = DVector::from_element(n, f64::NAN);
    for row in &table.rows {
        let i = regions.get(&table, row, c_region)?;
        if !out[i].is_nan() {
            return Err(CliError::Parse {
                file: table.file.clone(),
                line: row.0,
                field: "region".into(),
                message: format!("duplicate region '{}'", regions.labels[i]),
            });
        }
        out[i] = table.parse_f64(row, c_value)?;
    }
    require_all_regions(path, &out, regions)?;
    Ok(ScalarCovariate::Constant(out))
}

fn require_all_regions(path: &Path, values: &DVector<f64>, regions: &RegionIndex) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            return Err(CliError::Table {
                file: path.to_path_buf(),
                message: format!("missing row for region '{}'", regions.labels[i]),
            });
        }
    }
    Ok(())
}

/// Composition file: `region` plus one column per part (at least two).
fn read_compositions(
    path: &Path,
    regions: &RegionIndex,
    opts: &IngestOptions,
) -> Result<Vec<Composition<f64>>> {
    let table = Table::read(path)?;
    let c_region = table.column("region")?;
    let part_cols: Vec<usize> = (0..table.header.len()).filter(|&c| c != c_region).collect();
    if part_cols.len() < 2 {
        return Err(CliError::Table {
            file: path.to_path_buf(),
            message: format!("need at least 2 part columns, found {}", part_cols.len()),
        });
    }
    let n = regions.labels.len();
    let mut out: Vec<Option<Composition<f64>>> = vec![None; n];
    for row in &table.rows {
        let i = regions.get(&table, row, c_region)?;
        if out[i].is_some() {
            return Err(CliError::Parse {
                file: table.file.clone(),
                line: row.0,
                field: "region".into(),
                message: format!("duplicate region '{}'", regions.labels[i]),
            });
        }
        let mut parts = DVector::zeros(part_cols.len());
        for (j, &c) in part_cols.iter().enumerate() {
            let v = table.parse_f64(row, c)?;
            if v <= 0.0 && opts.zero_replace.is_none() {
                return Err(CliError::Parse {
                    file: table.file.clone(),
                    line: row.0,
                    field: table.header[c].clone(),
                    message: format!(
                        "non-positive part {v}; rerun with --zero-replace EPS to substitute"
                    ),
                });
            }
            parts[j] = v;
        }
        let comp = match opts.zero_replace {
            Some(eps) => closure_replacing_zeros(&parts, 1.0, eps),
            None => closure(&parts, 1.0),
        }
        .map_err(|e| CliError::Parse {
            file: table.file.clone(),
            line: row.0,
            field: "region".into(),
            message: e.to_string(),
        })?;
        out[i] = Some(comp);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| CliError::Table {
                file: path.to_path_buf(),
                message: format!("missing row for region '{}'", regions.labels[i]),
            })
        })
        .collect()
}

/// Wide curve file: `region` plus numeric column headers forming the grid.
fn read_wide_curves(path: &Path, regions: &RegionIndex) -> Result<(Grid<f64>, DMatrix<f64>)> {
    let table = Table::read(path)?;
    let c_region = table.column("region")?;
    let mut cols: Vec<(usize, f64)> = Vec::new();
    for (c, h) in table.header.iter().enumerate() {
        if c == c_region {
            continue;
        }
        let s = h.parse::<f64>().map_err(|_| CliError::Table {
            file: path.to_path_buf(),
            message: format!("column header '{h}' is not a numeric grid point"),
        })?;
        cols.push((c, s));
    }
    if cols.len() < 2 {
        return Err(CliError::Table {
            file: path.to_path_buf(),
            message: format!("need at least 2 grid columns, found {}", cols.len()),
        });
    }
    let grid = Grid::new(DVector::from_fn(cols.len(), |j, _| cols[j].1)).map_err(|e| {
        CliError::Table {
            file: path.to_path_buf(),
            message: format!("grid columns: {e}"),
        }
    })?;
    let n = regions.labels.len();
    let mut curves = DMatrix::from_element(n, cols.len(), f64::NAN);
    for row in &table.rows {
        let i = regions.get(&table, row, c_region)?;
        if !curves[(i, 0)].is_nan() {
            return Err(CliError::Parse {
                file: table.file.clone(),
                line: row.0,
                field: "region".into(),
                message: format!("duplicate region '{}'", regions.labels[i]),
            });
        }
        for (j, &(c, _)) in cols.iter().enumerate() {
            curves[(i, j)] = table.parse_f64(row, c)?;
        }
    }
    for i in 0..n {
        if curves[(i, 0)].is_nan() {
            return Err(CliError::Table {
                file: path.to_path_buf(),
                message: format!("missing row for region '{}'", regions.labels[i]),
            });
        }
    }
    Ok((grid, curves))
}

/// Density file: wide curve layout; rows are normalized by their quadrature
/// integral. Non-positive values need `--zero-replace`.
fn read_densities(
    path: &Path,
    regions: &RegionIndex,
    opts: &IngestOptions,
) -> Result<Vec<DensityCurve<f64>>> {
    let table = Table::read(path)?; // only for error line numbers below
    let (grid, curves) = read_wide_curves(path, regions)?;
    let c_region = table.column("region")?;
    let mut out = Vec::with_capacity(curves.nrows());
    for i in 0..curves.nrows() {
        let mut raw: DVector<f64> = curves.row(i).transpose();
        if let Some(eps) = opts.zero_replace {
            raw.apply(|v| {
                if *v <= 0.0 {
                    *v = eps;
                }
            });
        } else if let Some(j) = raw.iter().position(|&v| v <= 0.0) {
            let line = table
                .rows
                .iter()
                .find(|row| table.cell(row, c_region) == regions.labels[i])
                .map(|row| row.0)
                .unwrap_or(0);
            let header_col = (0..table.header.len())
                .filter(|&c| c != c_region)
                .nth(j)
                .unwrap_or(0);
            return Err(CliError::Parse {
                file: path.to_path_buf(),
                line,
                field: table.header[header_col].clone(),
                message: format!(
                    "non-positive density value {}; rerun with --zero-replace EPS to substitute",
                    raw[j]
                ),
            });
        }
        let curve = normalize_density(&raw, &grid).map_err(|e| CliError::Table {
            file: path.to_path_buf(),
            message: format!("region '{}': {e}", regions.labels[i]),
        })?;
        out.push(curve);
    }
    Ok(out)
}

fn read_graph(path: &Path, kind: GraphKind, regions: &RegionIndex) -> Result<SpatialGraph> {
    match kind {
        GraphKind::Adjacency => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            read_adjacency(&text, &regions.labels).map_err(|e| CliError::Table {
                file: path.to_path_buf(),
                message: e.to_string(),
            })
        }
        GraphKind::Coords => {
            let coords = read_coords(path, regions)?;
            gabriel_graph(&coords, regions.labels.clone()).map_err(|e| CliError::Table {
                file: path.to_path_buf(),
                message: e.to_string(),
            })
        }
    }
}

/// Coordinates file: `region,x,y`, one row per region.
fn read_coords(path: &Path, regions: &RegionIndex) -> Result<Vec<[f64; 2]>> {
    let table = Table::read(path)?;
    let c_region = table.column("region")?;
    let c_x = table.column("x")?;
    let c_y = table.column("y")?;
    let n = regions.labels.len();
    let mut out: Vec<Option<[f64; 2]>> = vec![None; n];
    for row in &table.rows {
        let i = regions.get(&table, row, c_region)?;
        if out[i].is_some() {
            return Err(CliError::Parse {
                file: table.file.clone(),
                line: row.0,
                field: "region".into(),
                message: format!("duplicate region '{}'", regions.labels[i]),
            });
        }
        out[i] = Some([table.parse_f64(row, c_x)?, table.parse_f64(row, c_y)?]);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| CliError::Table {
                file: path.to_path_buf(),
                message: format!("missing row for region '{}'", regions.labels[i]),
            })
        })
        .collect()
}

/// Group file: `region,level`; level labels keep first-appearance order.
fn read_groups(path: &Path, regions: &RegionIndex) -> Result<GroupMap> {
    let table = Table::read(path)?;
    let c_region = table.column("region")?;
    let c_level = table.column("level")?;
    let n = regions.labels.len();
    let mut level_of_region: Vec<Option<usize>> = vec![None; n];
    let mut labels: Vec<String> = Vec::new();
    for row in &table.rows {
        let i = regions.get(&table, row, c_region)?;
        if level_of_region[i].is_some() {
            return Err(CliError::Parse {
                file: table.file.clone(),
                line: row.0,
                field: "region".into(),
                message: format!("duplicate region '{}'", regions.labels[i]),
            });
        }
        let level = table.cell(row, c_level).to_string();
        let idx = match labels.iter().position(|l| l == &level) {
            Some(idx) => idx,
            None => {
                labels.push(level);
                labels.len() - 1
            }
        };
        level_of_region[i] = Some(idx);
    }
    let level_of_region = level_of_region
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| CliError::Table {
                file: path.to_path_buf(),
                message: format!("missing row for region '{}'", regions.labels[i]),
            })
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(GroupMap {
        level_of_region,
        labels,
    })
}
