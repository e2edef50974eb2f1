//! Subcommand implementations: fit, simulate, transform.

use std::path::Path;

use nalgebra::DVector;

use cofam::bayes::{clr_density, normalize_density, Grid};
use cofam::fit::{fit_model, FitOptions};
use cofam::simplex::{clr, closure, closure_replacing_zeros, ilr_pivot, Composition};
use cofam::spatial::gabriel_graph;
use cofam::synth::{generate, GoldenSettings};
use cofam::terms::ScalarCovariate;

use crate::config;
use crate::error::{CliError, Result};
use crate::ingest::{load_data, IngestOptions};
use crate::outputs;
use crate::table::{fmt, write_table, Table};

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn config_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn cmd_fit(
    config_path: &Path,
    out: &Path,
    zero_replace: Option<f64>,
    threads: Option<usize>,
) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(config_err(config_path, "--threads must be at least 1"));
        }
        // the fit is deterministic regardless of thread count; nothing to set
    }
    if let Some(eps) = zero_replace {
        if !(eps > 0.0) || eps >= 1.0 {
            return Err(config_err(config_path, "--zero-replace must be in (0, 1)"));
        }
    }
    let (config, base) = config::load(config_path)?;
    let data_cfg = config
        .data
        .as_ref()
        .ok_or_else(|| config_err(config_path, "fit needs a [data] section"))?;
    if config.terms.is_empty() {
        return Err(config_err(config_path, "fit needs at least one [[terms]] entry"));
    }
    let specs = config
        .terms
        .iter()
        .map(|t| t.to_spec(config_path))
        .collect::<Result<Vec<_>>>()?;
    let data = load_data(data_cfg, &base, &IngestOptions { zero_replace })?;

    let mut opts = FitOptions::default();
    for (slot, &value) in &config.lambda {
        if !(value > 0.0) {
            return Err(config_err(
                config_path,
                format!("lambda override '{slot}' must be positive"),
            ));
        }
        opts.lambda_overrides.insert(slot.clone(), value);
    }
    let fitted = fit_model(&specs, &data, &opts)?;

    ensure_dir(out)?;
    outputs::write_model_document(&out.join("model.txt"), &fitted)?;
    outputs::write_effect_tables(out, &fitted)?;
    outputs::write_wald_table(&out.join("wald.csv"), &fitted)?;
    outputs::write_residuals(out, &fitted)?;
    outputs::write_report(&out.join("report.txt"), &fitted)?;
    Ok(())
}

pub fn cmd_simulate(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let (config, _) = config::load(config_path)?;
    let sim = config
        .simulate
        .as_ref()
        .ok_or_else(|| config_err(config_path, "simulate needs a [simulate] section"))?;
    if sim.n_regions < 4 || sim.t_len < 4 {
        return Err(config_err(
            config_path,
            "simulate needs n_regions >= 4 and t_len >= 4",
        ));
    }
    if sim.xi < 1.0 {
        return Err(config_err(config_path, "simulate needs xi >= 1"));
    }
    let settings = GoldenSettings {
        n_regions: sim.n_regions,
        t_len: sim.t_len,
        xi: sim.xi,
        seed: seed.unwrap_or(sim.seed),
    };
    let run = generate(&settings);
    let data = &run.data;
    ensure_dir(out)?;

    // response and offsets in ingestion long format
    let mut count_rows = Vec::new();
    let mut offset_rows = Vec::new();
    for (i, region) in data.regions.iter().enumerate() {
        for l in 0..data.grid_t.len() {
            let t = fmt(data.grid_t.points()[l]);
            count_rows.push(vec![region.clone(), t.clone(), fmt(data.y[(i, l)])]);
            offset_rows.push(vec![region.clone(), t, fmt(data.offsets[(i, l)])]);
        }
    }
    write_table(&out.join("counts.csv"), &["region", "t", "count"], &count_rows)?;
    write_table(
        &out.join("offsets.csv"),
        &["region", "t", "offset"],
        &offset_rows,
    )?;

    // scalar covariate
    let x = match &data.scalars["expo"] {
        ScalarCovariate::Constant(v) => v,
        ScalarCovariate::Series(_) => unreachable!("generator emits a constant scalar"),
    };
    let scalar_rows: Vec<Vec<String>> = data
        .regions
        .iter()
        .enumerate()
        .map(|(i, r)| vec![r.clone(), fmt(x[i])])
        .collect();
    write_table(&out.join("expo.csv"), &["region", "value"], &scalar_rows)?;

    // composition parts
    let comps = &data.compositions["smoke"];
    let d = comps[0].dim();
    let mut comp_header: Vec<String> = vec!["region".into()];
    comp_header.extend((1..=d).map(|j| format!("part{j}")));
    let comp_header_refs: Vec<&str> = comp_header.iter().map(String::as_str).collect();
    let comp_rows: Vec<Vec<String>> = data
        .regions
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![r.clone()];
            row.extend(comps[i].parts().iter().map(|&p| fmt(p)));
            row
        })
        .collect();
    write_table(&out.join("smoke.csv"), &comp_header_refs, &comp_rows)?;

    // density covariate, wide with the grid in the headers
    let densities = &data.densities["age"];
    let grid_s = densities[0].grid();
    let mut dens_header: Vec<String> = vec!["region".into()];
    dens_header.extend(grid_s.points().iter().map(|&s| fmt(s)));
    let dens_header_refs: Vec<&str> = dens_header.iter().map(String::as_str).collect();
    let dens_rows: Vec<Vec<String>> = data
        .regions
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![r.clone()];
            row.extend(densities[i].values().iter().map(|&v| fmt(v)));
            row
        })
        .collect();
    write_table(&out.join("age.csv"), &dens_header_refs, &dens_rows)?;

    // spatial structure and grouping
    let coord_rows: Vec<Vec<String>> = data
        .regions
        .iter()
        .enumerate()
        .map(|(i, r)| vec![r.clone(), fmt(run.coords[i][0]), fmt(run.coords[i][1])])
        .collect();
    write_table(&out.join("coords.csv"), &["region", "x", "y"], &coord_rows)?;
    let adjacency = data.graphs["gabriel"].to_adjacency_text();
    std::fs::write(out.join("adjacency.txt"), adjacency).map_err(|source| CliError::Io {
        path: out.join("adjacency.txt"),
        source,
    })?;
    let group_rows: Vec<Vec<String>> = data
        .regions
        .iter()
        .map(|r| vec![r.clone(), r.clone()])
        .collect();
    write_table(&out.join("groups.csv"), &["region", "level"], &group_rows)?;

    // ground truth for downstream comparison
    let mut truth_rows = Vec::new();
    for (i, region) in data.regions.iter().enumerate() {
        for l in 0..data.grid_t.len() {
            truth_rows.push(vec![
                region.clone(),
                fmt(data.grid_t.points()[l]),
                fmt(run.truth.mu[(i, l)]),
                fmt(run.truth.gamma[(i, l)]),
            ]);
        }
    }
    write_table(
        &out.join("truth.csv"),
        &["region", "t", "mu", "gamma"],
        &truth_rows,
    )?;

    // a ready-to-run fit configuration over the files just written
    let fit_toml = "\
schema_version = 1

[data]
response = \"counts.csv\"
offsets = \"offsets.csv\"

[[data.scalars]]
name = \"expo\"
path = \"expo.csv\"

[[data.compositions]]
name = \"smoke\"
path = \"smoke.csv\"

[[data.densities]]
name = \"age\"
path = \"age.csv\"

[[data.graphs]]
name = \"gabriel\"
path = \"adjacency.txt\"
kind = \"adjacency\"

[[data.groups]]
name = \"region\"
path = \"groups.csv\"

[[terms]]
id = \"b0\"
kind = \"intercept\"
k_t = 15

[[terms]]
id = \"fx\"
kind = \"smooth\"
x = \"expo\"
k_x = 8

[[terms]]
id = \"smoke\"
kind = \"composition\"
x = \"smoke\"

[[terms]]
id = \"age\"
kind = \"fun_composition\"
x = \"age\"
k_s = 6
k_t = 6

[[terms]]
id = \"gamma\"
kind = \"random_intercept\"
group = \"region\"
k_t = 4
graph = \"gabriel\"
";
    std::fs::write(out.join("fit.toml"), fit_toml).map_err(|source| CliError::Io {
        path: out.join("fit.toml"),
        source,
    })?;
    Ok(())
}

/// Standalone composition table: `region` plus part columns, labels taken
/// from the file itself in row order.
fn read_composition_table(
    path: &Path,
    zero_replace: Option<f64>,
) -> Result<(Vec<String>, Vec<String>, Vec<Composition<f64>>)> {
    let table = Table::read(path)?;
    let c_region = table.column("region")?;
    let part_cols: Vec<usize> = (0..table.header.len()).filter(|&c| c != c_region).collect();
    if part_cols.len() < 2 {
        return Err(CliError::Table {
            file: path.to_path_buf(),
            message: format!("need at least 2 part columns, found {}", part_cols.len()),
        });
    }
    let part_names: Vec<String> = part_cols.iter().map(|&c| table.header[c].clone()).collect();
    let mut labels = Vec::new();
    let mut comps = Vec::new();
    for row in &table.rows {
        labels.push(table.cell(row, c_region).to_string());
        let mut parts = DVector::zeros(part_cols.len());
        for (j, &c) in part_cols.iter().enumerate() {
            let v = table.parse_f64(row, c)?;
            if v <= 0.0 && zero_replace.is_none() {
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
        let comp = match zero_replace {
            Some(eps) => closure_replacing_zeros(&parts, 1.0, eps),
            None => closure(&parts, 1.0),
        }
        .map_err(|e| CliError::Parse {
            file: table.file.clone(),
            line: row.0,
            field: "region".into(),
            message: e.to_string(),
        })?;
        comps.push(comp);
    }
    Ok((labels, part_names, comps))
}

pub fn cmd_transform_clr(input: &Path, output: &Path, zero_replace: Option<f64>) -> Result<()> {
    let (labels, part_names, comps) = read_composition_table(input, zero_replace)?;
    let mut header: Vec<&str> = vec!["region"];
    header.extend(part_names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = labels
        .iter()
        .zip(&comps)
        .map(|(label, comp)| {
            let mut row = vec![label.clone()];
            row.extend(clr(comp).coords().iter().map(|&v| fmt(v)));
            row
        })
        .collect();
    write_table(output, &header, &rows)
}

pub fn cmd_transform_ilr(input: &Path, output: &Path, zero_replace: Option<f64>) -> Result<()> {
    let (labels, part_names, comps) = read_composition_table(input, zero_replace)?;
    let ilr_names: Vec<String> = (1..part_names.len()).map(|j| format!("ilr{j}")).collect();
    let mut header: Vec<&str> = vec!["region"];
    header.extend(ilr_names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = labels
        .iter()
        .zip(&comps)
        .map(|(label, comp)| {
            let mut row = vec![label.clone()];
            row.extend(ilr_pivot(comp).coords().iter().map(|&v| fmt(v)));
            row
        })
        .collect();
    write_table(output, &header, &rows)
}

pub fn cmd_transform_clr_density(
    input: &Path,
    output: &Path,
    zero_replace: Option<f64>,
) -> Result<()> {
    let table = Table::read(input)?;
    let c_region = table.column("region")?;
    let mut cols: Vec<(usize, f64)> = Vec::new();
    for (c, h) in table.header.iter().enumerate() {
        if c == c_region {
            continue;
        }
        let s = h.parse::<f64>().map_err(|_| CliError::Table {
            file: input.to_path_buf(),
            message: format!("column header '{h}' is not a numeric grid point"),
        })?;
        cols.push((c, s));
    }
    if cols.len() < 2 {
        return Err(CliError::Table {
            file: input.to_path_buf(),
            message: format!("need at least 2 grid columns, found {}", cols.len()),
        });
    }
    let grid = Grid::new(DVector::from_fn(cols.len(), |j, _| cols[j].1)).map_err(|e| {
        CliError::Table {
            file: input.to_path_buf(),
            message: format!("grid columns: {e}"),
        }
    })?;
    let header: Vec<&str> = table.header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for row in &table.rows {
        let mut raw = DVector::zeros(cols.len());
        for (j, &(c, _)) in cols.iter().enumerate() {
            let v = table.parse_f64(row, c)?;
            raw[j] = match zero_replace {
                Some(eps) if v <= 0.0 => eps,
                _ if v <= 0.0 => {
                    return Err(CliError::Parse {
                        file: table.file.clone(),
                        line: row.0,
                        field: table.header[c].clone(),
                        message: format!(
                            "non-positive density value {v}; rerun with --zero-replace EPS to substitute"
                        ),
                    })
                }
                _ => v,
            };
        }
        let density = normalize_density(&raw, &grid).map_err(|e| CliError::Parse {
            file: table.file.clone(),
            line: row.0,
            field: "region".into(),
            message: e.to_string(),
        })?;
        let u = clr_density(&density);
        let mut out_row = vec![table.cell(row, c_region).to_string()];
        out_row.extend(u.values().iter().map(|&v| fmt(v)));
        rows.push(out_row);
    }
    write_table(output, &header, &rows)
}

pub fn cmd_transform_graph(input: &Path, output: &Path) -> Result<()> {
    let table = Table::read(input)?;
    let c_region = table.column("region")?;
    let c_x = table.column("x")?;
    let c_y = table.column("y")?;
    let mut labels = Vec::new();
    let mut coords = Vec::new();
    for row in &table.rows {
        let name = table.cell(row, c_region).to_string();
        if labels.contains(&name) {
            return Err(CliError::Parse {
                file: table.file.clone(),
                line: row.0,
                field: "region".into(),
                message: format!("duplicate region '{name}'"),
            });
        }
        labels.push(name);
        coords.push([table.parse_f64(row, c_x)?, table.parse_f64(row, c_y)?]);
    }
    let graph = gabriel_graph(&coords, labels).map_err(|e| CliError::Table {
        file: input.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(output, graph.to_adjacency_text()).map_err(|source| CliError::Io {
        path: output.to_path_buf(),
        source,
    })
}

const WEEKDAYS: [&str; 7] = [
    "sunday",
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
];

/// Day of week for a proleptic Gregorian date, 0 = Sunday (Sakamoto's
/// congruence).
fn day_of_week(y: i64, m: u32, d: u32) -> usize {
    const T: [i64; 12] = [0, 3, 2, 5, 0, 3, 5, 1, 4, 6, 2, 4];
    let y = if m < 3 { y - 1 } else { y };
    ((y + y.div_euclid(4) - y.div_euclid(100) + y.div_euclid(400)
        + T[(m - 1) as usize]
        + d as i64)
        .rem_euclid(7)) as usize
}

fn parse_date(raw: &str) -> Option<(i64, u32, u32)> {
    let mut parts = raw.splitn(3, '-');
    let y = parts.next()?.parse::<i64>().ok()?;
    let m = parts.next()?.parse::<u32>().ok()?;
    let d = parts.next()?.parse::<u32>().ok()?;
    if !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return None;
    }
    Some((y, m, d))
}

/// Expand a `date` column (YYYY-MM-DD) into weekday indicator columns, one
/// per day except the reference category.
pub fn cmd_weekdays(input: &Path, output: &Path, reference: &str) -> Result<()> {
    let reference = reference.to_ascii_lowercase();
    let ref_idx = WEEKDAYS
        .iter()
        .position(|&d| d == reference)
        .ok_or_else(|| CliError::Config {
            path: input.to_path_buf(),
            message: format!(
                "unknown reference day '{reference}' (expected one of: {})",
                WEEKDAYS.join(", ")
            ),
        })?;
    let table = Table::read(input)?;
    let c_date = table.column("date")?;
    let indicator_days: Vec<usize> = (0..7).filter(|&d| d != ref_idx).collect();
    let mut header: Vec<&str> = table.header.iter().map(String::as_str).collect();
    header.extend(indicator_days.iter().map(|&d| WEEKDAYS[d]));
    let mut rows = Vec::new();
    for row in &table.rows {
        let raw = table.cell(row, c_date);
        let (y, m, d) = parse_date(raw).ok_or_else(|| CliError::Parse {
            file: table.file.clone(),
            line: row.0,
            field: "date".into(),
            message: format!("'{raw}' is not a YYYY-MM-DD date"),
        })?;
        let dow = day_of_week(y, m, d);
        let mut out_row = row.1.clone();
        for &day in &indicator_days {
            out_row.push(if day == dow { "1".into() } else { "0".into() });
        }
        rows.push(out_row);
    }
    write_table(output, &header, &rows)
}
