//! NetCDF-3 import: 3-D `[time, lat, lon]` variables to an XG1 manifest.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use chrono::{Duration, NaiveDate};
use netcdf3::{DataSet, DataVector, FileReader};

use heatxai::griddata::{write_xg1, Manifest, ManifestVariable};

pub struct ConvertOptions {
    /// Variables to import; all 3-D numeric variables when empty.
    pub variables: Vec<String>,
    /// Overrides the start date read from the time axis.
    pub start_date: Option<NaiveDate>,
}

fn to_f64(v: DataVector) -> Vec<f64> {
    match v {
        DataVector::I8(x) => x.into_iter().map(f64::from).collect(),
        DataVector::U8(x) => x.into_iter().map(f64::from).collect(),
        DataVector::I16(x) => x.into_iter().map(f64::from).collect(),
        DataVector::I32(x) => x.into_iter().map(f64::from).collect(),
        DataVector::F32(x) => x.into_iter().map(f64::from).collect(),
        DataVector::F64(x) => x,
    }
}

/// First value of a numeric attribute, whatever its stored type.
fn attr_f64(ds: &DataSet, var: &str, name: &str) -> Option<f64> {
    let a = ds.get_var_attr(var, name)?;
    a.get_f64()
        .and_then(|x| x.first().copied())
        .or_else(|| a.get_f32().and_then(|x| x.first().map(|&v| f64::from(v))))
        .or_else(|| a.get_i32().and_then(|x| x.first().map(|&v| f64::from(v))))
        .or_else(|| a.get_i16().and_then(|x| x.first().map(|&v| f64::from(v))))
        .or_else(|| a.get_i8().and_then(|x| x.first().map(|&v| f64::from(v))))
}

/// Parses CF time units `"days since 1959-01-01"` or `"hours since ..."`
/// into the origin and the number of units per day.
fn parse_time_units(units: &str) -> anyhow::Result<(NaiveDate, f64)> {
    let mut parts = units.split_whitespace();
    let unit = parts.next().unwrap_or_default();
    if parts.next() != Some("since") {
        bail!("time units {units:?} are not of the form '<unit> since <date>'");
    }
    let per_day = match unit {
        "days" | "day" => 1.0,
        "hours" | "hour" => 24.0,
        _ => bail!("unsupported time unit {unit:?}"),
    };
    let date = parts.next().ok_or_else(|| anyhow!("time units {units:?} lack a date"))?;
    let date = date.split('T').next().unwrap_or(date);
    let origin = NaiveDate::parse_from_str(date, "%Y-%m-%d").with_context(|| format!("time origin {date:?}"))?;
    Ok((origin, per_day))
}

/// Writes `<name>.xg1` per variable and `manifest.json` into `dir`.
/// Packed values are unpacked with `scale_factor`/`add_offset`, and fill
/// values become NaN.
pub fn convert(input: &Path, dir: &Path, opts: &ConvertOptions) -> anyhow::Result<PathBuf> {
    let mut reader = FileReader::open(input).map_err(|e| anyhow!("opening {}: {e:?}", input.display()))?;
    let mut data = reader.read_all_vars().map_err(|e| anyhow!("reading {}: {e:?}", input.display()))?;
    let (ds, _) = reader.close();
    let mut take = |name: &str| data.remove(name).map(to_f64).ok_or_else(|| anyhow!("no data for {name:?}"));

    let names: Vec<String> = if opts.variables.is_empty() {
        ds.get_var_names().into_iter().filter(|n| ds.get_var(n).is_some_and(|v| v.num_dims() == 3)).collect()
    } else {
        opts.variables.clone()
    };
    if names.is_empty() {
        bail!("{} holds no 3-D variables", input.display());
    }
    let dims = {
        let v = ds.get_var(&names[0]).ok_or_else(|| anyhow!("no variable {:?}", names[0]))?;
        v.dim_names()
    };
    for n in &names {
        let v = ds.get_var(n).ok_or_else(|| anyhow!("no variable {n:?}"))?;
        if v.dim_names() != dims || dims.len() != 3 {
            bail!("variable {n:?} has dims {:?}, expected {dims:?} as [time, lat, lon]", v.dim_names());
        }
    }
    let size = |d: &str| ds.dim_size(d).ok_or_else(|| anyhow!("no dimension {d:?}"));
    let (nt, nh, nw) = (size(&dims[0])?, size(&dims[1])?, size(&dims[2])?);

    let mut coord = |name: &str, n: usize| -> anyhow::Result<Vec<f64>> {
        if ds.get_var(name).is_some_and(|v| v.num_dims() == 1) {
            let v = take(name)?;
            if v.len() != n {
                bail!("coordinate {name:?} has {} values, dimension {n}", v.len());
            }
            Ok(v)
        } else {
            Ok((0..n).map(|i| i as f64).collect())
        }
    };
    let lat = coord(&dims[1], nh)?;
    let lon = coord(&dims[2], nw)?;

    let start_date = match opts.start_date {
        Some(d) => d,
        None => {
            let tname = &dims[0];
            let units = ds
                .get_var_attr_as_string(tname, "units")
                .ok_or_else(|| anyhow!("time variable {tname:?} has no units; pass --start-date"))?;
            let (origin, per_day) = parse_time_units(&units)?;
            let t = coord(tname, nt)?;
            let days: Vec<f64> = t.iter().map(|v| v / per_day).collect();
            if days.windows(2).any(|w| (w[1] - w[0] - 1.0).abs() > 1e-6) {
                bail!("time axis is not daily and contiguous");
            }
            let first = days.first().copied().unwrap_or(0.0);
            if (first - first.round()).abs() > 1e-6 {
                bail!("first time value is not a whole day");
            }
            origin + Duration::days(first.round() as i64)
        }
    };

    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut variables = Vec::new();
    for n in &names {
        let mut values = take(n)?;
        let fill = attr_f64(&ds, n, "_FillValue");
        let missing = attr_f64(&ds, n, "missing_value");
        let scale = attr_f64(&ds, n, "scale_factor").unwrap_or(1.0);
        let offset = attr_f64(&ds, n, "add_offset").unwrap_or(0.0);
        for v in values.iter_mut() {
            *v = if Some(*v) == fill || Some(*v) == missing { f64::NAN } else { *v * scale + offset };
        }
        let file = PathBuf::from(format!("{n}.xg1"));
        write_xg1(&dir.join(&file), [nt, nh, nw], &values)?;
        let units = ds.get_var_attr_as_string(n, "units").unwrap_or_default();
        variables.push(ManifestVariable { name: n.clone(), units, path: file });
    }
    let manifest = Manifest { start_date, length: Some(nt), variables, lat, lon };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
