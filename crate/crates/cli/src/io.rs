//! Atomic file output, CSV tables and density ingestion.

use crate::config::{DensitySource, GridSpec};
use crate::Failure;
use matmob::grid::GridDensity;
use std::fs;
use std::path::{Path, PathBuf};

/// Lossless decimal form of a double.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let tmp: PathBuf = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(format!(".tmp{}", std::process::id()));
        path.with_file_name(name)
    };
    fs::write(&tmp, bytes).map_err(|e| Failure::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// A CSV table built in memory, written atomically.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[String]) -> Self {
        let mut writer = csv::Writer::from_writer(vec![]);
        writer.write_record(header).expect("in-memory write");
        Table { writer }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn save(self, path: &Path) -> Result<(), Failure> {
        let bytes = self.writer.into_inner().map_err(|e| Failure::Io(e.to_string()))?;
        write_atomic(path, &bytes)
    }
}

pub fn header(fixed: &[&str], prefix: &str, n: usize) -> Vec<String> {
    let mut h: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    h.extend((1..=n).map(|j| format!("{prefix}_{j}")));
    h
}

fn per_component(v: &[f64], n: usize, what: &str) -> Result<(), Failure> {
    if v.len() != n {
        return Err(Failure::Config(format!("{what} has {} entries, the model has {n} components", v.len())));
    }
    Ok(())
}

pub fn load_density(src: &DensitySource, grid: &GridSpec, n: usize) -> Result<GridDensity, Failure> {
    let (a, b, cells) = (grid.x_min, grid.x_max, grid.cells);
    let g = match src {
        DensitySource::Csv { path } => return read_density_csv(path, grid, n),
        DensitySource::GaussianBump { background, amplitude, center, sigma } => {
            per_component(background, n, "background")?;
            per_component(amplitude, n, "amplitude")?;
            GridDensity::from_fn(a, b, cells, n, |x| {
                let e = (-(x - center).powi(2) / (2.0 * sigma * sigma)).exp();
                (0..n).map(|c| background[c] + amplitude[c] * e).collect()
            })
        }
        DensitySource::Box { background, amplitude, left, right } => {
            per_component(background, n, "background")?;
            per_component(amplitude, n, "amplitude")?;
            GridDensity::from_fn(a, b, cells, n, |x| {
                let inside = if (*left..=*right).contains(&x) { 1.0 } else { 0.0 };
                (0..n).map(|c| background[c] + amplitude[c] * inside).collect()
            })
        }
        DensitySource::TanhFront { left, right, center, width } => {
            per_component(left, n, "left")?;
            per_component(right, n, "right")?;
            GridDensity::from_fn(a, b, cells, n, |x| {
                let s = 0.5 * (1.0 + ((x - center) / width).tanh());
                (0..n).map(|c| left[c] + (right[c] - left[c]) * s).collect()
            })
        }
        DensitySource::Fields { background, fields } => {
            per_component(background, n, "background")?;
            GridDensity::from_fields(a, b, cells, background, fields)
        }
    };
    g.map_err(|e| Failure::Config(e.to_string()))
}

fn read_density_csv(path: &Path, grid: &GridSpec, n: usize) -> Result<GridDensity, Failure> {
    let bad = |m: String| Failure::Config(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let want = header(&["x"], "mu", n);
    let got: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(|s| s.trim().to_string()).collect();
    if got != want {
        return Err(bad(format!("expected columns {want:?}, found {got:?}")));
    }
    let dx = (grid.x_max - grid.x_min) / grid.cells as f64;
    let mut values = vec![];
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let v: Vec<f64> = rec.iter().map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| bad(format!("row {}: {e}", rows + 1)))?;
        let x = grid.x_min + (rows as f64 + 0.5) * dx;
        if (v[0] - x).abs() > 1e-9 * (1.0 + x.abs()) {
            return Err(bad(format!("row {} has x = {}, the grid's cell center is {x}", rows + 1, v[0])));
        }
        values.extend_from_slice(&v[1..]);
        rows += 1;
    }
    if rows != grid.cells {
        return Err(bad(format!("{rows} rows, the grid has {} cells", grid.cells)));
    }
    GridDensity::new(grid.x_min, grid.x_max, grid.cells, n, values).map_err(|e| bad(e.to_string()))
}

/// Rows `k, t, x, mu_*` for the given snapshots.
pub fn density_table(snaps: &[(usize, f64, &GridDensity)], n: usize) -> Table {
    let mut t = Table::new(&header(&["k", "t", "x"], "mu", n));
    for (k, time, mu) in snaps {
        for i in 0..mu.cells {
            let mut row = vec![k.to_string(), num(*time), num(mu.x(i))];
            row.extend(mu.row(i).iter().map(|v| num(*v)));
            t.row(&row);
        }
    }
    t
}
