//! Curve samples on a common grid: CSV ingestion, regridding and the sample covariance.
//!
//! CSV layout: an optional header row whose first cell is `t` followed by the grid times;
//! when the header is present every curve row starts with a label cell. Without a header
//! each row holds only values and a uniform grid on `[0, 1]` is assumed. Empty cells are
//! missing observations.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

/// `n` curves observed on `p` grid points; missing cells are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveDataset {
    grid: Vec<f64>,
    values: DMatrix<f64>,
    labels: Vec<String>,
    has_missing: bool,
    /// No header was read and the grid was taken to be uniform on `[0, 1]`.
    pub grid_assumed: bool,
}

impl CurveDataset {
    pub fn new(grid: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=values.nrows()).map(|i| format!("curve_{i}")).collect();
        Self::with_labels(grid, values, labels)
    }

    pub fn with_labels(grid: Vec<f64>, values: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::input(format!("grid needs at least 2 points, got {}", grid.len())));
        }
        if values.ncols() != grid.len() {
            return Err(Error::input(format!(
                "values have {} columns but the grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if labels.len() != values.nrows() {
            return Err(Error::input("one label per curve is required"));
        }
        check_increasing(&grid)?;
        if values.iter().any(|x| x.is_infinite()) {
            return Err(Error::input("curve values must be finite"));
        }
        let has_missing = values.iter().any(|x| x.is_nan());
        Ok(CurveDataset {
            grid,
            values,
            labels,
            has_missing,
            grid_assumed: false,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `n × p` values, NaN where missing.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn has_missing(&self) -> bool {
        self.has_missing
    }

    /// Whether the grid has equal spacing up to `1e-9` relative error.
    pub fn is_uniform(&self) -> bool {
        let span = self.grid[self.p() - 1] - self.grid[0];
        let h = span / (self.p() - 1) as f64;
        self.grid
            .iter()
            .enumerate()
            .all(|(l, t)| (t - (self.grid[0] + h * l as f64)).abs() <= 1e-9 * span.abs().max(1.0))
    }

    /// Curves at the given row indices, in that order.
    pub fn subset(&self, rows: &[usize]) -> CurveDataset {
        let values = self.values.select_rows(rows);
        CurveDataset {
            grid: self.grid.clone(),
            values,
            labels: rows.iter().map(|&i| self.labels[i].clone()).collect(),
            has_missing: rows.iter().any(|&i| self.values.row(i).iter().any(|x| x.is_nan())),
            grid_assumed: self.grid_assumed,
        }
    }

    /// Pointwise sample mean.
    pub fn mean_curve(&self) -> Result<Vec<f64>> {
        if self.has_missing {
            return Err(Error::input("mean curve needs complete data; regrid first"));
        }
        if self.n() == 0 {
            return Err(Error::input("mean curve of an empty sample"));
        }
        Ok(self.values.row_mean().iter().copied().collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(file)
    }

    /// Writes the header form of the CSV layout.
    pub fn write_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(self.grid.iter().map(|t| fmt_f64(*t)));
        w.write_record(&header)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut row = vec![label.clone()];
            row.extend(self.values.row(i).iter().map(|&x| {
                if x.is_nan() {
                    String::new()
                } else {
                    fmt_f64(x)
                }
            }));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip representation; keeps written files byte-stable.
pub fn fmt_f64(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-5 || x.abs() >= 1e16) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn check_increasing(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::input("grid contains non-finite values"));
    }
    if let Some(l) = grid.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::input(format!(
            "grid is not strictly increasing at position {}",
            l + 1
        )));
    }
    Ok(())
}

/// `p` equally spaced points from `start` to `end` inclusive.
pub fn uniform_grid(start: f64, end: f64, p: usize) -> Vec<f64> {
    if p == 1 {
        return vec![start];
    }
    let h = (end - start) / (p - 1) as f64;
    (0..p)
        .map(|l| if l == p - 1 { end } else { start + h * l as f64 })
        .collect()
}

pub fn load_csv(path: &Path) -> Result<CurveDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<CurveDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        rows.push(rec);
    }
    let Some(first) = rows.first() else {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "file contains no curves".into(),
        });
    };

    let has_header = first.get(0).is_some_and(|c| c.eq_ignore_ascii_case("t"));
    let offset = usize::from(has_header);
    let p = first.len() - offset;
    if p == 0 {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "no grid columns".into(),
        });
    }

    let (grid, data_rows) = if has_header {
        let mut grid = Vec::with_capacity(p);
        for (c, cell) in first.iter().enumerate().skip(1) {
            let t = parse_number(cell).ok_or_else(|| Error::Parse {
                row: 1,
                column: c + 1,
                message: format!("grid time {cell:?} is not a number"),
            })?;
            if let Some(prev) = grid.last() {
                if !(t > *prev) {
                    return Err(Error::Parse {
                        row: 1,
                        column: c + 1,
                        message: "grid times must be strictly increasing".into(),
                    });
                }
            }
            grid.push(t);
        }
        (grid, &rows[1..])
    } else {
        (uniform_grid(0.0, 1.0, p), &rows[..])
    };

    let n = data_rows.len();
    let mut values = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in data_rows.iter().enumerate() {
        let row_no = i + 1 + offset;
        if rec.len() != p + offset {
            return Err(Error::Parse {
                row: row_no,
                column: rec.len().min(p + offset) + 1,
                message: format!("expected {} cells, found {}", p + offset, rec.len()),
            });
        }
        labels.push(if has_header {
            rec.get(0).unwrap_or_default().to_string()
        } else {
            format!("curve_{}", i + 1)
        });
        for (l, cell) in rec.iter().skip(offset).enumerate() {
            values[(i, l)] = if cell.is_empty() {
                f64::NAN
            } else {
                match parse_number(cell) {
                    Some(x) => x,
                    None => {
                        return Err(Error::Parse {
                            row: row_no,
                            column: l + offset + 1,
                            message: format!("{cell:?} is not a number"),
                        })
                    }
                }
            };
        }
    }
    let mut ds = CurveDataset::with_labels(grid, values, labels)?;
    ds.grid_assumed = !has_header;
    Ok(ds)
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Linear interpolation of each curve onto `p_out` equally spaced points spanning the
/// original grid, holding the end values constant outside the observed range.
pub fn to_regular_grid(d: &CurveDataset, p_out: usize) -> Result<CurveDataset> {
    if p_out < 2 {
        return Err(Error::input(format!("output grid needs at least 2 points, got {p_out}")));
    }
    let out_grid = uniform_grid(d.grid[0], d.grid[d.p() - 1], p_out);
    let mut values = DMatrix::zeros(d.n(), p_out);
    for i in 0..d.n() {
        let (ts, ys): (Vec<f64>, Vec<f64>) = d
            .grid
            .iter()
            .zip(d.values.row(i).iter())
            .filter(|(_, y)| !y.is_nan())
            .map(|(t, y)| (*t, *y))
            .unzip();
        if ts.len() < 2 {
            return Err(Error::input(format!(
                "curve {i} has {} observed points; at least 2 are needed",
                ts.len()
            )));
        }
        for (l, &t) in out_grid.iter().enumerate() {
            values[(i, l)] = lerp(&ts, &ys, t);
        }
    }
    let mut out = CurveDataset::with_labels(out_grid, values, d.labels.clone())?;
    out.grid_assumed = d.grid_assumed;
    Ok(out)
}

/// Piecewise-linear interpolant through `(xs, ys)` with constant extension at both ends.
pub fn lerp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let hi = xs.partition_point(|&g| g <= x);
    let lo = hi - 1;
    let w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + w * (ys[hi] - ys[lo])
}

/// Sample covariance with its grid.
#[derive(Debug, Clone)]
pub struct CovEstimate {
    pub s: SymMatrix,
    pub grid: Vec<f64>,
}

impl CovEstimate {
    pub fn p(&self) -> usize {
        self.grid.len()
    }
}

/// `S(l, l′) = (n−1)⁻¹ Σ_i (Y_il − Ȳ_l)(Y_il′ − Ȳ_l′)`.
pub fn sample_covariance(d: &CurveDataset) -> Result<CovEstimate> {
    if d.has_missing {
        return Err(Error::input(
            "sample covariance needs complete curves; interpolate onto a regular grid first",
        ));
    }
    Ok(CovEstimate {
        s: covariance_of_rows(&d.values)?,
        grid: d.grid.clone(),
    })
}

pub(crate) fn covariance_of_rows(values: &DMatrix<f64>) -> Result<SymMatrix> {
    let n = values.nrows();
    if n < 2 {
        return Err(Error::input(format!(
            "sample covariance needs at least 2 curves, got {n}"
        )));
    }
    let mean = values.row_mean();
    let mut centered = values.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let s = centered.tr_mul(&centered) / (n - 1) as f64;
    SymMatrix::new(s)
}
