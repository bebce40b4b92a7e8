//! File formats.
//!
//! `MWGRID1` holds one 2-D array: the 8-byte magic `MWGRID1\n`, the header
//! length as a little-endian u64, the JSON header, then ny·nx little-endian
//! f64 values in row-major order. Masks and polygons can also be read from
//! CSV.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Point, SamplingWindow, SpectralField};
use crate::simulate::Field;

pub const MAGIC: &[u8; 8] = b"MWGRID1\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Field,
    Window,
    Spectral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub ny: usize,
    pub nx: usize,
    pub dy: f64,
    pub dx: f64,
    #[serde(default)]
    pub units: String,
    pub kind: GridKind,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridContainer {
    pub header: GridHeader,
    pub values: Array2<f64>,
}

impl GridContainer {
    pub fn new(kind: GridKind, grid: GridSpec, values: Array2<f64>) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::Shape(format!(
                "values are {:?}, grid is {:?}",
                values.dim(),
                grid.shape()
            )));
        }
        Ok(GridContainer {
            header: GridHeader {
                ny: grid.ny,
                nx: grid.nx,
                dy: grid.dy,
                dx: grid.dx,
                units: String::new(),
                kind,
                metadata: BTreeMap::new(),
            },
            values,
        })
    }

    pub fn from_field(f: &Field) -> Self {
        GridContainer::new(GridKind::Field, f.grid, f.values.clone()).expect("field is consistent")
    }

    pub fn from_window(w: &SamplingWindow) -> Self {
        GridContainer::new(GridKind::Window, w.grid, w.weights.clone()).expect("window is consistent")
    }

    pub fn from_spectral(s: &SpectralField) -> Self {
        GridContainer::new(GridKind::Spectral, s.grid, s.values.clone()).expect("spectral field is consistent")
    }

    pub fn with_units(mut self, units: &str) -> Self {
        self.header.units = units.to_string();
        self
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.header.ny, self.header.nx, self.header.dy, self.header.dx)
    }

    fn expect_kind(&self, kind: GridKind) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Format(format!(
                "container holds {:?} data, {:?} was expected",
                self.header.kind, kind
            )));
        }
        Ok(())
    }

    pub fn to_field(&self) -> Result<Field> {
        self.expect_kind(GridKind::Field)?;
        Field::new(self.grid()?, self.values.clone())
    }

    pub fn to_window(&self) -> Result<SamplingWindow> {
        self.expect_kind(GridKind::Window)?;
        SamplingWindow::new(self.grid()?, self.values.clone())
    }

    pub fn to_spectral(&self) -> Result<SpectralField> {
        self.expect_kind(GridKind::Spectral)?;
        Ok(SpectralField {
            grid: self.grid()?,
            values: self.values.clone(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.values.dim() != (self.header.ny, self.header.nx) {
            return Err(Error::Shape("header and values disagree in shape".into()));
        }
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not an MWGRID1 file (magic mismatch)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let end = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: GridHeader = serde_json::from_slice(&bytes[16..end])
            .map_err(|e| Error::Format(format!("malformed header: {e}")))?;
        let n = header
            .ny
            .checked_mul(header.nx)
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        let payload = &bytes[end..];
        if payload.len() < 8 * n {
            return Err(Error::Format(format!(
                "truncated payload: {} bytes for {n} values",
                payload.len()
            )));
        }
        if payload.len() > 8 * n {
            return Err(Error::Format(format!(
                "{} trailing bytes after the payload",
                payload.len() - 8 * n
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let values = Array2::from_shape_vec((header.ny, header.nx), values)
            .map_err(|e| Error::Format(format!("payload shape: {e}")))?;
        Ok(GridContainer { header, values })
    }
}

pub fn write_grid(container: &GridContainer, path: impl AsRef<Path>) -> Result<()> {
    let bytes = container.to_bytes()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<GridContainer> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    GridContainer::from_bytes(&bytes)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Rows of numbers; a first row that does not parse is taken as a header.
fn read_numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.parse::<f64>()).collect();
        match parsed {
            Ok(v) if !v.is_empty() => rows.push(v),
            Ok(_) => {}
            Err(_) if i == 0 => {}
            Err(e) => return Err(Error::Format(format!("{} line {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(rows)
}

/// A weight grid from CSV, one row per line.
pub fn read_mask_csv(path: impl AsRef<Path>, dy: f64, dx: f64) -> Result<SamplingWindow> {
    let rows = read_numeric_rows(path.as_ref())?;
    let ny = rows.len();
    let nx = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nx) {
        return Err(Error::Format("mask rows differ in length".into()));
    }
    let values = Array2::from_shape_fn((ny, nx), |(i, j)| rows[i][j]);
    SamplingWindow::new(GridSpec::new(ny, nx, dy, dx)?, values)
}

pub fn write_mask_csv(window: &SamplingWindow, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Format(e.to_string()))?;
    for row in window.weights.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Polygon vertices as (x, y) pairs, one per line.
pub fn read_polygon_csv(path: impl AsRef<Path>) -> Result<Vec<Point>> {
    let rows = read_numeric_rows(path.as_ref())?;
    rows.iter()
        .map(|r| match r.as_slice() {
            [x, y] => Ok((*x, *y)),
            _ => Err(Error::Format(format!("polygon rows need two columns, found {}", r.len()))),
        })
        .collect()
}

/// A table with a header row.
pub fn write_table_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(header).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let f = fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}
