//! CSV readers and writers for market data.
//!
//! Long formats use `-1` for the missing partner: `x,y,mass` rows with
//! `y = -1` are single men and rows with `x = -1` single women.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result, Side};
use crate::market::{GroupUtilities, Margins, Matching, SurplusMatrix, SystematicUtilities};

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.flush().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

struct Table {
    file: String,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn parse_err(&self, line: usize, reason: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.clone(),
            line,
            reason: reason.into(),
        }
    }

    fn field<T: std::str::FromStr>(&self, line: usize, rec: &csv::StringRecord, col: usize, name: &str) -> Result<T> {
        let raw = rec.get(col).ok_or_else(|| self.parse_err(line, format!("missing column {name}")))?;
        raw.trim()
            .parse()
            .map_err(|_| self.parse_err(line, format!("cannot parse {name} from {raw:?}")))
    }
}

fn parse_table(text: &str, file: &str, expected: &[&str]) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            file: file.into(),
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(Error::Parse {
            file: file.into(),
            line: 1,
            reason: format!("missing header: expected {:?}, found {:?}", expected.join(","), found.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            file: file.into(),
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec));
    }
    Ok(Table {
        file: file.into(),
        rows,
    })
}

fn negative(table: &Table, line: usize, v: f64) -> Error {
    Error::Invalid {
        what: format!("{} row {}", table.file, line),
        reason: format!("negative mass {v}"),
    }
}

fn to_csv(header: &str, rows: impl Iterator<Item = String>) -> Vec<u8> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s.into_bytes()
}

// Shortest representation that parses back to the same f64.
fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Long rows `(x, y, mass)` for a matching: couples, single men, single women.
fn matching_rows(mu: &Matching) -> Vec<(isize, isize, f64)> {
    let mut rows = Vec::new();
    for x in 0..mu.nx() {
        for y in 0..mu.ny() {
            rows.push((x as isize, y as isize, mu.mu[(x, y)]));
        }
    }
    for x in 0..mu.nx() {
        rows.push((x as isize, -1, mu.mu_x0[x]));
    }
    for y in 0..mu.ny() {
        rows.push((-1, y as isize, mu.mu_0y[y]));
    }
    rows
}

pub fn matching_to_csv(mu: &Matching) -> Vec<u8> {
    to_csv(
        "x,y,mass",
        matching_rows(mu).into_iter().map(|(x, y, m)| format!("{x},{y},{}", num(m))),
    )
}

pub fn write_matching(path: &Path, mu: &Matching) -> Result<()> {
    write_atomic(path, &matching_to_csv(mu))
}

fn long_cells(table: &Table, shape: Option<(usize, usize)>) -> Result<(usize, usize, Vec<(isize, isize, f64, usize)>)> {
    let mut cells = Vec::new();
    let (mut nx, mut ny) = (0usize, 0usize);
    for (line, rec) in &table.rows {
        let x: isize = table.field(*line, rec, 0, "x")?;
        let y: isize = table.field(*line, rec, 1, "y")?;
        let m: f64 = table.field(*line, rec, 2, "mass")?;
        if x < -1 || y < -1 || (x == -1 && y == -1) {
            return Err(table.parse_err(*line, format!("invalid cell ({x}, {y})")));
        }
        if !m.is_finite() {
            return Err(table.parse_err(*line, "non-finite mass"));
        }
        if m < 0.0 {
            return Err(negative(table, *line, m));
        }
        nx = nx.max((x + 1) as usize);
        ny = ny.max((y + 1) as usize);
        cells.push((x, y, m, *line));
    }
    if let Some((ex, ey)) = shape {
        if nx > ex {
            return Err(Error::dims("men groups", ex, nx));
        }
        if ny > ey {
            return Err(Error::dims("women groups", ey, ny));
        }
        nx = ex;
        ny = ey;
    }
    if nx == 0 || ny == 0 {
        return Err(table.parse_err(1, "no groups found"));
    }
    Ok((nx, ny, cells))
}

fn matching_from_cells(table: &Table, nx: usize, ny: usize, cells: &[(isize, isize, f64, usize)]) -> Result<Matching> {
    let mut mu = DMatrix::zeros(nx, ny);
    let mut sx = DVector::zeros(nx);
    let mut sy = DVector::zeros(ny);
    let mut seen = std::collections::HashSet::new();
    for (x, y, m, line) in cells {
        if !seen.insert((*x, *y)) {
            return Err(table.parse_err(*line, format!("duplicate cell ({x}, {y})")));
        }
        match (*x, *y) {
            (-1, y) => sy[y as usize] = *m,
            (x, -1) => sx[x as usize] = *m,
            (x, y) => mu[(x as usize, y as usize)] = *m,
        }
    }
    Matching::new(mu, sx, sy)
}

pub fn parse_matching(text: &str, file: &str, shape: Option<(usize, usize)>) -> Result<Matching> {
    let table = parse_table(text, file, &["x", "y", "mass"])?;
    let (nx, ny, cells) = long_cells(&table, shape)?;
    matching_from_cells(&table, nx, ny, &cells)
}

/// Read a matching; `shape` fixes the number of groups, otherwise it is
/// inferred from the largest indices.
pub fn read_matching(path: &Path, shape: Option<(usize, usize)>) -> Result<Matching> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_matching(&text, &file_name(path), shape)
}

pub fn margins_to_csv(r: &Margins) -> Vec<u8> {
    let men = r.n().iter().enumerate().map(|(i, v)| format!("men,{i},{}", num(*v)));
    let women = r.m().iter().enumerate().map(|(j, v)| format!("women,{j},{}", num(*v)));
    to_csv("side,group,mass", men.chain(women))
}

pub fn write_margins(path: &Path, r: &Margins) -> Result<()> {
    write_atomic(path, &margins_to_csv(r))
}

pub fn parse_margins(text: &str, file: &str) -> Result<Margins> {
    let table = parse_table(text, file, &["side", "group", "mass"])?;
    let mut men: Vec<Option<f64>> = Vec::new();
    let mut women: Vec<Option<f64>> = Vec::new();
    for (line, rec) in &table.rows {
        let side = match rec.get(0).map(str::trim) {
            Some("men") => Side::Men,
            Some("women") => Side::Women,
            other => return Err(table.parse_err(*line, format!("unknown side {other:?}"))),
        };
        let g: usize = table.field(*line, rec, 1, "group")?;
        let m: f64 = table.field(*line, rec, 2, "mass")?;
        if !m.is_finite() {
            return Err(table.parse_err(*line, "non-finite mass"));
        }
        if m < 0.0 {
            return Err(negative(&table, *line, m));
        }
        let v = if side == Side::Men { &mut men } else { &mut women };
        if v.len() <= g {
            v.resize(g + 1, None);
        }
        if v[g].replace(m).is_some() {
            return Err(table.parse_err(*line, format!("duplicate {side} group {g}")));
        }
    }
    let fill = |v: Vec<Option<f64>>, side: Side| -> Result<Vec<f64>> {
        v.into_iter()
            .enumerate()
            .map(|(g, m)| m.ok_or_else(|| Error::invalid(file, format!("{side} group {g} missing"))))
            .collect()
    };
    Margins::new(fill(men, Side::Men)?, fill(women, Side::Women)?)
}

pub fn read_margins(path: &Path) -> Result<Margins> {
    let table_text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_margins(&table_text, &file_name(path))
}

/// Forbidden cells are written with value 0 and flag 1.
pub fn surplus_to_csv(phi: &SurplusMatrix) -> Vec<u8> {
    let rows = (0..phi.nx()).flat_map(|x| {
        (0..phi.ny()).map(move |y| {
            let f = phi.is_forbidden(x, y);
            format!("{x},{y},{},{}", num(phi.values()[(x, y)]), u8::from(f))
        })
    });
    to_csv("x,y,phi,forbidden", rows)
}

pub fn write_surplus(path: &Path, phi: &SurplusMatrix) -> Result<()> {
    write_atomic(path, &surplus_to_csv(phi))
}

pub fn parse_surplus(text: &str, file: &str) -> Result<SurplusMatrix> {
    let table = parse_table(text, file, &["x", "y", "phi", "forbidden"])?;
    let mut cells = Vec::new();
    let (mut nx, mut ny) = (0, 0);
    for (line, rec) in &table.rows {
        let x: usize = table.field(*line, rec, 0, "x")?;
        let y: usize = table.field(*line, rec, 1, "y")?;
        let v: f64 = table.field(*line, rec, 2, "phi")?;
        let f = match rec.get(3).map(str::trim) {
            Some("0") | Some("false") => false,
            Some("1") | Some("true") => true,
            other => return Err(table.parse_err(*line, format!("bad forbidden flag {other:?}"))),
        };
        if !f && !v.is_finite() {
            return Err(table.parse_err(*line, "non-finite surplus on allowed cell"));
        }
        nx = nx.max(x + 1);
        ny = ny.max(y + 1);
        cells.push((x, y, v, f, *line));
    }
    let mut phi = DMatrix::zeros(nx, ny);
    let mut mask = DMatrix::from_element(nx, ny, false);
    let mut seen = DMatrix::from_element(nx, ny, false);
    for (x, y, v, f, line) in cells {
        if seen[(x, y)] {
            return Err(table.parse_err(line, format!("duplicate cell ({x}, {y})")));
        }
        seen[(x, y)] = true;
        phi[(x, y)] = if f { 0.0 } else { v };
        mask[(x, y)] = f;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(file, format!("cell ({}, {}) missing", i % nx.max(1), i / nx.max(1))));
    }
    SurplusMatrix::with_mask(phi, mask)
}

pub fn read_surplus(path: &Path) -> Result<SurplusMatrix> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_surplus(&text, &file_name(path))
}

/// Household counts in the matching layout, as nonnegative integers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleCounts {
    pub couples: DMatrix<u64>,
    pub single_men: Vec<u64>,
    pub single_women: Vec<u64>,
}

pub fn counts_to_csv(c: &SampleCounts) -> Vec<u8> {
    let (nx, ny) = c.couples.shape();
    let mut rows = Vec::new();
    for x in 0..nx {
        for y in 0..ny {
            rows.push(format!("{x},{y},{}", c.couples[(x, y)]));
        }
    }
    rows.extend(c.single_men.iter().enumerate().map(|(x, v)| format!("{x},-1,{v}")));
    rows.extend(c.single_women.iter().enumerate().map(|(y, v)| format!("-1,{y},{v}")));
    to_csv("x,y,count", rows.into_iter())
}

pub fn parse_counts(text: &str, file: &str, shape: Option<(usize, usize)>) -> Result<SampleCounts> {
    let table = parse_table(text, file, &["x", "y", "count"])?;
    let mut cells = Vec::new();
    for (line, rec) in &table.rows {
        let raw = rec.get(2).unwrap_or("").trim();
        if raw.starts_with('-') {
            return Err(Error::Invalid {
                what: format!("{file} row {line}"),
                reason: format!("negative count {raw}"),
            });
        }
        let c: u64 = table.field(*line, rec, 2, "count")?;
        let x: isize = table.field(*line, rec, 0, "x")?;
        let y: isize = table.field(*line, rec, 1, "y")?;
        if x < -1 || y < -1 || (x == -1 && y == -1) {
            return Err(table.parse_err(*line, format!("invalid cell ({x}, {y})")));
        }
        cells.push((x, y, c, *line));
    }
    let mut nx = cells.iter().map(|c| (c.0 + 1) as usize).max().unwrap_or(0);
    let mut ny = cells.iter().map(|c| (c.1 + 1) as usize).max().unwrap_or(0);
    if let Some((ex, ey)) = shape {
        if nx > ex {
            return Err(Error::dims("men groups", ex, nx));
        }
        if ny > ey {
            return Err(Error::dims("women groups", ey, ny));
        }
        nx = ex;
        ny = ey;
    }
    let mut out = SampleCounts {
        couples: DMatrix::zeros(nx, ny),
        single_men: vec![0; nx],
        single_women: vec![0; ny],
    };
    for (x, y, c, _) in cells {
        match (x, y) {
            (-1, y) => out.single_women[y as usize] = c,
            (x, -1) => out.single_men[x as usize] = c,
            (x, y) => out.couples[(x as usize, y as usize)] = c,
        }
    }
    Ok(out)
}

pub fn read_counts(path: &Path, shape: Option<(usize, usize)>) -> Result<SampleCounts> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_counts(&text, &file_name(path), shape)
}

pub fn write_counts(path: &Path, c: &SampleCounts) -> Result<()> {
    write_atomic(path, &counts_to_csv(c))
}

/// `kind,x,y,value` rows: `U` and `V` per cell, `u` per man group (y = -1)
/// and `v` per woman group (x = -1).
pub fn utilities_to_csv(sys: Option<&SystematicUtilities>, groups: &GroupUtilities, mask: Option<&DMatrix<bool>>) -> Vec<u8> {
    let mut rows = Vec::new();
    if let Some(s) = sys {
        for (kind, m) in [("U", &s.u), ("V", &s.v)] {
            for x in 0..m.nrows() {
                for y in 0..m.ncols() {
                    if mask.is_some_and(|f| f[(x, y)]) {
                        continue;
                    }
                    rows.push(format!("{kind},{x},{y},{}", num(m[(x, y)])));
                }
            }
        }
    }
    rows.extend(groups.u.iter().enumerate().map(|(x, v)| format!("u,{x},-1,{}", num(*v))));
    rows.extend(groups.v.iter().enumerate().map(|(y, v)| format!("v,-1,{y},{}", num(*v))));
    to_csv("kind,x,y,value", rows.into_iter())
}

pub fn matrix_to_csv(name: &str, m: &DMatrix<f64>, mask: Option<&DMatrix<bool>>) -> Vec<u8> {
    let mut rows = Vec::new();
    for x in 0..m.nrows() {
        for y in 0..m.ncols() {
            if mask.is_some_and(|f| f[(x, y)]) {
                continue;
            }
            rows.push(format!("{x},{y},{}", num(m[(x, y)])));
        }
    }
    to_csv(&format!("x,y,{name}"), rows.into_iter())
}

/// Support points: a `weight` column followed by one column per coordinate.
pub fn read_distribution(path: &Path) -> Result<crate::choice::DiscretizedDistribution> {
    let file = file_name(path);
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            file: file.clone(),
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if headers.get(0) != Some("weight") || headers.len() < 2 {
        return Err(Error::Parse {
            file,
            line: 1,
            reason: "missing header: expected weight,e0,e1,...".into(),
        });
    }
    let dim = headers.len() - 1;
    let mut weights = Vec::new();
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            file: file.clone(),
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.parse::<f64>()).collect();
        let vals = vals.map_err(|_| Error::Parse {
            file: file.clone(),
            line,
            reason: "non-numeric entry".into(),
        })?;
        weights.push(vals[0]);
        data.extend_from_slice(&vals[1..]);
    }
    let k = weights.len();
    let support = DMatrix::from_row_slice(k, dim, &data);
    crate::choice::DiscretizedDistribution::new(support, weights)
}
