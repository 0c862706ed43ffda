//! CSV readers and writers for locations, datasets and predictions.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! value reads back bit-identically.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{Location, LocationSet};
use crate::kriging::KrigingOutput;

fn parse_rows(text: &str, expect: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < expect.len() || cols[..expect.len()] != *expect {
        return Err(Error::Parse(format!(
            "expected header starting with `{}`, got `{header}`",
            expect.join(",")
        )));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, got {}",
                    i + 2,
                    cols.len(),
                    fields.len()
                )));
            }
            fields[..expect.len()]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: `{f}`: {e}", i + 2)))
                })
                .collect()
        })
        .collect()
}

pub fn parse_locations(text: &str) -> Result<LocationSet> {
    let rows = parse_rows(text, &["x", "y"])?;
    LocationSet::explicit(rows.iter().map(|r| Location::new(r[0], r[1])).collect())
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let rows = parse_rows(text, &["x", "y", "z"])?;
    let locs = LocationSet::explicit(rows.iter().map(|r| Location::new(r[0], r[1])).collect())?;
    Dataset::new(locs, rows.iter().map(|r| r[2]).collect())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn read_locations(path: &Path) -> Result<LocationSet> {
    parse_locations(&fs::read_to_string(path)?)
}

pub fn format_locations(locs: &LocationSet) -> String {
    let mut s = String::from("x,y\n");
    for p in locs.iter() {
        s.push_str(&format!("{:?},{:?}\n", p.x, p.y));
    }
    s
}

pub fn format_dataset(data: &Dataset) -> String {
    let mut s = String::from("x,y,z\n");
    for (p, z) in data.locs.iter().zip(&data.values) {
        s.push_str(&format!("{:?},{:?},{:?}\n", p.x, p.y, z));
    }
    s
}

pub fn format_predictions(locs: &LocationSet, out: &KrigingOutput) -> String {
    let mut s = String::from("x,y,pred,mse\n");
    for (p, (pred, mse)) in locs.iter().zip(out.pred.iter().zip(&out.mse)) {
        s.push_str(&format!("{:?},{:?},{:?},{:?}\n", p.x, p.y, pred, mse));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
