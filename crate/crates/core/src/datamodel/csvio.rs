//! CSV ingestion and emission.
//!
//! Population files: `id,w0_1..w0_k,w1_1..w1_m,y,r1,r2,pilot` with optional
//! trailing `lambda1`, `lambda2` columns. External-sample files:
//! `id,w0_1..w0_k,samp_prob`. Missing values are empty cells. Floats are
//! written with 17 significant digits so values round-trip exactly.

use std::path::Path;

use super::{ExternalRecord, Individual, PopulationFrame, W0Source};
use crate::{Error, Result};

/// Reading options for population files.
#[derive(Debug, Clone, Default)]
pub struct FrameSchema {
    /// Target population size when the file holds only part of the
    /// population (e.g. only the EHR rows). Defaults to the row count.
    pub population_size: Option<usize>,
}

pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

struct Layout {
    m: usize,
    y: usize,
    r1: usize,
    r2: usize,
    pilot: usize,
    lambda1: Option<usize>,
    lambda2: Option<usize>,
}

fn numbered_columns(header: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut cols = Vec::new();
    for j in 1.. {
        match header.iter().position(|h| h == format!("{prefix}_{j}")) {
            Some(pos) => cols.push(pos),
            None => break,
        }
    }
    Ok(cols)
}

fn layout(header: &csv::StringRecord) -> Result<(Layout, Vec<usize>, Vec<usize>)> {
    let find = |name: &str| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    find("id")?;
    let w0 = numbered_columns(header, "w0")?;
    if w0.is_empty() {
        return Err(Error::Schema("missing required column `w0_1`".into()));
    }
    let w1 = numbered_columns(header, "w1")?;
    let l = Layout {
        m: w1.len(),
        y: find("y")?,
        r1: find("r1")?,
        r2: find("r2")?,
        pilot: find("pilot")?,
        lambda1: header.iter().position(|h| h == "lambda1"),
        lambda2: header.iter().position(|h| h == "lambda2"),
    };
    Ok((l, w0, w1))
}

fn parse_f64(cell: &str, row: usize, col: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| Error::Row { row, message: format!("column `{col}`: non-numeric value `{cell}`") })
}

fn parse_opt(cell: &str, row: usize, col: &str) -> Result<Option<f64>> {
    if cell.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(cell, row, col).map(Some)
    }
}

fn parse_flag(cell: &str, row: usize, col: &str) -> Result<bool> {
    match cell.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Row { row, message: format!("column `{col}`: expected 0 or 1, got `{other}`") }),
    }
}

fn check_probability(p: Option<f64>, row: usize, col: &str) -> Result<()> {
    if let Some(p) = p {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Row { row, message: format!("column `{col}`: probability {p} outside (0, 1]") });
        }
    }
    Ok(())
}

/// Reads and validates a population frame. Rows are numbered from 1
/// (the first data row) in error messages.
pub fn read_frame(path: impl AsRef<Path>, schema: &FrameSchema) -> Result<PopulationFrame> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    let (l, w0_cols, w1_cols) = layout(&header)?;
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec?;
        let id = rec[0].trim().parse::<u64>().map_err(|_| Error::Row {
            row,
            message: format!("column `id`: not a non-negative integer: `{}`", &rec[0]),
        })?;
        let w0 = w0_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_f64(&rec[c], row, &format!("w0_{}", j + 1)))
            .collect::<Result<Vec<_>>>()?;
        let w1_cells = w1_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_opt(&rec[c], row, &format!("w1_{}", j + 1)))
            .collect::<Result<Vec<_>>>()?;
        let w1 = if l.m > 0 && w1_cells.iter().all(Option::is_some) {
            Some(w1_cells.iter().map(|x| x.unwrap()).collect())
        } else if w1_cells.iter().any(Option::is_some) {
            return Err(Error::Row { row, message: "partially missing w1".into() });
        } else {
            None
        };
        let lambda1 = l.lambda1.map(|c| parse_opt(&rec[c], row, "lambda1")).transpose()?.flatten();
        let lambda2 = l.lambda2.map(|c| parse_opt(&rec[c], row, "lambda2")).transpose()?.flatten();
        check_probability(lambda1, row, "lambda1")?;
        check_probability(lambda2, row, "lambda2")?;
        let ind = Individual {
            id,
            w0,
            w1,
            y: parse_opt(&rec[l.y], row, "y")?,
            r1: parse_flag(&rec[l.r1], row, "r1")?,
            r2: parse_flag(&rec[l.r2], row, "r2")?,
            pilot: parse_flag(&rec[l.pilot], row, "pilot")?,
            lambda1,
            lambda2,
        };
        ind.validate().map_err(|message| Error::Row { row, message })?;
        rows.push(ind);
    }
    let n = schema.population_size.unwrap_or(rows.len());
    PopulationFrame::new(rows, n)
}

pub fn write_frame(path: impl AsRef<Path>, frame: &PopulationFrame) -> Result<()> {
    let k = frame.w0_dim();
    let m = frame.w1_dim();
    let with_l1 = frame.individuals().iter().any(|i| i.lambda1.is_some());
    let with_l2 = frame.individuals().iter().any(|i| i.lambda2.is_some());
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((1..=k).map(|j| format!("w0_{j}")));
    header.extend((1..=m).map(|j| format!("w1_{j}")));
    header.extend(["y", "r1", "r2", "pilot"].map(String::from));
    if with_l1 {
        header.push("lambda1".into());
    }
    if with_l2 {
        header.push("lambda2".into());
    }
    wtr.write_record(&header)?;
    for ind in frame.individuals() {
        let mut rec = vec![ind.id.to_string()];
        rec.extend(ind.w0.iter().map(|&x| format_f64(x)));
        match &ind.w1 {
            Some(w1) => rec.extend(w1.iter().map(|&x| format_f64(x))),
            None => rec.extend(std::iter::repeat_n(String::new(), m)),
        }
        rec.push(opt_cell(ind.y));
        for flag in [ind.r1, ind.r2, ind.pilot] {
            rec.push(if flag { "1" } else { "0" }.into());
        }
        if with_l1 {
            rec.push(opt_cell(ind.lambda1));
        }
        if with_l2 {
            rec.push(opt_cell(ind.lambda2));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads an external probability sample into a [`W0Source`].
pub fn read_external(path: impl AsRef<Path>) -> Result<W0Source> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    if !header.iter().any(|h| h == "id") {
        return Err(Error::Schema("missing required column `id`".into()));
    }
    let w0_cols = numbered_columns(&header, "w0")?;
    if w0_cols.is_empty() {
        return Err(Error::Schema("missing required column `w0_1`".into()));
    }
    let p_col = header
        .iter()
        .position(|h| h == "samp_prob")
        .ok_or_else(|| Error::Schema("missing required column `samp_prob`".into()))?;
    let mut records = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec?;
        let id = rec[0].trim().parse::<u64>().map_err(|_| Error::Row {
            row,
            message: format!("column `id`: not a non-negative integer: `{}`", &rec[0]),
        })?;
        let w0 = w0_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_f64(&rec[c], row, &format!("w0_{}", j + 1)))
            .collect::<Result<Vec<_>>>()?;
        let samp_prob = parse_f64(&rec[p_col], row, "samp_prob")?;
        check_probability(Some(samp_prob), row, "samp_prob")?;
        records.push(ExternalRecord { id, w0, samp_prob });
    }
    let src = W0Source::ExternalProbabilitySample { records };
    src.validate()?;
    Ok(src)
}

pub fn write_external(path: impl AsRef<Path>, records: &[ExternalRecord]) -> Result<()> {
    let k = records.first().map_or(0, |r| r.w0.len());
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((1..=k).map(|j| format!("w0_{j}")));
    header.push("samp_prob".into());
    wtr.write_record(&header)?;
    for r in records {
        let mut rec = vec![r.id.to_string()];
        rec.extend(r.w0.iter().map(|&x| format_f64(x)));
        rec.push(format_f64(r.samp_prob));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
