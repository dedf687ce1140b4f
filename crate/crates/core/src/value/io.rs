use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Provenance, ValueField};
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: u32,
    grid: SpaceTimeGrid,
    problem_hash: String,
    provenance: Provenance,
    controls: Vec<Vec<f64>>,
    has_argmin: bool,
}

/// Writes `<stem>.csv` (rows `t, x…, W, argmin_u…`) and `<stem>.json`.
/// Returns both paths.
pub fn write_field(field: &ValueField, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let n = field.grid.space.dim();
    let k = field.control_points.first().map_or(0, |p| p.len());
    let has_argmin = field.argmin.is_some();

    let mut w = BufWriter::new(fs::File::create(&csv_path)?);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|a| format!("x{a}")));
    header.push("W".into());
    if has_argmin {
        header.extend((1..=k).map(|j| format!("argmin_u{j}")));
    }
    writeln!(w, "{}", header.join(","))?;
    let mut x = vec![0.0; n];
    for i in 0..=field.steps() {
        let t = field.grid.time.t(i);
        for node in 0..field.nodes() {
            field.grid.space.point(node, &mut x);
            let mut row = format!("{t}");
            for v in &x {
                row.push_str(&format!(",{v}"));
            }
            row.push_str(&format!(",{}", field.at(i, node)));
            if has_argmin {
                match field.argmin_at(i.min(field.steps().saturating_sub(1)), node) {
                    Some(a) if i < field.steps() => {
                        for v in &field.control_points[a] {
                            row.push_str(&format!(",{v}"));
                        }
                    }
                    _ => row.push_str(&",".repeat(k)),
                }
            }
            writeln!(w, "{row}")?;
        }
    }
    w.flush()?;
    let head = Header {
        schema: 1,
        grid: field.grid.clone(),
        problem_hash: field.problem_hash.clone(),
        provenance: field.provenance,
        controls: field.control_points.clone(),
        has_argmin,
    };
    fs::write(&json_path, serde_json::to_string_pretty(&head)? + "\n")?;
    Ok((csv_path, json_path))
}

/// Reads a field written by [`write_field`] or by an external tool using
/// the same format.
pub fn read_field(csv_path: &Path, json_path: &Path) -> Result<ValueField> {
    let head: Header = serde_json::from_str(&fs::read_to_string(json_path)?)?;
    if head.schema != 1 {
        return Err(Error::Config(format!("unsupported field schema {}", head.schema)));
    }
    let grid = head.grid;
    let n = grid.space.dim();
    let k = head.controls.first().map_or(0, |p| p.len());
    let nodes = grid.space.len();
    let steps = grid.time.steps;
    let mut values = Vec::with_capacity((steps + 1) * nodes);
    let mut argmin = if head.has_argmin {
        Some(Vec::with_capacity(steps * nodes))
    } else {
        None
    };
    let reader = BufReader::new(fs::File::open(csv_path)?);
    let bad = |line: usize, what: &str| Error::Config(format!("{}: line {line}: {what}", csv_path.display()));
    let mut expected_cols = n + 2;
    if head.has_argmin {
        expected_cols += k;
    }
    let mut x = vec![0.0; n];
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        if ln == 0 {
            continue;
        }
        let row = values.len();
        if row >= (steps + 1) * nodes {
            return Err(bad(ln + 1, "more rows than the grid holds"));
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != expected_cols {
            return Err(bad(ln + 1, &format!("expected {expected_cols} columns, found {}", cols.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(ln + 1, &format!("bad number `{s}`")));
        let (i, node) = (row / nodes, row % nodes);
        grid.space.point(node, &mut x);
        let t = num(cols[0])?;
        let tol = 1e-9 * (1.0 + t.abs());
        if (t - grid.time.t(i)).abs() > tol
            || x.iter().enumerate().any(|(a, v)| {
                num(cols[1 + a]).map_or(true, |c| (c - v).abs() > 1e-9 * (1.0 + v.abs()))
            })
        {
            return Err(bad(ln + 1, "coordinates do not match the grid order"));
        }
        let w = num(cols[n + 1])?;
        if !w.is_finite() {
            return Err(bad(ln + 1, "non-finite W"));
        }
        values.push(w);
        if let Some(a) = argmin.as_mut() {
            if i < steps {
                let u: Vec<f64> = cols[n + 2..].iter().map(|s| num(s)).collect::<Result<_>>()?;
                let idx = head
                    .controls
                    .iter()
                    .position(|p| *p == u)
                    .ok_or_else(|| bad(ln + 1, "argmin is not a listed control"))?;
                a.push(idx as u32);
            }
        }
    }
    if values.len() != (steps + 1) * nodes {
        return Err(Error::Config(format!(
            "{}: {} rows for a grid of {}",
            csv_path.display(),
            values.len(),
            (steps + 1) * nodes
        )));
    }
    Ok(ValueField {
        grid,
        values,
        argmin,
        control_points: head.controls,
        problem_hash: head.problem_hash,
        provenance: head.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{SpatialGrid, TimeGrid};

    #[test]
    fn round_trip_is_exact() {
        let grid = SpaceTimeGrid::new(
            TimeGrid::new(0.0, 0.3, 3).unwrap(),
            SpatialGrid::new(vec![-1.0, 0.0], vec![1.0, 1.0], vec![3, 4]).unwrap(),
        );
        let mut f = ValueField::from_fn(grid, |t, x| (x[0] + 0.1).sin() * x[1].exp() + t / 3.0);
        f.control_points = vec![vec![-1.0], vec![0.5]];
        f.argmin = Some((0..3 * 12).map(|i| (i % 2) as u32).collect());
        f.problem_hash = "abc".into();
        let dir = tempfile::tempdir().unwrap();
        let (c, j) = write_field(&f, dir.path(), "w").unwrap();
        let g = read_field(&c, &j).unwrap();
        assert_eq!(f, g);
    }
}
