//! Plain-text field and mesh files.
//!
//! Field file: one line per dof, `x y value`, whitespace-separated with `.`
//! as the decimal separator. Vector fields carry two value columns. The mesh
//! file lists counts, vertices and triangles. All floats are written with 17
//! significant digits so files round-trip exactly.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{FemError, FnSpace, Mesh};

pub fn write_field(path: &Path, space: &FnSpace, field: &[f64]) -> Result<(), FemError> {
    if field.len() != space.ndof() {
        return Err(FemError::FieldLengthMismatch { expected: space.ndof(), got: field.len() });
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (p, v) in space.dof_coords().iter().zip(field) {
        writeln!(f, "{:.17e} {:.17e} {:.17e}", p[0], p[1], v)?;
    }
    Ok(())
}

pub fn write_vector_field(
    path: &Path,
    space: &FnSpace,
    vx: &[f64],
    vy: &[f64],
) -> Result<(), FemError> {
    if vx.len() != space.ndof() || vy.len() != space.ndof() {
        return Err(FemError::FieldLengthMismatch { expected: space.ndof(), got: vx.len() });
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, p) in space.dof_coords().iter().enumerate() {
        writeln!(f, "{:.17e} {:.17e} {:.17e} {:.17e}", p[0], p[1], vx[i], vy[i])?;
    }
    Ok(())
}

fn parse_line(path: &Path, lineno: usize, line: &str, want: usize) -> Result<Vec<f64>, FemError> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != want {
        return Err(FemError::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: format!("expected {want} columns, found {}", parts.len()),
        });
    }
    parts
        .iter()
        .map(|s| {
            s.parse::<f64>().map_err(|e| FemError::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("bad float {s:?}: {e}"),
            })
        })
        .collect()
}

/// Read a scalar field for `space`, checking the dof count.
pub fn read_field(path: &Path, space: &FnSpace) -> Result<Vec<f64>, FemError> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut values = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols = parse_line(path, i + 1, &line, 3)?;
        values.push(cols[2]);
    }
    if values.len() != space.ndof() {
        return Err(FemError::FieldLengthMismatch { expected: space.ndof(), got: values.len() });
    }
    Ok(values)
}

/// Read a two-component field for `space`, checking the dof count.
pub fn read_vector_field(path: &Path, space: &FnSpace) -> Result<(Vec<f64>, Vec<f64>), FemError> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut vx = Vec::new();
    let mut vy = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols = parse_line(path, i + 1, &line, 4)?;
        vx.push(cols[2]);
        vy.push(cols[3]);
    }
    if vx.len() != space.ndof() {
        return Err(FemError::FieldLengthMismatch { expected: space.ndof(), got: vx.len() });
    }
    Ok((vx, vy))
}

pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<(), FemError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{} {}", mesh.nvertices(), mesh.ntriangles())?;
    for i in 0..mesh.nvertices() {
        let p = mesh.vertex(i);
        writeln!(f, "{:.17e} {:.17e}", p[0], p[1])?;
    }
    for t in 0..mesh.ntriangles() {
        let tri = mesh.triangle(t);
        writeln!(f, "{} {} {}", tri[0], tri[1], tri[2])?;
    }
    Ok(())
}
