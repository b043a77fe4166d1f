//! Wavefront OBJ subset: `v` (optionally with RGB), `f` with any of the
//! `i`, `i/t`, `i/t/n`, `i//n` forms, negative (relative) indices, polygon
//! faces fan-triangulated. Texture, normal, grouping and material statements
//! are skipped.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::transform::Vec3;

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::parse(format!("line {line}"), msg)
}

fn parse_f64(tok: Option<&str>, line: usize, what: &str) -> Result<f64> {
    let tok = tok.ok_or_else(|| err(line, format!("missing {what}")))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| err(line, format!("invalid number {tok:?} for {what}")))?;
    if !v.is_finite() {
        return Err(err(line, format!("non-finite {what}")));
    }
    Ok(v)
}

fn resolve_index(tok: &str, n_vertices: usize, line: usize) -> Result<u32> {
    let head = tok.split('/').next().unwrap_or("");
    let idx: i64 = head
        .parse()
        .map_err(|_| err(line, format!("invalid face index {tok:?}")))?;
    let resolved = if idx > 0 {
        idx - 1
    } else if idx < 0 {
        n_vertices as i64 + idx
    } else {
        return Err(err(line, "face index 0 is not valid"));
    };
    if resolved < 0 || resolved >= n_vertices as i64 {
        return Err(err(line, format!("face index {idx} out of range ({n_vertices} vertices)")));
    }
    Ok(resolved as u32)
}

pub fn parse_obj(bytes: &[u8]) -> Result<TriMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        Error::parse(format!("byte {}", e.valid_up_to()), "OBJ file is not valid UTF-8")
    })?;
    let mut vertices = Vec::new();
    let mut colors: Vec<[f32; 3]> = Vec::new();
    let mut any_color = false;
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), line_no, "x")?;
                let y = parse_f64(toks.next(), line_no, "y")?;
                let z = parse_f64(toks.next(), line_no, "z")?;
                vertices.push(Vec3::new(x, y, z));
                let rest: Vec<&str> = toks.collect();
                match rest.len() {
                    0 | 1 => colors.push([0.0; 3]),
                    3 | 4 => {
                        let mut c = [0.0f32; 3];
                        for (k, t) in rest.iter().take(3).enumerate() {
                            c[k] = parse_f64(Some(t), line_no, "color")? as f32;
                        }
                        any_color = true;
                        colors.push(c);
                    }
                    _ => return Err(err(line_no, "unexpected vertex fields")),
                }
            }
            Some("f") => {
                let idx: Vec<u32> = toks
                    .map(|t| resolve_index(t, vertices.len(), line_no))
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err(line_no, format!("face has {} vertices, need at least 3", idx.len())));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            Some("vt" | "vn" | "vp" | "o" | "g" | "s" | "usemtl" | "mtllib" | "l" | "p") => {}
            Some(other) => return Err(err(line_no, format!("unknown statement {other:?}"))),
            None => {}
        }
    }
    let mesh = TriMesh {
        vertices,
        triangles,
        colors: any_color.then_some(colors),
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Writes vertices with shortest round-trip float formatting.
pub fn write_obj(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 48 + mesh.triangles.len() * 24);
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let c = c[i];
                writeln!(s, "v {:?} {:?} {:?} {:?} {:?} {:?}", v.x, v.y, v.z, c[0], c[1], c[2]).unwrap()
            }
            None => writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z).unwrap(),
        }
    }
    for t in &mesh.triangles {
        writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    s
}
