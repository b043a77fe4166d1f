//! PLY reader/writer for `ascii` and `binary_little_endian` encodings.
//!
//! Vertices need `x`, `y`, `z`; `red`/`green`/`blue` are read when present.
//! Faces come from a list property named `vertex_indices` or `vertex_index`
//! and are fan-triangulated. Unknown elements and properties are skipped.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::transform::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn header_err(line: usize, msg: impl Into<String>) -> Error {
    Error::parse(format!("header line {line}"), msg)
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| header_err(line_no + 1, "unterminated header"))?;
        let raw = &bytes[pos..pos + end];
        pos += end + 1;
        line_no += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| header_err(line_no, "header is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        let mut toks = line.split_whitespace();
        let kw = toks.next().unwrap_or("");
        if line_no == 1 {
            if line != "ply" {
                return Err(header_err(1, "missing `ply` magic"));
            }
            continue;
        }
        match kw {
            "format" => {
                encoding = Some(match toks.next() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLe,
                    Some(other) => {
                        return Err(header_err(line_no, format!("unsupported encoding {other:?}")))
                    }
                    None => return Err(header_err(line_no, "format without encoding")),
                });
            }
            "element" => {
                let name = toks
                    .next()
                    .ok_or_else(|| header_err(line_no, "element without name"))?;
                let count: usize = toks
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| header_err(line_no, "element without valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                let ty = toks.next().unwrap_or("");
                let prop = if ty == "list" {
                    let count = toks.next().and_then(Scalar::parse);
                    let item = toks.next().and_then(Scalar::parse);
                    let name = toks.next();
                    match (count, item, name) {
                        (Some(count), Some(item), Some(name)) if count.is_integer() => Property::List {
                            name: name.to_string(),
                            count,
                            item,
                        },
                        _ => return Err(header_err(line_no, "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty)
                        .ok_or_else(|| header_err(line_no, format!("unknown property type {ty:?}")))?;
                    let name = toks
                        .next()
                        .ok_or_else(|| header_err(line_no, "property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                el.properties.push(prop);
            }
            "comment" | "obj_info" | "" => {}
            "end_header" => break,
            other => return Err(header_err(line_no, format!("unknown header keyword {other:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| header_err(line_no, "missing format line"))?;
    Ok(Header {
        encoding,
        elements,
        body_offset: pos,
    })
}

/// Sequential reader over the body producing f64 values.
trait ValueSource {
    fn read(&mut self, ty: Scalar) -> Result<f64>;
    fn end_record(&mut self) -> Result<()>;
}

struct BinarySource<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ValueSource for BinarySource<'_> {
    fn read(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        let Some(chunk) = self.bytes.get(self.pos..self.pos + n) else {
            return Err(Error::parse(format!("byte {}", self.pos), "unexpected end of binary body"));
        };
        self.pos += n;
        Ok(match ty {
            Scalar::I8 => chunk[0] as i8 as f64,
            Scalar::U8 => chunk[0] as f64,
            Scalar::I16 => i16::from_le_bytes([chunk[0], chunk[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([chunk[0], chunk[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(chunk.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(chunk.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(chunk.try_into().unwrap()),
        })
    }

    fn end_record(&mut self) -> Result<()> {
        Ok(())
    }
}

struct AsciiSource<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_offset: usize,
    current: Option<(usize, std::str::SplitWhitespace<'a>)>,
}

impl AsciiSource<'_> {
    fn location(&self) -> String {
        match &self.current {
            Some((n, _)) => format!("line {}", n + 1 + self.line_offset),
            None => "end of file".to_string(),
        }
    }
}

impl ValueSource for AsciiSource<'_> {
    fn read(&mut self, ty: Scalar) -> Result<f64> {
        loop {
            if self.current.is_none() {
                match self.lines.next() {
                    Some((n, l)) if l.trim().is_empty() => {
                        let _ = n;
                        continue;
                    }
                    Some((n, l)) => self.current = Some((n, l.split_whitespace())),
                    None => return Err(Error::parse("end of file", "unexpected end of ascii body")),
                }
            }
            let loc = self.location();
            let (_, toks) = self.current.as_mut().unwrap();
            let Some(tok) = toks.next() else {
                return Err(Error::parse(loc, "record has too few values"));
            };
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(loc.clone(), format!("invalid number {tok:?}")))?;
            if ty.is_integer() && v.fract() != 0.0 {
                return Err(Error::parse(loc, format!("expected integer, got {tok:?}")));
            }
            return Ok(v);
        }
    }

    fn end_record(&mut self) -> Result<()> {
        let loc = self.location();
        if let Some((_, mut toks)) = self.current.take() {
            if toks.next().is_some() {
                return Err(Error::parse(loc, "record has extra values"));
            }
        }
        Ok(())
    }
}

fn read_body(header: &Header, src: &mut dyn ValueSource, body_len: usize) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut has_color = false;
    let mut triangles = Vec::new();
    for el in &header.elements {
        let idx = |n: &str| el.properties.iter().position(|p| p.name() == n);
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let (xi, yi, zi) = (idx("x"), idx("y"), idx("z"));
        let (ri, gi, bi) = (idx("red"), idx("green"), idx("blue"));
        let fi = idx("vertex_indices").or_else(|| idx("vertex_index"));
        if is_vertex {
            if xi.is_none() || yi.is_none() || zi.is_none() {
                return Err(Error::parse("header", "vertex element lacks x/y/z"));
            }
            has_color = ri.is_some() && gi.is_some() && bi.is_some();
            // Never trust the declared count for preallocation.
            vertices.reserve(el.count.min(body_len / 3 + 1));
        }
        let mut record = Vec::with_capacity(el.properties.len());
        let mut face = Vec::new();
        for _ in 0..el.count {
            record.clear();
            face.clear();
            for (pi, prop) in el.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => record.push(src.read(*ty)?),
                    Property::List { count, item, .. } => {
                        let n = src.read(*count)?;
                        if n < 0.0 {
                            return Err(Error::parse("body", "negative list length"));
                        }
                        let n = n as usize;
                        if n > body_len {
                            return Err(Error::parse("body", "list length exceeds file size"));
                        }
                        for _ in 0..n {
                            let v = src.read(*item)?;
                            if is_face && Some(pi) == fi {
                                face.push(v);
                            }
                        }
                        record.push(f64::NAN);
                    }
                }
            }
            src.end_record()?;
            if is_vertex {
                let v = Vec3::new(record[xi.unwrap()], record[yi.unwrap()], record[zi.unwrap()]);
                vertices.push(v);
                if has_color {
                    let scale = |i: usize| match &el.properties[i] {
                        Property::Scalar { ty, .. } if ty.is_integer() => 255.0,
                        _ => 1.0,
                    };
                    let (r, g, b) = (ri.unwrap(), gi.unwrap(), bi.unwrap());
                    colors.push([
                        (record[r] / scale(r)) as f32,
                        (record[g] / scale(g)) as f32,
                        (record[b] / scale(b)) as f32,
                    ]);
                }
            } else if is_face {
                if fi.is_none() {
                    return Err(Error::parse("header", "face element lacks vertex_indices"));
                }
                if face.len() < 3 {
                    return Err(Error::parse("body", format!("face with {} vertices", face.len())));
                }
                let ids: Vec<u32> = face
                    .iter()
                    .map(|&v| {
                        if v < 0.0 || v > u32::MAX as f64 {
                            Err(Error::parse("body", format!("invalid vertex index {v}")))
                        } else {
                            Ok(v as u32)
                        }
                    })
                    .collect::<Result<_>>()?;
                for k in 1..ids.len() - 1 {
                    triangles.push([ids[0], ids[k], ids[k + 1]]);
                }
            }
        }
    }
    let mesh = TriMesh {
        vertices,
        triangles,
        colors: has_color.then_some(colors),
    };
    mesh.validate()?;
    Ok(mesh)
}

pub fn parse_ply(bytes: &[u8]) -> Result<TriMesh> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body_offset..];
    match header.encoding {
        Encoding::BinaryLe => {
            let mut src = BinarySource { bytes: body, pos: 0 };
            let mesh = read_body(&header, &mut src, body.len())?;
            if src.pos != body.len() {
                return Err(Error::parse(
                    format!("byte {}", header.body_offset + src.pos),
                    "trailing data after last element",
                ));
            }
            Ok(mesh)
        }
        Encoding::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::parse("body", "ascii body is not valid UTF-8"))?;
            let header_lines = bytes[..header.body_offset].iter().filter(|&&b| b == b'\n').count();
            let mut src = AsciiSource {
                lines: text.lines().enumerate(),
                line_offset: header_lines,
                current: None,
            };
            let mesh = read_body(&header, &mut src, body.len())?;
            if src.lines.any(|(_, l)| !l.trim().is_empty()) {
                return Err(Error::parse("body", "trailing data after last element"));
            }
            Ok(mesh)
        }
    }
}

fn write_header(s: &mut String, mesh: &TriMesh, encoding: &str) {
    writeln!(s, "ply\nformat {encoding} 1.0\ncomment boneforge").unwrap();
    writeln!(s, "element vertex {}", mesh.vertices.len()).unwrap();
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if mesh.colors.is_some() {
        s.push_str("property float red\nproperty float green\nproperty float blue\n");
    }
    writeln!(s, "element face {}", mesh.triangles.len()).unwrap();
    s.push_str("property list uchar uint vertex_indices\nend_header\n");
}

pub fn write_ply_ascii(mesh: &TriMesh) -> String {
    let mut s = String::new();
    write_header(&mut s, mesh, "ascii");
    for (i, v) in mesh.vertices.iter().enumerate() {
        write!(s, "{:?} {:?} {:?}", v.x, v.y, v.z).unwrap();
        if let Some(c) = &mesh.colors {
            write!(s, " {:?} {:?} {:?}", c[i][0], c[i][1], c[i][2]).unwrap();
        }
        s.push('\n');
    }
    for t in &mesh.triangles {
        writeln!(s, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    s
}

/// Binary little-endian with double-precision coordinates, so floats round-trip bit-exactly.
pub fn write_ply_binary(mesh: &TriMesh) -> Vec<u8> {
    let mut header = String::new();
    write_header(&mut header, mesh, "binary_little_endian");
    let mut out = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if let Some(col) = &mesh.colors {
            for c in col[i] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for k in t {
            out.extend_from_slice(&k.to_le_bytes());
        }
    }
    out
}
