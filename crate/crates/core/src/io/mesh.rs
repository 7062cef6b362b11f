//! OBJ and PLY triangle meshes. Polygons are fan-triangulated on read;
//! PLY is read in ASCII or binary little-endian form and written as ASCII.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scaffold::TriMesh;

fn parse_err(what: &str, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse { what: what.to_string(), msg: format!("line {line}: {msg}") }
}

fn fan(poly: &[u32], faces: &mut Vec<[u32; 3]>) {
    for i in 1..poly.len().saturating_sub(1) {
        faces.push([poly[0], poly[i], poly[i + 1]]);
    }
}

pub fn parse_obj(text: &str) -> Result<TriMesh<f64>> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let no = no + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>().map_err(|e| parse_err("OBJ", no, e)))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(parse_err("OBJ", no, "vertex needs three coordinates"));
                }
                verts.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in it {
                    let idx: i64 = tok.split('/').next().unwrap_or("").parse().map_err(|e| parse_err("OBJ", no, e))?;
                    let resolved = match idx {
                        i if i > 0 => i - 1,
                        i if i < 0 => verts.len() as i64 + i,
                        _ => return Err(parse_err("OBJ", no, "face index 0 is invalid")),
                    };
                    if resolved < 0 || resolved >= verts.len() as i64 {
                        return Err(parse_err("OBJ", no, format!("face index {idx} out of range")));
                    }
                    poly.push(resolved as u32);
                }
                if poly.len() < 3 {
                    return Err(parse_err("OBJ", no, "face needs at least three vertices"));
                }
                fan(&poly, &mut faces);
            }
            _ => {}
        }
    }
    TriMesh::new(verts, faces)
}

pub fn format_obj(mesh: &TriMesh<f64>) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        writeln!(s, "v {} {} {}", v.x, v.y, v.z).expect("string write");
    }
    for f in &mesh.faces {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).expect("string write");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    /// `(name, scalar type, list count type)`.
    props: Vec<(String, String, Option<String>)>,
}

fn scalar_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "float" | "int32" | "uint32" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

fn read_scalar(bytes: &[u8], ty: &str) -> f64 {
    match ty {
        "char" | "int8" => bytes[0] as i8 as f64,
        "uchar" | "uint8" => bytes[0] as f64,
        "short" | "int16" => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
        "ushort" | "uint16" => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
        "int" | "int32" => i32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as f64,
        "uint" | "uint32" => u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as f64,
        "float" | "float32" => f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as f64,
        _ => f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")),
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<TriMesh<f64>> {
    let err = |msg: String| Error::Parse { what: "PLY".into(), msg };
    let end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| err("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| err("header is not text".into()))?;
    let mut body_start = end + 10;
    while body_start < bytes.len() && bytes[body_start] != b'\n' {
        body_start += 1;
    }
    body_start += 1;

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(err("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLe),
            ["format", other, ..] => return Err(err(format!("unsupported format '{other}'"))),
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count.parse().map_err(|_| err(format!("bad element count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", cnt, ty, name] => elements
                .last_mut()
                .ok_or_else(|| err("property before element".into()))?
                .props
                .push((name.to_string(), ty.to_string(), Some(cnt.to_string()))),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| err("property before element".into()))?
                .props
                .push((name.to_string(), ty.to_string(), None)),
            _ => {}
        }
    }
    let format = format.ok_or_else(|| err("missing format line".into()))?;
    for e in &elements {
        for p in &e.props {
            if scalar_size(&p.1).is_none() || p.2.as_deref().is_some_and(|c| scalar_size(c).is_none()) {
                return Err(err(format!("unknown property type in element {}", e.name)));
            }
        }
    }

    let body = &bytes[body_start.min(bytes.len())..];
    let mut tokens = if format == PlyFormat::Ascii {
        Some(std::str::from_utf8(body).map_err(|_| err("ASCII body is not text".into()))?.split_whitespace())
    } else {
        None
    };
    let mut pos = 0usize;
    let mut next = |ty: &str| -> Result<f64> {
        match tokens.as_mut() {
            Some(t) => t
                .next()
                .ok_or_else(|| err("body ends early".into()))?
                .parse::<f64>()
                .map_err(|e| err(e.to_string())),
            None => {
                let n = scalar_size(ty).expect("checked");
                let b = body.get(pos..pos + n).ok_or_else(|| err("body ends early".into()))?;
                pos += n;
                Ok(read_scalar(b, ty))
            }
        }
    };

    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for e in &elements {
        for _ in 0..e.count {
            let mut xyz = [0.0; 3];
            for (name, ty, list) in &e.props {
                if let Some(cnt_ty) = list {
                    let n = next(cnt_ty)? as usize;
                    let idx = (0..n).map(|_| next(ty)).collect::<Result<Vec<f64>>>()?;
                    if e.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                        if n < 3 {
                            return Err(err("face needs at least three vertices".into()));
                        }
                        let poly: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
                        fan(&poly, &mut faces);
                    }
                } else {
                    let v = next(ty)?;
                    if e.name == "vertex" {
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                }
            }
            if e.name == "vertex" {
                verts.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    TriMesh::new(verts, faces)
}

pub fn format_ply(mesh: &TriMesh<f64>) -> String {
    let mut s = String::new();
    writeln!(s, "ply\nformat ascii 1.0\nelement vertex {}", mesh.vertices.len()).expect("string write");
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    writeln!(s, "element face {}\nproperty list uchar int vertex_indices\nend_header", mesh.faces.len()).expect("string write");
    for v in &mesh.vertices {
        writeln!(s, "{} {} {}", v.x, v.y, v.z).expect("string write");
    }
    for f in &mesh.faces {
        writeln!(s, "3 {} {} {}", f[0], f[1], f[2]).expect("string write");
    }
    s
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Read an `.obj` or `.ply` mesh, chosen by extension.
pub fn read_mesh(path: &Path) -> Result<TriMesh<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match extension(path).as_str() {
        "obj" => parse_obj(&String::from_utf8_lossy(&bytes)),
        "ply" => parse_ply(&bytes),
        other => Err(Error::InvalidArgument(format!("unsupported mesh extension '{other}' (use .obj or .ply)"))),
    }
}

pub fn write_mesh(path: &Path, mesh: &TriMesh<f64>) -> Result<()> {
    let text = match extension(path).as_str() {
        "obj" => format_obj(mesh),
        "ply" => format_ply(mesh),
        other => return Err(Error::InvalidArgument(format!("unsupported mesh extension '{other}' (use .obj or .ply)"))),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
