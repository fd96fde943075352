//! Mesh file I/O: OBJ / PLY / STL readers, OBJ and PLY-channel writers.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Point3;

use super::{Channel, TriMesh};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
    Stl,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::Ply),
            "stl" => Some(MeshFormat::Stl),
            _ => None,
        }
    }
}

/// Loads a triangle mesh and validates it for the pipeline: manifold,
/// genus 0 and at least one boundary loop. Polygons are fan-triangulated.
pub fn load_mesh(path: &Path, format: Option<MeshFormat>) -> Result<TriMesh> {
    let format = format
        .or_else(|| MeshFormat::from_path(path))
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            msg: "unknown mesh format (expected .obj, .ply or .stl)".into(),
        })?;
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (vertices, faces) = match format {
        MeshFormat::Obj => parse_obj(&bytes, path)?,
        MeshFormat::Ply => parse_ply(&bytes, path)?,
        MeshFormat::Stl => parse_stl(&bytes, path)?,
    };
    let mesh = TriMesh::new(vertices, faces)?;
    if mesh.boundary_loops().is_empty() {
        return Err(Error::Topology(
            "genus/boundary requirements violated: surface is closed (no boundary loop)".into(),
        ));
    }
    Ok(mesh)
}

fn parse_err(path: &Path, lineno: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: format!("line {}: {msg}", lineno + 1),
    }
}

fn parse_obj(bytes: &[u8], path: &Path) -> Result<(Vec<Point3<f64>>, Vec<[u32; 3]>)> {
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let reader = BufReader::new(bytes);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coord = [0.0f64; 3];
                for c in &mut coord {
                    *c = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(path, lineno, "bad vertex line"))?;
                }
                vertices.push(Point3::new(coord[0], coord[1], coord[2]));
            }
            Some("f") => {
                let mut idx: Vec<u32> = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let raw: i64 = first
                        .parse()
                        .map_err(|_| parse_err(path, lineno, "bad face index"))?;
                    let resolved = if raw > 0 {
                        raw - 1
                    } else {
                        vertices.len() as i64 + raw
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(parse_err(path, lineno, "face index out of range"));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, lineno, "face with fewer than 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

#[derive(Clone, Copy)]
enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => PlyScalar::I8,
            "uchar" | "uint8" => PlyScalar::U8,
            "short" | "int16" => PlyScalar::I16,
            "ushort" | "uint16" => PlyScalar::U16,
            "int" | "int32" => PlyScalar::I32,
            "uint" | "uint32" => PlyScalar::U32,
            "float" | "float32" => PlyScalar::F32,
            "double" | "float64" => PlyScalar::F64,
        _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyScalar::I8 | PlyScalar::U8 => 1,
            PlyScalar::I16 | PlyScalar::U16 => 2,
            PlyScalar::I32 | PlyScalar::U32 | PlyScalar::F32 => 4,
            PlyScalar::F64 => 8,
        }
    }

    fn read(self, bytes: &[u8], big_endian: bool) -> f64 {
        macro_rules! rd {
            ($t:ty) => {{
                let arr: [u8; std::mem::size_of::<$t>()] =
                    bytes[..std::mem::size_of::<$t>()].try_into().unwrap();
                if big_endian {
                    <$t>::from_be_bytes(arr) as f64
                } else {
                    <$t>::from_le_bytes(arr) as f64
                }
            }};
        }
        match self {
            PlyScalar::I8 => bytes[0] as i8 as f64,
            PlyScalar::U8 => bytes[0] as f64,
            PlyScalar::I16 => rd!(i16),
            PlyScalar::U16 => rd!(u16),
            PlyScalar::I32 => rd!(i32),
            PlyScalar::U32 => rd!(u32),
            PlyScalar::F32 => rd!(f32),
            PlyScalar::F64 => rd!(f64),
        }
    }
}

enum PlyProp {
    Scalar(PlyScalar, String),
    List(PlyScalar, PlyScalar, String),
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProp>,
}

fn parse_ply(bytes: &[u8], path: &Path) -> Result<(Vec<Point3<f64>>, Vec<[u32; 3]>)> {
    let err = |msg: &str| Error::Parse { path: path.to_path_buf(), msg: msg.into() };
    // Header is ASCII lines terminated by "end_header".
    let mut pos = 0usize;
    let mut next_line = || -> Result<String> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::Parse { path: path.to_path_buf(), msg: "truncated header".into() });
        }
        let line = String::from_utf8_lossy(&bytes[start..pos]).trim().to_string();
        pos += 1;
        Ok(line)
    };

    if next_line()? != "ply" {
        return Err(err("missing ply magic"));
    }
    let mut ascii = true;
    let mut big_endian = false;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let line = next_line()?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("format") => match it.next() {
                Some("ascii") => ascii = true,
                Some("binary_little_endian") => ascii = false,
                Some("binary_big_endian") => {
                    ascii = false;
                    big_endian = true;
                }
                _ => return Err(err("unknown ply format")),
            },
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = it.next().ok_or_else(|| err("element without name"))?.to_string();
                let count: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err("element without count"))?;
                elements.push(PlyElement { name, count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| err("property before element"))?;
                let kind = it.next().ok_or_else(|| err("property without type"))?;
                if kind == "list" {
                    let ct = PlyScalar::parse(it.next().unwrap_or(""))
                        .ok_or_else(|| err("bad list count type"))?;
                    let vt = PlyScalar::parse(it.next().unwrap_or(""))
                        .ok_or_else(|| err("bad list value type"))?;
                    let name = it.next().unwrap_or("").to_string();
                    el.props.push(PlyProp::List(ct, vt, name));
                } else {
                    let st = PlyScalar::parse(kind).ok_or_else(|| err("bad property type"))?;
                    let name = it.next().unwrap_or("").to_string();
                    el.props.push(PlyProp::Scalar(st, name));
                }
            }
            Some("end_header") => break,
            _ => return Err(err("unexpected header line")),
        }
    }

    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    if ascii {
        let body = String::from_utf8_lossy(&bytes[pos..]);
        let mut tokens = body.split_whitespace();
        let mut tok = |what: &str| -> Result<f64> {
            tokens
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    msg: format!("expected {what}"),
                })
        };
        for el in &elements {
            for _ in 0..el.count {
                let mut xyz = [f64::NAN; 3];
                let mut poly: Vec<u32> = Vec::new();
                for prop in &el.props {
                    match prop {
                        PlyProp::Scalar(_, name) => {
                            let v = tok("scalar")?;
                            match name.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                _ => {}
                            }
                        }
                        PlyProp::List(_, _, name) => {
                            let n = tok("list count")? as usize;
                            let mut idx = Vec::with_capacity(n);
                            for _ in 0..n {
                                idx.push(tok("list value")? as u32);
                            }
                            if name.starts_with("vertex_ind") || name.starts_with("vertex_index") {
                                poly = idx;
                            }
                        }
                    }
                }
                store_ply_row(el, &xyz, &poly, &mut vertices, &mut faces, path)?;
            }
        }
    } else {
        let mut cur = pos;
        for el in &elements {
            for _ in 0..el.count {
                let mut xyz = [f64::NAN; 3];
                let mut poly: Vec<u32> = Vec::new();
                for prop in &el.props {
                    match prop {
                        PlyProp::Scalar(st, name) => {
                            if cur + st.size() > bytes.len() {
                                return Err(err("truncated binary body"));
                            }
                            let v = st.read(&bytes[cur..], big_endian);
                            cur += st.size();
                            match name.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                _ => {}
                            }
                        }
                        PlyProp::List(ct, vt, name) => {
                            if cur + ct.size() > bytes.len() {
                                return Err(err("truncated binary body"));
                            }
                            let n = ct.read(&bytes[cur..], big_endian) as usize;
                            cur += ct.size();
                            let mut idx = Vec::with_capacity(n);
                            for _ in 0..n {
                                if cur + vt.size() > bytes.len() {
                                    return Err(err("truncated binary body"));
                                }
                                idx.push(vt.read(&bytes[cur..], big_endian) as u32);
                                cur += vt.size();
                            }
                            if name.starts_with("vertex_ind") || name.starts_with("vertex_index") {
                                poly = idx;
                            }
                        }
                    }
                }
                store_ply_row(el, &xyz, &poly, &mut vertices, &mut faces, path)?;
            }
        }
    }
    Ok((vertices, faces))
}

fn store_ply_row(
    el: &PlyElement,
    xyz: &[f64; 3],
    poly: &[u32],
    vertices: &mut Vec<Point3<f64>>,
    faces: &mut Vec<[u32; 3]>,
    path: &Path,
) -> Result<()> {
    if el.name == "vertex" {
        if xyz.iter().any(|c| c.is_nan()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                msg: "vertex element without x/y/z".into(),
            });
        }
        vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
    } else if el.name == "face" {
        if poly.len() < 3 {
            return Err(Error::Parse { path: path.to_path_buf(), msg: "face with < 3 indices".into() });
        }
        for k in 1..poly.len() - 1 {
            faces.push([poly[0], poly[k], poly[k + 1]]);
        }
    }
    Ok(())
}

fn parse_stl(bytes: &[u8], path: &Path) -> Result<(Vec<Point3<f64>>, Vec<[u32; 3]>)> {
    let looks_ascii = bytes.starts_with(b"solid")
        && std::str::from_utf8(&bytes[..bytes.len().min(512)])
            .map(|s| s.contains("facet"))
            .unwrap_or(false);
    let tris: Vec<[Point3<f64>; 3]> = if looks_ascii {
        parse_stl_ascii(bytes, path)?
    } else {
        parse_stl_binary(bytes, path)?
    };
    // Weld coincident vertices by exact bit pattern.
    let mut key_to_index: std::collections::HashMap<[u64; 3], u32> = std::collections::HashMap::new();
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for tri in tris {
        let mut f = [0u32; 3];
        for (k, p) in tri.iter().enumerate() {
            let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
            f[k] = *key_to_index.entry(key).or_insert_with(|| {
                vertices.push(*p);
                (vertices.len() - 1) as u32
            });
        }
        if f[0] != f[1] && f[1] != f[2] && f[0] != f[2] {
            faces.push(f);
        }
    }
    Ok((vertices, faces))
}

fn parse_stl_ascii(bytes: &[u8], path: &Path) -> Result<Vec<[Point3<f64>; 3]>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        msg: "ascii stl is not utf-8".into(),
    })?;
    let mut tris = Vec::new();
    let mut current: Vec<Point3<f64>> = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        if it.next() == Some("vertex") {
            let mut c = [0.0f64; 3];
            for v in &mut c {
                *v = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    msg: "bad stl vertex".into(),
                })?;
            }
            current.push(Point3::new(c[0], c[1], c[2]));
            if current.len() == 3 {
                tris.push([current[0], current[1], current[2]]);
                current.clear();
            }
        }
    }
    Ok(tris)
}

fn parse_stl_binary(bytes: &[u8], path: &Path) -> Result<Vec<[Point3<f64>; 3]>> {
    if bytes.len() < 84 {
        return Err(Error::Parse { path: path.to_path_buf(), msg: "stl too short".into() });
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let need = 84 + count * 50;
    if bytes.len() < need {
        return Err(Error::Parse { path: path.to_path_buf(), msg: "truncated binary stl".into() });
    }
    let mut tris = Vec::with_capacity(count);
    for t in 0..count {
        let base = 84 + t * 50 + 12; // skip the normal
        let mut tri = [Point3::origin(); 3];
        for (k, p) in tri.iter_mut().enumerate() {
            let off = base + k * 12;
            let x = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
            let y = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap()) as f64;
            let z = f32::from_le_bytes(bytes[off + 8..off + 12].try_into().unwrap()) as f64;
            *p = Point3::new(x, y, z);
        }
        tris.push(tri);
    }
    Ok(tris)
}

/// Writes the mesh as ASCII OBJ.
pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in mesh.vertices() {
        out.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
    }
    for f in mesh.faces() {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    write_file(path, out.as_bytes())
}

/// Writes a 2D channel as ASCII PLY (positions in x, y with z = 0) with an
/// optional per-vertex scalar field.
pub fn write_channel_ply(
    mesh: &TriMesh,
    channel: Channel,
    field: Option<&[f64]>,
    path: &Path,
) -> Result<()> {
    let pos = mesh.require_channel(channel)?;
    if let Some(f) = field {
        assert_eq!(f.len(), mesh.vertex_count());
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("comment channel {}\n", channel.name()));
    out.push_str(&format!("element vertex {}\n", mesh.vertex_count()));
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if field.is_some() {
        out.push_str("property double field\n");
    }
    out.push_str(&format!("element face {}\n", mesh.face_count()));
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, p) in pos.iter().enumerate() {
        match field {
            Some(f) => out.push_str(&format!("{} {} 0 {}\n", p.x, p.y, f[i])),
            None => out.push_str(&format!("{} {} 0\n", p.x, p.y)),
        }
    }
    for f in mesh.faces() {
        out.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    write_file(path, out.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[allow(dead_code)]
fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(buf)
}
