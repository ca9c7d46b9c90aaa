//! Mesh and landmark file IO.
//!
//! Supported formats, selected by extension:
//! - `.txt` — whitespace-separated `x y z` rows, vertices only,
//! - `.obj` — `v`/`f` lines only,
//! - `.ply` — ascii or binary little-endian, with an optional per-vertex
//!   `error_mm` scalar,
//! - `.lmks` — `id x y z` landmark rows.
//!
//! Parsers reject NaN/Inf and out-of-range face indices, reporting the
//! offending row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::mesh::{LandmarkSet, Mesh, PerVertexError};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, row: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        reason: reason.into(),
    }
}

fn parse_coord(path: &Path, row: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, row, format!("not a number: '{tok}'")))?;
    if !v.is_finite() {
        return Err(parse_err(path, row, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

/// Loads a mesh from `.txt`, `.obj` or `.ply`, selected by extension.
/// The mesh label is the file stem.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let label = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("mesh")
        .to_string();
    match ext.as_str() {
        "txt" => load_txt(path, &label),
        "obj" => load_obj(path, &label),
        "ply" => load_ply(path, &label).map(|(m, _)| m),
        other => Err(Error::Config(format!(
            "unsupported mesh extension '.{other}' for {}",
            path.display()
        ))),
    }
}

fn load_txt(path: &Path, label: &str) -> Result<Mesh> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut vertices = Vec::new();
    for (row, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut coords = [0.0; 3];
        for c in &mut coords {
            let tok = it
                .next()
                .ok_or_else(|| parse_err(path, row + 1, "expected 3 coordinates"))?;
            *c = parse_coord(path, row + 1, tok)?;
        }
        if it.next().is_some() {
            return Err(parse_err(path, row + 1, "expected exactly 3 coordinates"));
        }
        vertices.push(Point3::new(coords[0], coords[1], coords[2]));
    }
    Mesh::new(vertices, None, label)
}

fn load_obj(path: &Path, label: &str) -> Result<Mesh> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (row, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in &mut coords {
                    let tok = it
                        .next()
                        .ok_or_else(|| parse_err(path, row + 1, "v needs 3 coordinates"))?;
                    *c = parse_coord(path, row + 1, tok)?;
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    // "f 1/2/3" style references: only the vertex index is used
                    let first = tok.split('/').next().unwrap_or(tok);
                    let i: i64 = first
                        .parse()
                        .map_err(|_| parse_err(path, row + 1, format!("bad face index '{tok}'")))?;
                    if i < 1 {
                        return Err(parse_err(path, row + 1, "face indices must be positive"));
                    }
                    idx.push((i - 1) as u32);
                }
                if idx.len() != 3 {
                    return Err(parse_err(path, row + 1, "only triangle faces supported"));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    let faces = if faces.is_empty() { None } else { Some(faces) };
    Mesh::new(vertices, faces, label)
}

/// Saves a mesh; `.txt` writes full-precision xyz rows (faces dropped),
/// `.obj` writes `v`/`f` lines, `.ply` writes binary little-endian.
pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "txt" => {
            let file = File::create(path).map_err(|e| io_err(path, e))?;
            let mut w = BufWriter::new(file);
            for v in mesh.vertices() {
                // {:?} of f64 round-trips exactly
                writeln!(w, "{:?} {:?} {:?}", v.x, v.y, v.z).map_err(|e| io_err(path, e))?;
            }
            w.flush().map_err(|e| io_err(path, e))
        }
        "obj" => {
            let file = File::create(path).map_err(|e| io_err(path, e))?;
            let mut w = BufWriter::new(file);
            for v in mesh.vertices() {
                writeln!(w, "v {:?} {:?} {:?}", v.x, v.y, v.z).map_err(|e| io_err(path, e))?;
            }
            if let Some(faces) = mesh.faces() {
                for f in faces {
                    writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)
                        .map_err(|e| io_err(path, e))?;
                }
            }
            w.flush().map_err(|e| io_err(path, e))
        }
        "ply" => write_ply(mesh, None, path),
        other => Err(Error::Config(format!(
            "unsupported mesh extension '.{other}' for {}",
            path.display()
        ))),
    }
}

/// Loads a `.lmks` file of `id x y z` rows.
pub fn load_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut ids = Vec::new();
    let mut points = Vec::new();
    for (row, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(parse_err(path, row + 1, "expected 'id x y z'"));
        }
        let id: u32 = toks[0]
            .parse()
            .map_err(|_| parse_err(path, row + 1, format!("bad id '{}'", toks[0])))?;
        let x = parse_coord(path, row + 1, toks[1])?;
        let y = parse_coord(path, row + 1, toks[2])?;
        let z = parse_coord(path, row + 1, toks[3])?;
        ids.push(id);
        points.push(Point3::new(x, y, z));
    }
    LandmarkSet::new(points, ids, None)
}

/// Writes a `.lmks` file of `id x y z` rows.
pub fn save_landmarks(lmks: &LandmarkSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, p) in lmks.ids().iter().zip(lmks.points()) {
        writeln!(w, "{} {:?} {:?} {:?}", id, p.x, p.y, p.z).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes a PLY carrying the mesh plus a per-vertex `error_mm` scalar,
/// for heatmap-style inspection in external viewers.
pub fn save_error_mesh(mesh: &Mesh, err: &PerVertexError, path: impl AsRef<Path>) -> Result<()> {
    if err.len() != mesh.len() {
        return Err(Error::LengthMismatch(format!(
            "{} error values for {} vertices",
            err.len(),
            mesh.len()
        )));
    }
    write_ply(mesh, Some(err.values()), path.as_ref())
}

/// Reads back a PLY written by [`save_error_mesh`], returning the mesh and
/// its `error_mm` scalars (empty when absent).
pub fn load_error_mesh(path: impl AsRef<Path>) -> Result<(Mesh, Vec<f64>)> {
    let path = path.as_ref();
    let label = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("mesh")
        .to_string();
    load_ply(path, &label)
}

fn write_ply(mesh: &Mesh, scalars: Option<&[f64]>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let nf = mesh.faces().map(|f| f.len()).unwrap_or(0);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n",
        mesh.len()
    )
    .map_err(|e| io_err(path, e))?;
    if scalars.is_some() {
        write!(w, "property float error_mm\n").map_err(|e| io_err(path, e))?;
    }
    if nf > 0 {
        write!(
            w,
            "element face {nf}\nproperty list uchar uint vertex_indices\n"
        )
        .map_err(|e| io_err(path, e))?;
    }
    write!(w, "end_header\n").map_err(|e| io_err(path, e))?;
    for (i, v) in mesh.vertices().iter().enumerate() {
        for c in [v.x, v.y, v.z] {
            w.write_all(&c.to_le_bytes()).map_err(|e| io_err(path, e))?;
        }
        if let Some(s) = scalars {
            w.write_all(&(s[i] as f32).to_le_bytes())
                .map_err(|e| io_err(path, e))?;
        }
    }
    if let Some(faces) = mesh.faces() {
        for f in faces {
            w.write_all(&[3u8]).map_err(|e| io_err(path, e))?;
            for &ix in f {
                w.write_all(&ix.to_le_bytes()).map_err(|e| io_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Clone, Copy, PartialEq)]
enum PlyScalar {
    F32,
    F64,
    I32,
    U32,
    U8,
}

impl PlyScalar {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "float" | "float32" => Some(Self::F32),
            "double" | "float64" => Some(Self::F64),
            "int" | "int32" => Some(Self::I32),
            "uint" | "uint32" => Some(Self::U32),
            "uchar" | "uint8" => Some(Self::U8),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            Self::F32 | Self::I32 | Self::U32 => 4,
            Self::F64 => 8,
            Self::U8 => 1,
        }
    }

    fn read_le(self, buf: &[u8]) -> f64 {
        match self {
            Self::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(buf[..8].try_into().unwrap()),
            Self::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Self::U8 => buf[0] as f64,
        }
    }
}

/// Minimal PLY reader: vertex element with x/y/z (+ optional extra scalar
/// properties, of which `error_mm` is kept) and an optional triangle face
/// element.
fn load_ply(path: &Path, label: &str) -> Result<(Mesh, Vec<f64>)> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);

    let mut format = None;
    // (name, count, properties as (prop_name, type, is_list))
    let mut elements: Vec<(String, usize, Vec<(String, PlyScalar, Option<PlyScalar>)>)> =
        Vec::new();
    let mut row = 0usize;
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line).map_err(|e| io_err(path, e))?;
        if n == 0 {
            return Err(parse_err(path, row, "unexpected end of header"));
        }
        row += 1;
        let line = line.trim();
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("ply") | Some("comment") | None => {}
            Some("format") => {
                format = match toks.get(1).copied() {
                    Some("ascii") => Some(PlyFormat::Ascii),
                    Some("binary_little_endian") => Some(PlyFormat::BinaryLe),
                    other => {
                        return Err(parse_err(
                            path,
                            row,
                            format!("unsupported PLY format {other:?}"),
                        ))
                    }
                };
            }
            Some("element") => {
                let name = toks
                    .get(1)
                    .ok_or_else(|| parse_err(path, row, "element needs a name"))?;
                let count: usize = toks
                    .get(2)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(path, row, "element needs a count"))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, row, "property before element"))?;
                if toks.get(1) == Some(&"list") {
                    let count_ty = PlyScalar::parse(toks[2])
                        .ok_or_else(|| parse_err(path, row, "unsupported list count type"))?;
                    let item_ty = PlyScalar::parse(toks[3])
                        .ok_or_else(|| parse_err(path, row, "unsupported list item type"))?;
                    elem.2
                        .push((toks[4].to_string(), item_ty, Some(count_ty)));
                } else {
                    let ty = PlyScalar::parse(toks[1])
                        .ok_or_else(|| parse_err(path, row, "unsupported property type"))?;
                    elem.2.push((toks[2].to_string(), ty, None));
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_err(path, row, format!("unknown header line '{other}'")));
            }
        }
    }
    let format = format.ok_or_else(|| parse_err(path, row, "missing format line"))?;

    let mut vertices = Vec::new();
    let mut scalars = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    let mut ascii_lines = Vec::new();
    let mut binary = Vec::new();
    match format {
        PlyFormat::Ascii => {
            for line in reader.lines() {
                ascii_lines.push(line.map_err(|e| io_err(path, e))?);
            }
        }
        PlyFormat::BinaryLe => {
            reader.read_to_end(&mut binary).map_err(|e| io_err(path, e))?;
        }
    }
    let mut ascii_cursor = 0usize;
    let mut bin_cursor = 0usize;

    for (name, count, props) in &elements {
        for k in 0..*count {
            row += 1;
            let mut values: Vec<(String, Vec<f64>)> = Vec::new();
            match format {
                PlyFormat::Ascii => {
                    let line = ascii_lines
                        .get(ascii_cursor)
                        .ok_or_else(|| parse_err(path, row, "unexpected end of data"))?;
                    ascii_cursor += 1;
                    let mut toks = line.split_whitespace();
                    for (pname, _, list) in props {
                        let n_items = if list.is_some() {
                            toks.next()
                                .and_then(|t| t.parse::<usize>().ok())
                                .ok_or_else(|| parse_err(path, row, "bad list count"))?
                        } else {
                            1
                        };
                        let mut vals = Vec::with_capacity(n_items);
                        for _ in 0..n_items {
                            let tok = toks
                                .next()
                                .ok_or_else(|| parse_err(path, row, "missing value"))?;
                            vals.push(parse_coord(path, row, tok)?);
                        }
                        values.push((pname.clone(), vals));
                    }
                }
                PlyFormat::BinaryLe => {
                    for (pname, ty, list) in props {
                        let n_items = if let Some(count_ty) = list {
                            let sz = count_ty.size();
                            if bin_cursor + sz > binary.len() {
                                return Err(parse_err(path, row, "truncated binary data"));
                            }
                            let c = count_ty.read_le(&binary[bin_cursor..]) as usize;
                            bin_cursor += sz;
                            c
                        } else {
                            1
                        };
                        let mut vals = Vec::with_capacity(n_items);
                        for _ in 0..n_items {
                            let sz = ty.size();
                            if bin_cursor + sz > binary.len() {
                                return Err(parse_err(path, row, "truncated binary data"));
                            }
                            vals.push(ty.read_le(&binary[bin_cursor..]));
                            bin_cursor += sz;
                        }
                        values.push((pname.clone(), vals));
                    }
                }
            }
            if name == "vertex" {
                let get = |want: &str| -> Result<f64> {
                    values
                        .iter()
                        .find(|(n, _)| n == want)
                        .and_then(|(_, v)| v.first().copied())
                        .ok_or_else(|| parse_err(path, row, format!("missing property {want}")))
                };
                let v = Point3::new(get("x")?, get("y")?, get("z")?);
                if !v.coords.iter().all(|c| c.is_finite()) {
                    return Err(parse_err(path, row, format!("non-finite vertex {k}")));
                }
                vertices.push(v);
                if let Some((_, s)) = values.iter().find(|(n, _)| n == "error_mm") {
                    scalars.push(s[0]);
                }
            } else if name == "face" {
                let idx = &values
                    .iter()
                    .find(|(n, _)| n == "vertex_indices" || n == "vertex_index")
                    .ok_or_else(|| parse_err(path, row, "face without vertex_indices"))?
                    .1;
                if idx.len() != 3 {
                    return Err(parse_err(path, row, "only triangle faces supported"));
                }
                faces.push([idx[0] as u32, idx[1] as u32, idx[2] as u32]);
            }
        }
    }

    let faces = if faces.is_empty() { None } else { Some(faces) };
    let mesh = Mesh::new(vertices, faces, label)?;
    Ok((mesh, scalars))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_txt_mesh() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        std::fs::write(&path, "0 0 0\n1 0 0\n0 1 0\n").unwrap();
        let m = load_mesh(&path).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.faces().is_none());
    }

    #[test]
    fn txt_nan_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        std::fs::write(&path, "0 0 0\n1 nan 0\n0 1 0\n").unwrap();
        let err = load_mesh(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "got: {err}");
    }

    #[test]
    fn txt_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let verts = vec![
            Point3::new(0.1234567890123456, -7.5e-13, 3.0),
            Point3::new(1.0 / 3.0, 2.0f64.sqrt(), -0.0),
            Point3::new(100.5, 2e8, 1e-300),
        ];
        let m = Mesh::new(verts, None, "t").unwrap();
        save_mesh(&m, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        for (a, b) in m.vertices().iter().zip(back.vertices()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.z.to_bits(), b.z.to_bits());
        }
    }

    #[test]
    fn obj_roundtrip_with_faces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        let m = Mesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(1.0, 1.0, 0.5),
            ],
            Some(vec![[0, 1, 2], [1, 3, 2]]),
            "t",
        )
        .unwrap();
        save_mesh(&m, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.faces(), m.faces());
    }

    #[test]
    fn landmarks_reference_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.lmks");
        let mut f = File::create(&path).unwrap();
        for (id, x) in [(13, 0.0), (19, 1.0), (28, 2.0), (31, 3.0), (37, 4.0)] {
            writeln!(f, "{id} {x} 0 0").unwrap();
        }
        drop(f);
        let l = load_landmarks(&path).unwrap();
        assert_eq!(l.len(), 5);
        assert_eq!(l.ids(), &[13, 19, 28, 31, 37]);
    }

    #[test]
    fn landmarks_too_few_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.lmks");
        std::fs::write(&path, "13 0 0 0\n19 1 0 0\n").unwrap();
        let err = load_landmarks(&path).unwrap_err();
        assert!(err.to_string().contains("fewer than 3"), "got: {err}");
    }

    #[test]
    fn landmarks_duplicate_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.lmks");
        std::fs::write(&path, "13 0 0 0\n13 1 0 0\n19 2 0 0\n").unwrap();
        assert!(load_landmarks(&path).is_err());
    }

    #[test]
    fn error_mesh_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.ply");
        let m = Mesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            Some(vec![[0, 1, 2]]),
            "t",
        )
        .unwrap();
        let e = PerVertexError::new(vec![0.0, 1.0, 2.0]).unwrap();
        save_error_mesh(&m, &e, &path).unwrap();
        let (back, scalars) = load_error_mesh(&path).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.faces(), m.faces());
        assert_eq!(scalars.len(), 3);
        for (a, b) in scalars.iter().zip(e.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn error_mesh_length_mismatch() {
        let m = Mesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            None,
            "t",
        )
        .unwrap();
        let e = PerVertexError::new(vec![0.0, 1.0]).unwrap();
        assert!(save_error_mesh(&m, &e, "/tmp/never-written.ply").is_err());
    }

    #[test]
    fn ascii_ply_reads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 3\n\
             property float x\nproperty float y\nproperty float z\n\
             element face 1\nproperty list uchar int vertex_indices\n\
             end_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n",
        )
        .unwrap();
        let m = load_mesh(&path).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.faces().unwrap(), &[[0, 1, 2]]);
    }
}
