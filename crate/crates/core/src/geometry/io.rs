//! OBJ and PLY mesh files with optional per-vertex RGB.
//!
//! PLY output is binary little-endian with `double` positions and `uchar`
//! colors. The reader also accepts ASCII PLY and the common scalar types.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "obj" => Ok(MeshFormat::Obj),
            Some(e) if e == "ply" => Ok(MeshFormat::Ply),
            _ => Err(Error::InvalidArgument(format!(
                "{}: unknown mesh extension, expected .obj or .ply",
                path.display()
            ))),
        }
    }
}

pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let file = File::open(path).map_err(Error::at_path(path))?;
    let mut reader = BufReader::new(file);
    let mesh = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => read_obj(&mut reader)?,
        MeshFormat::Ply => read_ply(&mut reader)?,
    };
    mesh.validate()?;
    Ok(mesh)
}

pub fn save_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    mesh.validate()?;
    let format = MeshFormat::from_path(path)?;
    let file = File::create(path).map_err(Error::at_path(path))?;
    let mut w = BufWriter::new(file);
    match format {
        MeshFormat::Obj => write_obj(mesh, &mut w)?,
        MeshFormat::Ply => write_ply(mesh, &mut w)?,
    }
    w.flush().map_err(Error::at_path(path))
}

/// Quantize colors to the 8-bit grid PLY stores, so a save/load cycle is exact.
pub fn quantize_colors(colors: &mut [[f64; 3]]) {
    for c in colors {
        for ch in c.iter_mut() {
            *ch = to_u8(*ch) as f64 / 255.0;
        }
    }
}

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_obj(mesh: &TriMesh, w: &mut impl Write) -> Result<()> {
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let c = c[i];
                writeln!(w, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2])?
            }
            None => writeln!(w, "v {} {} {}", v.x, v.y, v.z)?,
        }
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

/// Reads `v` and `f` records. Polygons are fan-triangulated; texture and
/// normal indices are ignored; negative indices count from the end.
pub fn read_obj(r: &mut impl BufRead) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut faces = Vec::new();
    let mut any_color = false;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        let bad = |d: &str| Error::format("OBJ", format!("line {}: {d}", lineno + 1));
        match it.next() {
            Some("v") => {
                let vals: Vec<f64> = it
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(&e.to_string()))?;
                if vals.len() < 3 {
                    return Err(bad("vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
                if vals.len() >= 6 {
                    any_color = true;
                    colors.push([vals[3], vals[4], vals[5]]);
                } else {
                    colors.push([1.0; 3]);
                }
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| bad("bad face index"))?;
                    let n = vertices.len() as i64;
                    let i = if i < 0 { n + i } else { i - 1 };
                    if i < 0 || i >= n {
                        return Err(bad("face index out of range"));
                    }
                    idx.push(i as u32);
                }
                if idx.len() < 3 {
                    return Err(bad("face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let mut mesh = TriMesh::new(vertices, faces);
    if any_color {
        mesh.colors = Some(colors);
    }
    Ok(mesh)
}

pub fn write_ply(mesh: &TriMesh, w: &mut impl Write) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if mesh.colors.is_some() {
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
    }
    writeln!(w, "element face {}", mesh.faces.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v.iter() {
            w.write_all(&c.to_le_bytes())?;
        }
        if let Some(colors) = &mesh.colors {
            w.write_all(&colors[i].map(to_u8))?;
        }
    }
    for f in &mesh.faces {
        w.write_all(&[3u8])?;
        for i in f {
            w.write_all(&(*i as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
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
    fn parse(name: &str) -> Option<Self> {
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

    fn read_bin(self, r: &mut impl Read) -> Result<f64> {
        let mut buf = [0u8; 8];
        let b = &mut buf[..self.size()];
        r.read_exact(b).map_err(|e| Error::format("PLY", format!("truncated body: {e}")))?;
        Ok(match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

enum Body {
    Ascii,
    BinaryLe,
}

pub fn read_ply(r: &mut impl BufRead) -> Result<TriMesh> {
    let bad = |d: String| Error::format("PLY", d);
    let mut line = String::new();
    let mut next_line = |r: &mut dyn BufRead| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::format("PLY", "unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(r)? != "ply" {
        return Err(bad("missing ply magic".into()));
    }
    let mut body = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next_line(r)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                body = Some(match toks.get(1).copied() {
                    Some("ascii") => Body::Ascii,
                    Some("binary_little_endian") => Body::BinaryLe,
                    other => return Err(bad(format!("unsupported format {other:?}"))),
                })
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(bad(format!("bad element line `{l}`")));
                }
                let count = toks[2].parse().map_err(|_| bad(format!("bad element count `{l}`")))?;
                elements.push(Element { name: toks[1].to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                let ty = |s: &str| Scalar::parse(s).ok_or_else(|| bad(format!("unknown type {s}")));
                if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return Err(bad(format!("bad list property `{l}`")));
                    }
                    el.props.push(Property::List(toks[4].to_string(), ty(toks[2])?, ty(toks[3])?));
                } else {
                    if toks.len() != 3 {
                        return Err(bad(format!("bad property `{l}`")));
                    }
                    el.props.push(Property::Scalar(toks[2].to_string(), ty(toks[1])?));
                }
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    let body = body.ok_or_else(|| bad("missing format line".into()))?;

    let mut ascii_tokens: Vec<String> = Vec::new();
    let mut cursor = 0usize;
    if let Body::Ascii = body {
        let mut rest = String::new();
        r.read_to_string(&mut rest)?;
        ascii_tokens = rest.split_whitespace().map(str::to_string).collect();
    }
    let mut read_value = |r: &mut dyn Read, ty: Scalar| -> Result<f64> {
        match body {
            Body::BinaryLe => ty.read_bin(&mut &mut *r),
            Body::Ascii => {
                let tok = ascii_tokens.get(cursor).ok_or_else(|| Error::format("PLY", "truncated ASCII body"))?;
                cursor += 1;
                tok.parse::<f64>().map_err(|e| Error::format("PLY", format!("`{tok}`: {e}")))
            }
        }
    };

    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut has_color = false;
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut pos = [0.0; 3];
            let mut col = [1.0; 3];
            let mut list: Vec<u32> = Vec::new();
            for p in &el.props {
                match p {
                    Property::Scalar(name, ty) => {
                        let x = read_value(r, *ty)?;
                        let chan = |x: f64| if ty.is_integer() { x / 255.0 } else { x };
                        match name.as_str() {
                            "x" => pos[0] = x,
                            "y" => pos[1] = x,
                            "z" => pos[2] = x,
                            "red" | "r" => {
                                col[0] = chan(x);
                                has_color = true;
                            }
                            "green" | "g" => col[1] = chan(x),
                            "blue" | "b" => col[2] = chan(x),
                            _ => {}
                        }
                    }
                    Property::List(name, count_ty, item_ty) => {
                        let n = read_value(r, *count_ty)? as usize;
                        let keep = name == "vertex_indices" || name == "vertex_index";
                        for _ in 0..n {
                            let x = read_value(r, *item_ty)?;
                            if keep {
                                if x < 0.0 {
                                    return Err(bad(format!("negative vertex index {x}")));
                                }
                                list.push(x as u32);
                            }
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    vertices.push(Vec3::from(pos));
                    colors.push(col);
                }
                "face" => {
                    if list.len() < 3 {
                        return Err(bad("face with fewer than three vertices".into()));
                    }
                    for k in 1..list.len() - 1 {
                        faces.push([list[0], list[k], list[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    let mut mesh = TriMesh::new(vertices, faces);
    if has_color {
        mesh.colors = Some(colors);
    }
    Ok(mesh)
}
