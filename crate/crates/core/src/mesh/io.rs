use std::fmt::Write as _;
use std::path::Path;

use crate::mesh::{Mesh, MeshError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self, MeshError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => Ok(Self::Obj),
            Some("ply") => Ok(Self::Ply),
            _ => Err(MeshError::Format(path.display().to_string())),
        }
    }
}

/// Shortest positional or scientific form with 9 significant digits.
pub(crate) fn fmt9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    let neg = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };
    let sign = if neg { "-" } else { "" };
    if !(-5..=9).contains(&exp) {
        let (head, tail) = digits.split_at(1);
        return if tail.is_empty() {
            format!("{sign}{head}e{exp}")
        } else {
            format!("{sign}{head}.{tail}e{exp}")
        };
    }
    let point = exp + 1;
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point as usize >= digits.len() {
        format!("{}{}", digits, "0".repeat(point as usize - digits.len()))
    } else {
        let (a, b) = digits.split_at(point as usize);
        format!("{a}.{b}")
    };
    format!("{sign}{body}")
}

fn parse_err(line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_float<T: Scalar>(tok: Option<&str>, line: usize) -> Result<T, MeshError> {
    let tok = tok.ok_or_else(|| parse_err(line, "missing coordinate"))?;
    tok.parse::<f64>()
        .map(T::of)
        .map_err(|_| parse_err(line, format!("bad number {tok:?}")))
}

fn check_indices<T: Scalar>(mesh: Mesh<T>, lines: &[usize]) -> Result<Mesh<T>, MeshError> {
    let n = mesh.vertices.len();
    for (f, face) in mesh.faces.iter().enumerate() {
        if face.iter().any(|&v| v >= n) {
            return Err(parse_err(lines[f], format!("face index out of range (vertex count {n})")));
        }
        if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
            return Err(parse_err(lines[f], "degenerate face"));
        }
    }
    Ok(mesh)
}

pub fn write_obj<T: Scalar>(mesh: &Mesh<T>, path: &Path) -> Result<(), MeshError> {
    mesh.validate()?;
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 20);
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = write!(
            s,
            "v {} {} {}",
            fmt9(v[0].as_f64()),
            fmt9(v[1].as_f64()),
            fmt9(v[2].as_f64())
        );
        if let Some(c) = &mesh.colors {
            let c = c[i];
            let _ = write!(
                s,
                " {} {} {}",
                fmt9(c[0].as_f64()),
                fmt9(c[1].as_f64()),
                fmt9(c[2].as_f64())
            );
        }
        s.push('\n');
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Reads `v` and `f` records; texture/normal references in faces are ignored.
/// Colors are taken when every vertex line carries six numbers.
pub fn read_obj<T: Scalar>(path: &Path) -> Result<Mesh<T>, MeshError> {
    let text = std::fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("v") => {
                let rest: Vec<&str> = toks.collect();
                let mut it = rest.iter().copied();
                let v = [
                    parse_float(it.next(), line)?,
                    parse_float(it.next(), line)?,
                    parse_float(it.next(), line)?,
                ];
                vertices.push(v);
                if rest.len() >= 6 {
                    colors.push([
                        parse_float(it.next(), line)?,
                        parse_float(it.next(), line)?,
                        parse_float(it.next(), line)?,
                    ]);
                }
            }
            Some("f") => {
                let idx: Vec<&str> = toks.collect();
                if idx.len() != 3 {
                    return Err(parse_err(
                        line,
                        format!("face with {} vertices (triangles only)", idx.len()),
                    ));
                }
                let mut face = [0usize; 3];
                for (k, tok) in idx.iter().enumerate() {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| parse_err(line, format!("bad index {tok:?}")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(parse_err(line, "index 0 is invalid"));
                    };
                    if resolved < 0 {
                        return Err(parse_err(line, format!("index {i} out of range")));
                    }
                    face[k] = resolved as usize;
                }
                faces.push(face);
                face_lines.push(line);
            }
            _ => {}
        }
    }
    let colors = (!colors.is_empty() && colors.len() == vertices.len()).then_some(colors);
    check_indices(
        Mesh {
            vertices,
            faces,
            colors,
        },
        &face_lines,
    )
}

/// ASCII PLY with float coordinates and, when present, float `red green blue`.
pub fn write_ply<T: Scalar>(mesh: &Mesh<T>, path: &Path) -> Result<(), MeshError> {
    mesh.validate()?;
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if mesh.colors.is_some() {
        s.push_str("property double red\nproperty double green\nproperty double blue\n");
    }
    let _ = writeln!(s, "element face {}", mesh.faces.len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = write!(
            s,
            "{} {} {}",
            fmt9(v[0].as_f64()),
            fmt9(v[1].as_f64()),
            fmt9(v[2].as_f64())
        );
        if let Some(c) = &mesh.colors {
            let c = c[i];
            let _ = write!(
                s,
                " {} {} {}",
                fmt9(c[0].as_f64()),
                fmt9(c[1].as_f64()),
                fmt9(c[2].as_f64())
            );
        }
        s.push('\n');
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Reads ASCII PLY. Integer color properties (`uchar`) are scaled to [0, 1].
pub fn read_ply<T: Scalar>(path: &Path) -> Result<Mesh<T>, MeshError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing ply magic")),
    }
    struct Element {
        name: String,
        count: usize,
        props: Vec<(String, String)>,
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (line, raw) = lines
            .next()
            .ok_or_else(|| parse_err(0, "unterminated header"))?;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(MeshError::Format(format!(
                        "PLY encoding {:?} (only ascii is supported)",
                        toks.get(1)
                    )));
                }
            }
            Some("element") => {
                let count = toks
                    .get(2)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(line, "bad element count"))?;
                elements.push(Element {
                    name: toks.get(1).unwrap_or(&"").to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line, "property before element"))?;
                let name = toks.last().unwrap_or(&"").to_string();
                el.props.push((toks.get(1).unwrap_or(&"").to_string(), name));
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();
    for el in &elements {
        let pos = |n: &str| el.props.iter().position(|p| p.1 == n);
        for _ in 0..el.count {
            let (line, raw) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("truncated {} element", el.name)))?;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    let get = |n: &str| -> Result<T, MeshError> {
                        let i = pos(n).ok_or_else(|| parse_err(line, format!("no {n} property")))?;
                        parse_float(toks.get(i).copied(), line)
                    };
                    vertices.push([get("x")?, get("y")?, get("z")?]);
                    if let Some(ri) = pos("red") {
                        let scale = if el.props[ri].0.contains("char") {
                            T::of(1.0 / 255.0)
                        } else {
                            T::one()
                        };
                        colors.push([
                            get("red")? * scale,
                            get("green")? * scale,
                            get("blue")? * scale,
                        ]);
                    }
                }
                "face" => {
                    let n: usize = toks
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(line, "bad face record"))?;
                    if n != 3 {
                        return Err(parse_err(line, format!("face with {n} vertices (triangles only)")));
                    }
                    let mut face = [0usize; 3];
                    for k in 0..3 {
                        face[k] = toks
                            .get(k + 1)
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| parse_err(line, "bad face index"))?;
                    }
                    faces.push(face);
                    face_lines.push(line);
                }
                _ => {}
            }
        }
    }
    let colors = (!colors.is_empty()).then_some(colors);
    check_indices(
        Mesh {
            vertices,
            faces,
            colors,
        },
        &face_lines,
    )
}

pub fn read_mesh<T: Scalar>(path: &Path) -> Result<Mesh<T>, MeshError> {
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => read_obj(path),
        MeshFormat::Ply => read_ply(path),
    }
}

pub fn write_mesh<T: Scalar>(mesh: &Mesh<T>, path: &Path) -> Result<(), MeshError> {
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => write_obj(mesh, path),
        MeshFormat::Ply => write_ply(mesh, path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round9(x: f64) -> f64 {
        format!("{x:.8e}").parse().unwrap()
    }

    #[test]
    fn fmt9_matches_nine_digit_rounding() {
        for x in [
            0.0, 1.0, -1.0, 0.1, 1.0 / 3.0, 123456789.0, 1234567891.0, 1e-7, -2.5e-6, 0.000123,
            99999999.95, 6.02214076e23,
        ] {
            let s = fmt9(x);
            assert_eq!(s.parse::<f64>().unwrap(), round9(x), "{x} -> {s}");
        }
        assert_eq!(fmt9(0.5), "0.5");
        assert_eq!(fmt9(-12.0), "-12");
    }

    #[test]
    fn triangle_roundtrip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.25]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        for name in ["t.obj", "t.ply"] {
            let p = dir.path().join(name);
            write_mesh(&m, &p).unwrap();
            assert_eq!(read_mesh::<f64>(&p).unwrap(), m);
        }
    }

    #[test]
    fn colors_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mesh::new(
            vec![[0.1, 0.2, 0.3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
        .with_colors(vec![[0.25, 0.5, 1.0 / 3.0], [0.0, 1.0, 0.7], [0.9, 0.1, 0.123456789]])
        .unwrap();
        for name in ["c.obj", "c.ply"] {
            let p = dir.path().join(name);
            write_mesh(&m, &p).unwrap();
            let back = read_mesh::<f64>(&p).unwrap();
            let (a, b) = (m.colors.as_ref().unwrap(), back.colors.unwrap());
            for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn quad_face_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.obj");
        std::fs::write(&p, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        match read_obj::<f64>(&p) {
            Err(MeshError::Parse { line: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_range_index_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.obj");
        std::fs::write(&p, "v 0 0 0\nv 1 0 0\nv 1 1 0\n# c\nf 1 2 9\n").unwrap();
        assert!(matches!(read_obj::<f64>(&p), Err(MeshError::Parse { line: 5, .. })));
    }

    #[test]
    fn obj_slash_and_negative_indices() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.obj");
        std::fs::write(&p, "v 0 0 0\nv 1 0 0\nv 1 1 0\nvn 0 0 1\nf 1//1 2//1 -1//1\n").unwrap();
        let m = read_obj::<f64>(&p).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }
}
