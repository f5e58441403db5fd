//! ASCII PLY reading and writing (vertices, optional triangle faces).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point;

pub fn format_ply(vertices: &[Point], faces: &[[usize; 3]]) -> String {
    let mut s = String::with_capacity(vertices.len() * 40 + faces.len() * 20 + 200);
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "element vertex {}", vertices.len()).unwrap();
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if !faces.is_empty() {
        writeln!(s, "element face {}", faces.len()).unwrap();
        s.push_str("property list uchar int vertex_indices\n");
    }
    s.push_str("end_header\n");
    for v in vertices {
        writeln!(s, "{} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in faces {
        writeln!(s, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    s
}

pub fn write_ply(path: &Path, vertices: &[Point], faces: &[[usize; 3]]) -> Result<()> {
    std::fs::write(path, format_ply(vertices, faces)).map_err(|e| Error::io(path, e))
}

pub fn parse_ply(text: &str) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
    let bad = |m: &str| Error::Parse(format!("PLY: {m}"));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing magic"));
    }
    let (mut n_vert, mut n_face) = (0usize, 0usize);
    let mut vert_props = 0usize;
    let mut current = "";
    loop {
        let line = lines.next().ok_or_else(|| bad("unterminated header"))?.trim();
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(bad("only ascii is supported")),
            ["element", "vertex", n] => {
                n_vert = n.parse().map_err(|_| bad("vertex count"))?;
                current = "vertex";
            }
            ["element", "face", n] => {
                n_face = n.parse().map_err(|_| bad("face count"))?;
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", ..] if current == "vertex" => vert_props += 1,
            ["end_header"] => break,
            _ => {}
        }
    }
    if vert_props < 3 {
        return Err(bad("vertex element needs x y z"));
    }
    let mut vertices = Vec::with_capacity(n_vert);
    for _ in 0..n_vert {
        let line = lines.next().ok_or_else(|| bad("truncated vertex list"))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("vertex value"))?;
        if v.len() < 3 {
            return Err(bad("short vertex line"));
        }
        vertices.push(Point::new(v[0], v[1], v[2]));
    }
    let mut faces = Vec::with_capacity(n_face);
    for _ in 0..n_face {
        let line = lines.next().ok_or_else(|| bad("truncated face list"))?;
        let idx: Vec<usize> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("face index"))?;
        if idx.len() != 4 || idx[0] != 3 {
            return Err(bad("only triangle faces are supported"));
        }
        if idx[1..].iter().any(|&i| i >= n_vert) {
            return Err(bad("face index out of range"));
        }
        faces.push([idx[1], idx[2], idx[3]]);
    }
    Ok((vertices, faces))
}

pub fn read_ply(path: &Path) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text)
}
