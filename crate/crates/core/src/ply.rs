//! ASCII PLY reading and writing.
//!
//! Vertex properties are `x y z`, optionally followed by `nx ny nz` and a
//! `feature` scalar. Every file written here carries a single
//! `comment scanplan` header line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, ScanError};
use crate::geometry::{PointCloud, Vec3};
use crate::scene::SceneObject;

pub const HEADER_COMMENT: &str = "comment scanplan";

pub fn cloud_to_string(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(64 + cloud.len() * 40);
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(HEADER_COMMENT);
    s.push('\n');
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.normals.is_some() {
        s.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    if cloud.feature_strength.is_some() {
        s.push_str("property double feature\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{:.9} {:.9} {:.9}", p.x, p.y, p.z);
        if let Some(n) = &cloud.normals {
            let _ = write!(s, " {:.9} {:.9} {:.9}", n[i].x, n[i].y, n[i].z);
        }
        if let Some(f) = &cloud.feature_strength {
            let _ = write!(s, " {:.6}", f[i]);
        }
        s.push('\n');
    }
    s
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, cloud_to_string(cloud)).map_err(|e| ScanError::io(path, e))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| ScanError::io(path, e))?;
    parse_cloud(&text).map_err(|msg| ScanError::Parse {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn parse_cloud(text: &str) -> std::result::Result<PointCloud, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut vertex_count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = lines.next().ok_or("unterminated header")?.trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err("only ascii PLY is supported".into());
                }
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or("element without name")?;
                in_vertex = name == "vertex";
                if in_vertex {
                    let n = tok
                        .next()
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or("bad vertex count")?;
                    vertex_count = Some(n);
                }
            }
            Some("property") => {
                if in_vertex {
                    let name = tok.last().ok_or("property without name")?;
                    props.push(name.to_string());
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(format!("unexpected header keyword '{other}'")),
        }
    }
    let n = vertex_count.ok_or("no vertex element")?;
    let idx = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (idx("x"), idx("y"), idx("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err("vertex element lacks x/y/z".into()),
    };
    let normal_idx = match (idx("nx"), idx("ny"), idx("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let feature_idx = idx("feature");

    let mut points = Vec::with_capacity(n);
    let mut normals = normal_idx.map(|_| Vec::with_capacity(n));
    let mut features = feature_idx.map(|_| Vec::with_capacity(n));
    let mut values = Vec::with_capacity(props.len());
    for row in 0..n {
        let line = lines.next().ok_or_else(|| format!("expected {n} vertices, found {row}"))?;
        values.clear();
        for t in line.split_whitespace() {
            values.push(t.parse::<f64>().map_err(|e| format!("vertex {row}: {e}"))?);
        }
        if values.len() < props.len() {
            return Err(format!("vertex {row}: expected {} values", props.len()));
        }
        points.push(Vec3::new(values[ix], values[iy], values[iz]));
        if let (Some((a, b, c)), Some(ns)) = (normal_idx, normals.as_mut()) {
            let v = Vec3::new(values[a], values[b], values[c]);
            let len = v.norm();
            ns.push(if len > 0.0 { v / len } else { v });
        }
        if let (Some(f), Some(fs)) = (feature_idx, features.as_mut()) {
            fs.push(values[f].clamp(0.0, 1.0));
        }
    }
    PointCloud::with_attributes(points, normals, features).map_err(|e| e.to_string())
}

/// Triangle soup: three vertices per triangle plus a face list.
pub fn write_object(path: &Path, obj: &SceneObject) -> Result<()> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(HEADER_COMMENT);
    s.push('\n');
    let _ = writeln!(s, "element vertex {}", obj.triangles.len() * 3);
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(s, "element face {}", obj.triangles.len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for t in &obj.triangles {
        for v in t {
            let _ = writeln!(s, "{:.9} {:.9} {:.9}", v.x, v.y, v.z);
        }
    }
    for i in 0..obj.triangles.len() {
        let _ = writeln!(s, "3 {} {} {}", 3 * i, 3 * i + 1, 3 * i + 2);
    }
    fs::write(path, s).map_err(|e| ScanError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let c = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)]);
        let s = cloud_to_string(&c);
        let header: Vec<&str> = s.lines().take(8).collect();
        assert_eq!(
            header,
            [
                "ply",
                "format ascii 1.0",
                "comment scanplan",
                "element vertex 1",
                "property double x",
                "property double y",
                "property double z",
                "end_header"
            ]
        );
        assert_eq!(s.matches("comment").count(), 1);
    }

    #[test]
    fn round_trip_with_normals() {
        let c = PointCloud::with_attributes(
            vec![Vec3::new(0.25, -1.5, 3.0), Vec3::new(1e-3, 0.0, 2.0)],
            Some(vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0)]),
            Some(vec![0.4, 0.9]),
        )
        .unwrap();
        let back = parse_cloud(&cloud_to_string(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_truncated_body() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(parse_cloud(text).is_err());
        assert!(parse_cloud("not a ply").is_err());
    }
}
