//! ASCII OFF meshes and area-weighted surface sampling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

pub fn load_off(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_off(&text, &path.display().to_string())
}

/// Parses OFF text. `source` only labels errors. Polygons are
/// fan-triangulated around their first vertex.
pub fn parse_off(text: &str, source: &str) -> Result<Mesh> {
    let err = |line: usize, msg: String| Error::Parse { path: source.to_string(), line, msg };
    // (line number, tokens) for every non-blank line with comments stripped
    let mut lines = text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
    });
    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty file, expected OFF header".into()))?;
    // Some writers glue the counts to the keyword ("OFF490 518 0").
    let first = header[0];
    if !first.starts_with("OFF") {
        return Err(err(hline, format!("expected OFF header, found {first:?}")));
    }
    let mut count_tokens: Vec<&str> = Vec::new();
    if first.len() > 3 {
        count_tokens.push(&first[3..]);
    }
    count_tokens.extend_from_slice(&header[1..]);
    let (cline, counts) = if count_tokens.is_empty() {
        lines.next().ok_or_else(|| err(hline + 1, "missing vertex/face counts".into()))?
    } else {
        (hline, count_tokens)
    };
    if counts.len() < 2 {
        return Err(err(cline, "expected vertex and face counts".into()));
    }
    let parse_count = |t: &str| t.parse::<usize>().map_err(|_| err(cline, format!("invalid count {t:?}")));
    let nv = parse_count(counts[0])?;
    let nf = parse_count(counts[1])?;
    let mut vertices = Vec::with_capacity(nv.min(1 << 20));
    for _ in 0..nv {
        let (ln, toks) = lines
            .next()
            .ok_or_else(|| err(cline, format!("file ends before {nv} vertices were read")))?;
        if toks.len() < 3 {
            return Err(err(ln, format!("vertex needs 3 coordinates, found {}", toks.len())));
        }
        let mut v = [0.0; 3];
        for (slot, t) in v.iter_mut().zip(&toks) {
            *slot = t.parse().map_err(|_| err(ln, format!("invalid coordinate {t:?}")))?;
        }
        vertices.push(v);
    }
    let mut triangles = Vec::with_capacity(nf.min(1 << 20));
    for _ in 0..nf {
        let (ln, toks) = lines
            .next()
            .ok_or_else(|| err(cline, format!("file ends before {nf} faces were read")))?;
        let n: usize = toks[0].parse().map_err(|_| err(ln, format!("invalid face size {:?}", toks[0])))?;
        if n < 3 || toks.len() < n + 1 {
            return Err(err(ln, format!("face needs at least 3 vertex indices, declared {n} with {} given", toks.len() - 1)));
        }
        let idx = toks[1..=n]
            .iter()
            .map(|t| {
                let i: usize = t.parse().map_err(|_| err(ln, format!("invalid vertex index {t:?}")))?;
                if i >= nv {
                    return Err(err(ln, format!("vertex index {i} out of range ({nv} vertices)")));
                }
                Ok(i)
            })
            .collect::<Result<Vec<_>>>()?;
        for j in 1..n - 1 {
            triangles.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    Ok(Mesh { vertices, triangles })
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl Mesh {
    fn corners(&self, t: usize) -> [[f64; 3]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    /// Unit normal of triangle `t` (zero for degenerate triangles).
    pub fn triangle_normal(&self, t: usize) -> [f64; 3] {
        let [a, b, c] = self.corners(t);
        let n = cross(sub(b, a), sub(c, a));
        let len = norm(n);
        if len > 0.0 {
            [n[0] / len, n[1] / len, n[2] / len]
        } else {
            [0.0; 3]
        }
    }
}

/// Raw surface sample: `n × 3` points in mesh coordinates and the triangle
/// each point was drawn from.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<(Matrix, Vec<usize>)> {
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|t| mesh.triangle_area(t)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Input("mesh has no triangle with positive area".into()));
    }
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Matrix::zeros(n, 3);
    let mut faces = Vec::with_capacity(n);
    for i in 0..n {
        let r = rng.random::<f64>() * total;
        let t = cumulative.partition_point(|&c| c <= r).min(areas.len() - 1);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        let [a, b, c] = mesh.corners(t);
        for (j, v) in coords.row_mut(i).iter_mut().enumerate() {
            *v = wa * a[j] + wb * b[j] + wc * c[j];
        }
        faces.push(t);
    }
    Ok((coords, faces))
}

/// Area-weighted uniform surface sample, normalized to the unit ball.
/// With `normals`, each point carries its face normal as three features.
pub fn sample_mesh(mesh: &Mesh, n: usize, seed: u64, normals: bool) -> Result<PointCloud> {
    let (coords, faces) = sample_surface(mesh, n, seed)?;
    let mut cloud = if normals {
        let nm = Matrix::from_fn(n, 3, |i, j| mesh.triangle_normal(faces[i])[j]);
        PointCloud::with_features(coords, nm)?
    } else {
        PointCloud::new(coords)
    };
    cloud.normalize();
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRI: &str = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";

    #[test]
    fn minimal_triangle() {
        let m = parse_off(TRI, "t").unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn quad_is_fanned() {
        let m = parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n", "q").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn crlf_comments_and_glued_header() {
        let crlf = "# a comment\r\nOFF\r\n\r\n3 1 0 # counts\r\n0 0 0\r\n1 0 0\r\n0 1 0\r\n3 0 1 2\r\n";
        assert_eq!(parse_off(crlf, "c").unwrap(), parse_off(TRI, "t").unwrap());
        let glued = "OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        assert_eq!(parse_off(glued, "g").unwrap(), parse_off(TRI, "t").unwrap());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = "OFF\n3 1 0\n0 0 0\n1 x 0\n0 1 0\n3 0 1 2\n";
        match parse_off(bad, "bad.off").unwrap_err() {
            Error::Parse { line, path, .. } => {
                assert_eq!(line, 4);
                assert_eq!(path, "bad.off");
            }
            e => panic!("{e}"),
        }
        assert!(matches!(parse_off("PLY\n", "p"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_off("OFF\n3 1 0\n0 0 0\n", "p"), Err(Error::Parse { .. })));
        assert!(matches!(
            parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n", "p"),
            Err(Error::Parse { line: 6, .. })
        ));
    }

    #[test]
    fn single_triangle_samples_are_planar_and_inside() {
        let m = parse_off("OFF\n3 1 0\n0 0 1\n2 0 1\n0 3 1\n3 0 1 2\n", "t").unwrap();
        let (pts, _) = sample_surface(&m, 500, 4).unwrap();
        for i in 0..500 {
            let [x, y, z] = [pts[(i, 0)], pts[(i, 1)], pts[(i, 2)]];
            assert!((z - 1.0).abs() < 1e-12);
            assert!(x >= -1e-12 && y >= -1e-12 && x / 2.0 + y / 3.0 <= 1.0 + 1e-12);
        }
        let c = sample_mesh(&m, 100, 4, true).unwrap();
        assert_eq!(c.features.cols(), 3);
        assert!((c.features[(0, 2)] - 1.0).abs() < 1e-12);
        assert_eq!(sample_mesh(&m, 100, 4, true).unwrap(), c);
    }
}
