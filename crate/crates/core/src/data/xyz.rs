//! Plain-text clouds: one point per line, `x y z [nx ny nz] [label]`.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub fn load_xyz(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, &path.display().to_string())
}

/// Every data line must have the same column count: 3 (coordinates),
/// 4 (+ label), 6 (+ normals) or 7 (+ normals + label). `#` starts a comment.
pub fn parse_xyz(text: &str, source: &str) -> Result<PointCloud> {
    let err = |line: usize, msg: String| Error::Parse { path: source.to_string(), line, msg };
    let mut width: Option<usize> = None;
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if !matches!(toks.len(), 3 | 4 | 6 | 7) {
            return Err(err(ln, format!("expected 3, 4, 6 or 7 columns, found {}", toks.len())));
        }
        match width {
            None => width = Some(toks.len()),
            Some(w) if w != toks.len() => {
                return Err(err(ln, format!("{} columns, earlier lines have {w}", toks.len())));
            }
            _ => {}
        }
        let has_label = toks.len() % 3 == 1;
        let numeric = if has_label { &toks[..toks.len() - 1] } else { &toks[..] };
        for t in numeric {
            let v: f64 = t.parse().map_err(|_| err(ln, format!("non-numeric token {t:?}")))?;
            if !v.is_finite() {
                return Err(err(ln, format!("non-finite value {t:?}")));
            }
            values.push(v);
        }
        if has_label {
            let t = toks[toks.len() - 1];
            labels.push(t.parse().map_err(|_| err(ln, format!("label {t:?} is not a non-negative integer")))?);
        }
    }
    let w = width.unwrap_or(3);
    let per = w - w % 3;
    let n = values.len() / per;
    let all = Matrix::from_vec(n, per, values)?;
    let coords = all.col_range(0, 3);
    let features = all.col_range(3, per);
    let mut cloud = PointCloud::with_features(coords, features)?;
    if w % 3 == 1 {
        cloud.labels = Some(labels);
    }
    Ok(cloud)
}

/// Inverse of [`parse_xyz`] for 3-D clouds with 0 or 3 feature channels.
/// Values are written in shortest round-trip form.
pub fn format_xyz(cloud: &PointCloud) -> Result<String> {
    if cloud.dim() != 3 || !matches!(cloud.features.cols(), 0 | 3) {
        return Err(Error::Input(format!(
            "xyz needs 3-d coordinates and 0 or 3 feature channels, got {} and {}",
            cloud.dim(),
            cloud.features.cols()
        )));
    }
    let mut out = String::new();
    for i in 0..cloud.len() {
        let vals: Vec<String> =
            cloud.coords.row(i).iter().chain(cloud.features.row(i)).map(|v| format!("{v:?}")).collect();
        out.push_str(&vals.join(" "));
        if let Some(l) = &cloud.labels {
            write!(out, " {}", l[i]).expect("write to string");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    std::fs::write(path, format_xyz(cloud)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_lines_three_points() {
        let c = parse_xyz("0 0 0\n1 0 0\n0 1 0\n", "a").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.features.cols(), 0);
        assert!(c.labels.is_none());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let plain = "1 2 3 0 0 1 4\n5 6 7 0 1 0 2\n";
        let noisy = "# header\n\n1 2 3 0 0 1 4   # first\n   \n5 6 7 0 1 0 2\n# end\n";
        let a = parse_xyz(plain, "p").unwrap();
        assert_eq!(a, parse_xyz(noisy, "n").unwrap());
        assert_eq!(a.labels, Some(vec![4, 2]));
        assert_eq!(a.features.row(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn bad_tokens_report_line() {
        match parse_xyz("0 0 0\n# c\n1 zz 0\n", "f.xyz").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        assert!(parse_xyz("0 0 0\n1 1 1 1\n", "f").is_err());
        assert!(parse_xyz("0 0 0 1.5\n", "f").is_err());
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let mut c = PointCloud::with_features(
            Matrix::from_rows(&[&[0.1, -2.5e-7, 3.0], &[1.0 / 3.0, 2.0, -1e10]]),
            Matrix::from_rows(&[&[0.0, 0.0, 1.0], &[0.6, 0.8, 0.0]]),
        )
        .unwrap();
        c.labels = Some(vec![1, 0]);
        write_xyz(&c, &path).unwrap();
        let back = load_xyz(&path).unwrap();
        assert!(back.coords.max_abs_diff(&c.coords) < 1e-12);
        assert_eq!(back, c);
    }
}
