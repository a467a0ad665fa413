//! Text formats for datasets.
//!
//! Node datasets:
//!
//! ```text
//! # posegnn dataset v1
//! # name: <free text>          (optional)
//! # origin: synthetic|ingested (optional, default ingested)
//! <n> <d>
//! n rows of: d features, x y z, qw qx qy qz, split (0 = train, 1 = test)
//! ```
//!
//! Feature-map datasets put `<m> <L> <W> <d>` in the header; each image is
//! one line `x y z qw qx qy qz split` followed by `L*W` lines of `d` floats.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), so values
//! survive a save/load cycle bit for bit. Lines starting with `#` are
//! comments; tokens are whitespace separated.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Dataset, FeatureMapDataset, FeatureOrigin, Split};
use crate::graph::FeatureMap;
use crate::numerics::Matrix;
use crate::pose::{quat_norm, quat_normalize_if_needed};
use crate::{Error, Pose, Result};

/// Quaternions shorter than this are rejected on load.
const MIN_LOADED_QUAT_NORM: f64 = 1e-6;

fn push_floats(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:.16e}");
    }
}

fn push_pose(out: &mut String, pose: &Pose, split: Split) {
    push_floats(out, &pose.position);
    out.push(' ');
    push_floats(out, &pose.orientation);
    let _ = write!(out, " {}", split.flag());
}

fn header_comments(out: &mut String, kind: &str, name: &str, origin: FeatureOrigin) {
    let _ = writeln!(out, "# posegnn {kind} v1");
    if !name.is_empty() {
        let _ = writeln!(out, "# name: {}", name.replace('\n', " "));
    }
    let _ = writeln!(out, "# origin: {}", origin.as_str());
}

/// Canonical text of a node dataset.
pub fn render_dataset(d: &Dataset) -> String {
    let mut out = String::new();
    header_comments(&mut out, "dataset", &d.name, d.origin);
    let _ = writeln!(out, "{} {}", d.len(), d.dim());
    for i in 0..d.len() {
        push_floats(&mut out, d.features.row(i));
        if d.dim() > 0 {
            out.push(' ');
        }
        push_pose(&mut out, &d.poses[i], d.split[i]);
        out.push('\n');
    }
    out
}

pub fn render_feature_maps(d: &FeatureMapDataset) -> String {
    let mut out = String::new();
    header_comments(&mut out, "feature-maps", &d.name, d.origin);
    let (l, w, depth) = d.shape().unwrap_or((0, 0, 0));
    let _ = writeln!(out, "{} {l} {w} {depth}", d.len());
    for (i, map) in d.maps.iter().enumerate() {
        push_pose(&mut out, &d.poses[i], d.split[i]);
        out.push('\n');
        for row in map.cells().iter_rows() {
            push_floats(&mut out, row);
            out.push('\n');
        }
    }
    out
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_dataset(d))?;
    Ok(())
}

pub fn save_feature_maps(d: &FeatureMapDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_feature_maps(d))?;
    Ok(())
}

/// Line cursor that skips comments and blank lines and remembers metadata.
struct Lines<'a> {
    path: PathBuf,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    name: String,
    origin: FeatureOrigin,
}

impl<'a> Lines<'a> {
    fn new(path: &Path, text: &'a str) -> Self {
        Self {
            path: path.to_path_buf(),
            inner: text.lines().enumerate(),
            name: String::new(),
            origin: FeatureOrigin::Ingested,
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    /// Next data line as `(1-based line number, tokens)`.
    fn next_tokens(&mut self) -> Result<Option<(usize, Vec<&'a str>)>> {
        for (i, raw) in self.inner.by_ref() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(name) = comment.strip_prefix("name:") {
                    self.name = name.trim().to_string();
                } else if let Some(origin) = comment.strip_prefix("origin:") {
                    self.origin = match origin.trim() {
                        "synthetic" => FeatureOrigin::Synthetic,
                        "ingested" => FeatureOrigin::Ingested,
                        other => return Err(self.err(i + 1, format!("unknown origin `{other}`"))),
                    };
                }
                continue;
            }
            return Ok(Some((i + 1, line.split_whitespace().collect())));
        }
        Ok(None)
    }

    fn expect_tokens(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        match self.next_tokens()? {
            Some(t) => Ok(t),
            None => Err(self.err(0, format!("unexpected end of file, expected {what}"))),
        }
    }

    fn ints(&self, line: usize, tokens: &[&str], count: usize) -> Result<Vec<usize>> {
        if tokens.len() != count {
            return Err(self.err(line, format!("expected {count} header integers, found {} tokens", tokens.len())));
        }
        tokens
            .iter()
            .map(|t| t.parse::<usize>().map_err(|_| self.err(line, format!("bad integer `{t}`"))))
            .collect()
    }

    fn floats(&self, line: usize, tokens: &[&str]) -> Result<Vec<f64>> {
        tokens
            .iter()
            .map(|t| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(self.err(line, format!("non-finite value `{t}`"))),
                Err(_) => Err(self.err(line, format!("bad number `{t}`"))),
            })
            .collect()
    }

    /// Parses `x y z qw qx qy qz split`.
    fn pose(&self, line: usize, tokens: &[&str]) -> Result<(Pose, Split)> {
        let (values, flag) = tokens.split_at(7);
        let v = self.floats(line, values)?;
        let split = Split::from_flag(flag[0]).ok_or_else(|| self.err(line, format!("split flag must be 0 or 1, got `{}`", flag[0])))?;
        let q = [v[3], v[4], v[5], v[6]];
        let norm = quat_norm(q);
        if norm < MIN_LOADED_QUAT_NORM {
            return Err(Error::Data(format!(
                "{}:{line}: quaternion norm {norm:e} is too small",
                self.path.display()
            )));
        }
        Ok((
            Pose {
                position: [v[0], v[1], v[2]],
                orientation: quat_normalize_if_needed(q)?,
            },
            split,
        ))
    }
}

/// Parses node-dataset text; `path` is only used in error messages.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut lines = Lines::new(path, text);
    let (hl, header) = lines.expect_tokens("`n d` header")?;
    let dims = lines.ints(hl, &header, 2)?;
    let (n, d) = (dims[0], dims[1]);
    let mut features = Vec::with_capacity(n * d);
    let mut poses = Vec::with_capacity(n);
    let mut split = Vec::with_capacity(n);
    for row in 0..n {
        let (ln, tokens) = lines.expect_tokens(&format!("row {} of {n}", row + 1))?;
        if tokens.len() != d + 8 {
            return Err(lines.err(
                ln,
                format!("expected {d} features + 3 position + 4 quaternion + split = {} values, found {}", d + 8, tokens.len()),
            ));
        }
        features.extend(lines.floats(ln, &tokens[..d])?);
        let (pose, s) = lines.pose(ln, &tokens[d..])?;
        poses.push(pose);
        split.push(s);
    }
    if let Some((ln, _)) = lines.next_tokens()? {
        return Err(lines.err(ln, format!("trailing data after {n} rows")));
    }
    let features = Matrix::new(n, d, features)?;
    Dataset::new(lines.name.clone(), features, poses, split, lines.origin)
}

pub fn parse_feature_maps(text: &str, path: &Path) -> Result<FeatureMapDataset> {
    let mut lines = Lines::new(path, text);
    let (hl, header) = lines.expect_tokens("`m L W d` header")?;
    let dims = lines.ints(hl, &header, 4)?;
    let (m, l, w, d) = (dims[0], dims[1], dims[2], dims[3]);
    let mut maps = Vec::with_capacity(m);
    let mut poses = Vec::with_capacity(m);
    let mut split = Vec::with_capacity(m);
    for img in 0..m {
        let (ln, tokens) = lines.expect_tokens(&format!("pose line of image {}", img + 1))?;
        if tokens.len() != 8 {
            return Err(lines.err(ln, format!("expected 3 position + 4 quaternion + split = 8 values, found {}", tokens.len())));
        }
        let (pose, s) = lines.pose(ln, &tokens)?;
        let mut cells = Vec::with_capacity(l * w * d);
        for _ in 0..l * w {
            let (ln, tokens) = lines.expect_tokens("feature-map cell")?;
            if tokens.len() != d {
                return Err(lines.err(ln, format!("expected {d} cell features, found {}", tokens.len())));
            }
            cells.extend(lines.floats(ln, &tokens)?);
        }
        maps.push(FeatureMap::new(l, w, Matrix::new(l * w, d, cells)?)?);
        poses.push(pose);
        split.push(s);
    }
    if let Some((ln, _)) = lines.next_tokens()? {
        return Err(lines.err(ln, format!("trailing data after {m} images")));
    }
    FeatureMapDataset::new(lines.name.clone(), maps, poses, split, lines.origin)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_dataset(&std::fs::read_to_string(path)?, path)
}

pub fn load_feature_maps(path: impl AsRef<Path>) -> Result<FeatureMapDataset> {
    let path = path.as_ref();
    parse_feature_maps(&std::fs::read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{feature_map_fixture, generate_synthetic, FeatureMapConfig, SynthConfig};

    fn p() -> &'static Path {
        Path::new("mem")
    }

    fn tiny() -> Dataset {
        let features = Matrix::from_rows(&[[0.1, -2.5e-7], [1.0 / 3.0, 7.0]]).unwrap();
        let poses = vec![
            Pose::new([1.0, 2.0, 3.0], [0.3, 0.1, -0.2, 0.9]).unwrap(),
            Pose::new([-0.5, 0.0, 1e-9], [1.0, 0.0, 0.0, 0.0]).unwrap(),
        ];
        Dataset::new("tiny".into(), features, poses, vec![Split::Train, Split::Test], FeatureOrigin::Ingested).unwrap()
    }

    #[test]
    fn minimal_round_trip_is_exact() {
        let d = tiny();
        let text = render_dataset(&d);
        let back = parse_dataset(&text, p()).unwrap();
        assert_eq!(back, d);
        assert_eq!(render_dataset(&back), text);
    }

    #[test]
    fn synthetic_round_trip() {
        let d = generate_synthetic(&SynthConfig {
            n_train: 12,
            n_test: 4,
            d: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(parse_dataset(&render_dataset(&d), p()).unwrap(), d);

        let maps = feature_map_fixture(&FeatureMapConfig {
            n_train: 3,
            n_test: 1,
            height: 2,
            width: 3,
            d: 8,
            ..FeatureMapConfig::default()
        })
        .unwrap();
        assert_eq!(parse_feature_maps(&render_feature_maps(&maps), p()).unwrap(), maps);
    }

    #[test]
    fn three_component_quaternion_is_parse_error() {
        let text = "1 2\n0.5 0.5 1 2 3 1 0 0 0\n";
        match parse_dataset(text, p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_content() {
        assert!(matches!(parse_dataset("1 1\nnan 0 0 0 1 0 0 0 0\n", p()), Err(Error::Parse { .. })));
        assert!(matches!(parse_dataset("1 1\n0 0 0 0 0 0 0 0 0\n", p()), Err(Error::Data(_))));
        assert!(matches!(parse_dataset("1 1\n0 0 0 0 1 0 0 0 2\n", p()), Err(Error::Parse { .. })));
        assert!(matches!(parse_dataset("2 1\n0 0 0 0 1 0 0 0 0\n", p()), Err(Error::Parse { .. })));
        assert!(matches!(parse_dataset("x 1\n", p()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_dataset("1 1\n0 0 0 0 1 0 0 0 0\n5\n", p()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn non_unit_quaternions_are_normalized() {
        let d = parse_dataset("1 1\n0 0 0 0 2 0 0 0 0\n", p()).unwrap();
        assert_eq!(d.poses[0].orientation, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.origin, FeatureOrigin::Ingested);
    }
}
