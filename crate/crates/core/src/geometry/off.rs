//! ASCII OFF meshes with an optional `.lbl` part-label sidecar.
//!
//! The sidecar shares the OFF file's basename, holds one decimal label per
//! line, and is indexed by face *after* fan triangulation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::mesh::Mesh;

/// Sidecar path for an OFF file: same basename, `.lbl` extension.
pub fn label_path(off: &Path) -> PathBuf {
    off.with_extension("lbl")
}

/// Loads an OFF file and, when present, its label sidecar. Without a
/// sidecar every face gets label 0.
pub fn load_off(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (vertices, faces) = parse_off(&text, path)?;
    let lbl = label_path(path);
    let part_labels = if lbl.exists() {
        let text = fs::read_to_string(&lbl).map_err(|e| Error::io(&lbl, e))?;
        parse_labels(&text, &lbl, faces.len())?
    } else {
        vec![0; faces.len()]
    };
    Mesh::new(vertices, faces, part_labels)
}

type Parsed = (Vec<[f64; 3]>, Vec<[usize; 3]>);

/// Parses OFF text. Polygons are fan-triangulated from their first vertex.
pub fn parse_off(text: &str, path: &Path) -> Result<Parsed> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    // (1-based line number, tokens) of every non-blank, non-comment line
    let mut lines = text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
    });

    let (hline, mut head) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    if head.first() != Some(&"OFF") {
        return Err(perr(hline, "expected `OFF` header".into()));
    }
    head.remove(0);
    // counts may share the header line
    let (cline, counts) = if head.is_empty() {
        lines.next().ok_or_else(|| perr(hline, "missing counts line".into()))?
    } else {
        (hline, head)
    };
    if counts.len() < 2 {
        return Err(perr(cline, "counts line needs vertex and face counts".into()));
    }
    let count = |s: &str| s.parse::<usize>().map_err(|_| perr(cline, format!("bad count `{s}`")));
    let (nv, nf) = (count(counts[0])?, count(counts[1])?);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, toks) = lines.next().ok_or_else(|| perr(cline, "unexpected end of vertex list".into()))?;
        if toks.len() < 3 {
            return Err(perr(ln, "vertex needs 3 coordinates".into()));
        }
        let mut p = [0.0; 3];
        for (a, t) in p.iter_mut().zip(&toks) {
            *a = t.parse().map_err(|_| perr(ln, format!("bad coordinate `{t}`")))?;
        }
        vertices.push(p);
    }

    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, toks) = lines.next().ok_or_else(|| perr(cline, "unexpected end of face list".into()))?;
        let k: usize = toks
            .first()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(ln, "bad face vertex count".into()))?;
        if k < 3 || toks.len() < k + 1 {
            return Err(perr(ln, format!("face declares {k} vertices")));
        }
        let idx = toks[1..=k]
            .iter()
            .map(|t| {
                let i: usize = t.parse().map_err(|_| perr(ln, format!("bad index `{t}`")))?;
                if i >= nv {
                    return Err(perr(ln, format!("index {i} out of range for {nv} vertices")));
                }
                Ok(i)
            })
            .collect::<Result<Vec<_>>>()?;
        for j in 1..k - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    if faces.is_empty() {
        return Err(perr(cline, "mesh has no faces".into()));
    }
    Ok((vertices, faces))
}

fn parse_labels(text: &str, path: &Path, faces: usize) -> Result<Vec<u32>> {
    let labels = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<u32>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad label `{}`", l.trim()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != faces {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: labels.len(),
            msg: format!("{} labels for {faces} triangulated faces", labels.len()),
        });
    }
    Ok(labels)
}

/// Formats a coordinate with 9 significant digits.
pub fn format_coord(x: f64) -> String {
    format!("{x:.8e}")
}

/// Rounds to the value `format_coord` writes, so that writing is lossless.
pub fn quantize_coord(x: f64) -> f64 {
    format_coord(x).parse().expect("formatted float parses")
}

pub fn off_string(m: &Mesh) -> String {
    let mut s = String::new();
    writeln!(s, "OFF").unwrap();
    writeln!(s, "{} {} 0", m.vertices.len(), m.faces.len()).unwrap();
    for v in &m.vertices {
        writeln!(s, "{} {} {}", format_coord(v[0]), format_coord(v[1]), format_coord(v[2])).unwrap();
    }
    for f in &m.faces {
        writeln!(s, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    s
}

/// Writes the OFF file and its `.lbl` sidecar.
pub fn write_off(m: &Mesh, path: &Path) -> Result<()> {
    fs::write(path, off_string(m)).map_err(|e| Error::io(path, e))?;
    let mut labels = String::with_capacity(m.part_labels.len() * 3);
    for l in &m.part_labels {
        writeln!(labels, "{l}").unwrap();
    }
    let lbl = label_path(path);
    fs::write(&lbl, labels).map_err(|e| Error::io(&lbl, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<Parsed> {
        parse_off(s, Path::new("test.off"))
    }

    #[test]
    fn minimal_triangle() {
        let (v, f) = parse("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(f, vec![[0, 1, 2]]);
    }

    #[test]
    fn quad_is_fanned() {
        let (_, f) = parse("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(f, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn out_of_range_index_reports_line() {
        let err = parse("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 6),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_header_and_counts() {
        assert!(matches!(parse("PLY\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("OFF\nx 1 0\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("OFF\n3 1 0\n0 0\n"), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn counts_on_header_line_and_comments() {
        let (v, f) = parse("OFF 3 1 0 # inline\n# comment\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!((v.len(), f.len()), (3, 1));
    }

    #[test]
    fn sidecar_labels_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.off");
        fs::write(&p, "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(load_off(&p).unwrap().part_labels, vec![0, 0]);
        fs::write(label_path(&p), "3\n5\n").unwrap();
        assert_eq!(load_off(&p).unwrap().part_labels, vec![3, 5]);
        fs::write(label_path(&p), "3\n").unwrap();
        assert!(matches!(load_off(&p), Err(Error::Parse { .. })));
    }

    proptest! {
        #![proptest_config(crate::testutil::proptest_config(64))]

        #[test]
        fn write_then_load_round_trips(
            coords in prop::collection::vec(-1e3f64..1e3, 9..60),
            seed in any::<u64>(),
        ) {
            let nv = coords.len() / 3;
            let vertices: Vec<[f64; 3]> = (0..nv)
                .map(|i| [0, 1, 2].map(|a| quantize_coord(coords[3 * i + a])))
                .collect();
            let faces: Vec<[usize; 3]> = (0..nv)
                .map(|i| [i, (i + 1) % nv, (i as u64 ^ seed) as usize % nv])
                .collect();
            let labels = (0..nv as u32).map(|i| i % 7).collect();
            let m = Mesh::new(vertices, faces, labels).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.off");
            write_off(&m, &p).unwrap();
            prop_assert_eq!(load_off(&p).unwrap(), m);
        }
    }
}
