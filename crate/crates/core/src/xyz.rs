//! Plain-text XYZ point files: one point per line, `x y z` or
//! `x y z nx ny nz`, `#` comment lines ignored.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::Point3;

/// Points and, when every line carries six values, normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct XyzData {
    pub points: Vec<Point3>,
    pub normals: Option<Vec<Point3>>,
}

pub fn parse<R: Read>(reader: R) -> Result<XyzData> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut columns = None;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let values = trimmed
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: format!("invalid number {tok:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != 3 && values.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 or 6 values, found {}", values.len()),
            });
        }
        match columns {
            None => columns = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {c} values like earlier lines, found {}", values.len()),
                })
            }
            _ => {}
        }
        points.push([values[0], values[1], values[2]]);
        if values.len() == 6 {
            normals.push([values[3], values[4], values[5]]);
        }
    }
    Ok(XyzData {
        normals: (columns == Some(6)).then_some(normals),
        points,
    })
}

pub fn read(path: impl AsRef<Path>) -> Result<XyzData> {
    parse(fs::File::open(path)?)
}

/// Writes points (and normals when given) using shortest round-trip decimal
/// formatting, so reading the file back reproduces the values bit-exactly.
pub fn write_to<W: Write>(mut w: W, points: &[Point3], normals: Option<&[Point3]>) -> Result<()> {
    if let Some(n) = normals {
        if n.len() != points.len() {
            return Err(Error::Contract(format!(
                "{} normals for {} points",
                n.len(),
                points.len()
            )));
        }
    }
    let mut out = String::with_capacity(points.len() * 48);
    for (i, p) in points.iter().enumerate() {
        use std::fmt::Write as _;
        let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
        if let Some(n) = normals {
            let _ = write!(out, " {} {} {}", n[i][0], n[i][1], n[i][2]);
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn write(path: impl AsRef<Path>, points: &[Point3], normals: Option<&[Point3]>) -> Result<()> {
    let mut buf = Vec::new();
    write_to(&mut buf, points, normals)?;
    fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_layouts_and_comments() {
        let d = parse("# header\n0 1 2\n\n  3.5 -4 5e-3\n".as_bytes()).unwrap();
        assert_eq!(d.points, vec![[0.0, 1.0, 2.0], [3.5, -4.0, 0.005]]);
        assert!(d.normals.is_none());
        let d = parse("0 0 0 0 0 1\n1 1 1 1 0 0\n".as_bytes()).unwrap();
        assert_eq!(d.normals.unwrap(), vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn reports_line_numbers() {
        match parse("0 0 0\n# c\n1 x 2\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse("0 0 0\n1 2\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("0 0 0\n0 0 0 0 0 1\n".as_bytes()).is_err());
        assert!(parse("nan 0 0\n".as_bytes()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn round_trip_is_bit_exact(pts in proptest::collection::vec(
            proptest::array::uniform3(proptest::num::f64::NORMAL | proptest::num::f64::ZERO), 1..20)) {
            let mut buf = Vec::new();
            write_to(&mut buf, &pts, None).unwrap();
            let back = parse(buf.as_slice()).unwrap();
            proptest::prop_assert_eq!(back.points, pts);
        }
    }
}
