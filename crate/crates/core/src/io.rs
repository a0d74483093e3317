//! ASCII XYZ and PLY point files.
//!
//! XYZ: one point per line, at least three whitespace-separated numbers,
//! extra columns ignored, lines starting with `#` and blank lines skipped.
//! Coordinates are written with Rust's shortest round-trip formatting, so
//! `load_xyz(save_xyz(c)) == c` exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_xyz(BufReader::new(file))
}

/// Parses XYZ text from any reader. Line numbers in errors are 1-based.
pub fn parse_xyz(reader: impl BufRead) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let mut coord = [0.0; 3];
        for c in &mut coord {
            *c = fields
                .next()
                .and_then(|f| f.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or(Error::MalformedLine(i + 1))?;
        }
        points.push(Point3::new(coord[0], coord[1], coord[2]));
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    PointCloud::new(points)
}

pub fn save_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_xyz(cloud, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_xyz(cloud: &PointCloud, w: &mut impl Write) -> Result<()> {
    for p in cloud.iter() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

/// Writes an ASCII PLY with `x y z` plus one float property per named scalar.
pub fn save_ply_scalars(
    cloud: &PointCloud,
    scalars: &[(&str, &[f64])],
    path: impl AsRef<Path>,
) -> Result<()> {
    for (_, values) in scalars {
        if values.len() != cloud.len() {
            return Err(Error::LengthMismatch {
                expected: cloud.len(),
                found: values.len(),
            });
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    for (name, _) in scalars {
        writeln!(w, "property float {name}")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.iter().enumerate() {
        write!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
        for (_, values) in scalars {
            write!(w, " {}", values[i] as f32)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_ply_scalar(
    cloud: &PointCloud,
    scalar: &[f64],
    name: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    save_ply_scalars(cloud, &[(name, scalar)], path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn parse_basic_and_comments() {
        let c = parse_xyz("0 0 0\n1 2 3".as_bytes()).unwrap();
        assert_eq!(c.points(), &[Point3::ORIGIN, Point3::new(1.0, 2.0, 3.0)]);
        let c = parse_xyz("# header\n0 0 0".as_bytes()).unwrap();
        assert_eq!(c.len(), 1);
        let c = parse_xyz("1 2 3 0.5 7\n".as_bytes()).unwrap();
        assert_eq!(c.get(0), Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_xyz("a b c".as_bytes()),
            Err(Error::MalformedLine(1))
        ));
        assert!(matches!(
            parse_xyz("0 0 0\n1 2".as_bytes()),
            Err(Error::MalformedLine(2))
        ));
        assert!(matches!(
            parse_xyz("# only\n\n".as_bytes()),
            Err(Error::EmptyCloud)
        ));
        assert!(matches!(
            load_xyz("/definitely/not/here.xyz"),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn xyz_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let mut rng = Rng::new(99);
        let cloud = PointCloud::new(
            (0..100)
                .map(|_| {
                    Point3::new(
                        rng.uniform(-1e3, 1e3),
                        rng.uniform(-1e-3, 1e-3),
                        rng.uniform(0.0, 1.0),
                    )
                })
                .collect(),
        )
        .unwrap();
        save_xyz(&cloud, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 100);
        let back = load_xyz(&path).unwrap();
        assert!(back.max_coord_diff(&cloud) <= 1e-9);
        assert_eq!(back, cloud);
    }

    #[test]
    fn save_into_missing_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud::new(vec![Point3::ORIGIN, Point3::new(1.0, 1.0, 1.0)]).unwrap();
        let err = save_xyz(&cloud, dir.path().join("nope/c.xyz")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn ply_header_and_length_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ply");
        let cloud = PointCloud::new(vec![
            Point3::ORIGIN,
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ])
        .unwrap();
        save_ply_scalar(&cloud, &[0.1, 0.2, 0.3], "detail", &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("element vertex 3\n"));
        assert!(text.contains("property float detail\n"));
        let err = save_ply_scalar(&cloud, &[0.1, 0.2], "detail", &path).unwrap_err();
        assert!(matches!(
            err,
            Error::LengthMismatch {
                expected: 3,
                found: 2
            }
        ));
    }
}
