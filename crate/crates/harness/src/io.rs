//! Point file loaders: whitespace `xyz` and ASCII PLY.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use raynn_core::geom::Point3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    Xyz,
    PlyAscii,
}

impl PointFormat {
    /// `.ply` files are PLY, everything else is read as `xyz`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => Self::PlyAscii,
            _ => Self::Xyz,
        }
    }
}

pub fn load_points(path: &Path, format: PointFormat) -> Result<Vec<Point3>> {
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
    let reader = BufReader::new(file);
    match format {
        PointFormat::Xyz => parse_xyz(reader),
        PointFormat::PlyAscii => parse_ply(reader),
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn read_line<R: BufRead>(reader: &mut R, buf: &mut String, line_no: &mut usize) -> Result<bool> {
    buf.clear();
    *line_no += 1;
    match reader.read_line(buf) {
        Ok(0) => Ok(false),
        Ok(_) => Ok(true),
        Err(e) => Err(parse_error(*line_no, e.to_string())),
    }
}

fn parse_coord(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token.parse().map_err(|_| parse_error(line, format!("not a number: {token:?}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_error(line, format!("non-finite coordinate: {token:?}")))
    }
}

/// One `x y z` triple per line. `#` starts a comment; blank lines are skipped.
pub fn parse_xyz<R: BufRead>(mut reader: R) -> Result<Vec<Point3>> {
    let mut points = Vec::new();
    let mut buf = String::new();
    let mut line = 0;
    while read_line(&mut reader, &mut buf, &mut line)? {
        let content = buf.split('#').next().unwrap_or("");
        let fields: Vec<&str> = content.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [x, y, z] => points.push(Point3::new(parse_coord(x, line)?, parse_coord(y, line)?, parse_coord(z, line)?)),
            _ => return Err(parse_error(line, format!("expected 3 coordinates, found {}", fields.len()))),
        }
    }
    Ok(points)
}

#[derive(Debug)]
enum Property {
    Scalar(String),
    List,
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// ASCII PLY. Reads `x`, `y`, `z` of the `vertex` element; other properties
/// and elements are skipped.
pub fn parse_ply<R: BufRead>(mut reader: R) -> Result<Vec<Point3>> {
    let mut buf = String::new();
    let mut line = 0;
    if !read_line(&mut reader, &mut buf, &mut line)? || buf.trim() != "ply" {
        return Err(parse_error(1, "missing 'ply' magic"));
    }

    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !read_line(&mut reader, &mut buf, &mut line)? {
            return Err(parse_error(line, "header ends without end_header"));
        }
        let tokens: Vec<&str> = buf.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(Error::UnsupportedFormat(format!("ply format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| parse_error(line, format!("bad element count {count:?}")))?;
                elements.push(Element { name: name.to_string(), count, properties: Vec::new() });
            }
            ["property", "list", _, _, _] => current(&mut elements, line)?.properties.push(Property::List),
            ["property", _, name] => current(&mut elements, line)?.properties.push(Property::Scalar(name.to_string())),
            _ => return Err(parse_error(line, format!("unrecognized header line {:?}", buf.trim()))),
        }
    }

    let mut points = Vec::new();
    for element in &elements {
        if element.name != "vertex" {
            for _ in 0..element.count {
                if !read_line(&mut reader, &mut buf, &mut line)? {
                    return Err(parse_error(line, format!("unexpected end of file in element {}", element.name)));
                }
            }
            continue;
        }
        let slot = |axis: &str| {
            element.properties.iter().position(|p| matches!(p, Property::Scalar(n) if n == axis))
        };
        let (Some(ix), Some(iy), Some(iz)) = (slot("x"), slot("y"), slot("z")) else {
            return Err(parse_error(line, "vertex element lacks x, y or z"));
        };
        points.reserve(element.count);
        for _ in 0..element.count {
            if !read_line(&mut reader, &mut buf, &mut line)? {
                return Err(parse_error(line, "unexpected end of file in vertex data"));
            }
            let mut tokens = buf.split_whitespace();
            let mut xyz = [0.0; 3];
            for (i, prop) in element.properties.iter().enumerate() {
                let missing = || parse_error(line, "too few values for vertex");
                match prop {
                    Property::Scalar(_) => {
                        let token = tokens.next().ok_or_else(missing)?;
                        if let Some(axis) = [ix, iy, iz].iter().position(|&s| s == i) {
                            xyz[axis] = parse_coord(token, line)?;
                        }
                    }
                    Property::List => {
                        let len: usize = tokens
                            .next()
                            .ok_or_else(missing)?
                            .parse()
                            .map_err(|_| parse_error(line, "bad list length"))?;
                        for _ in 0..len {
                            tokens.next().ok_or_else(missing)?;
                        }
                    }
                }
            }
            points.push(Point3::from(xyz));
        }
        break;
    }
    Ok(points)
}

fn current(elements: &mut [Element], line: usize) -> Result<&mut Element> {
    elements.last_mut().ok_or_else(|| parse_error(line, "property before any element"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xyz_basic() {
        let pts = parse_xyz("0 0 0\n1 2 3\n".as_bytes()).unwrap();
        assert_eq!(pts, vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn xyz_comments_and_blanks() {
        let pts = parse_xyz("# header\n\n  1 2 3 # trailing\n\t4\t5\t6\n".as_bytes()).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1], Point3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn xyz_errors_carry_line() {
        match parse_xyz("a b c\n".as_bytes()) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_xyz("0 0 0\n1 2\n".as_bytes()) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_xyz("1 nan 2\n".as_bytes()).is_err());
        assert!(parse_xyz("1 inf 2\n".as_bytes()).is_err());
    }

    #[test]
    fn ply_minimal() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0.5 0.5 0.5\n";
        assert_eq!(parse_ply(text.as_bytes()).unwrap(), vec![Point3::new(0.5, 0.5, 0.5)]);
    }

    #[test]
    fn ply_skips_extra_properties_and_elements() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement camera 1\nproperty float fov\n\
                    element vertex 2\nproperty uchar red\nproperty double z\nproperty list uchar int idx\n\
                    property double x\nproperty double y\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n\
                    60\n255 3 2 7 8 1 2\n0 -1 0 4 5\n3 0 1 2\n";
        let pts = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(pts, vec![Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, -1.0)]);
    }

    #[test]
    fn ply_binary_is_unsupported() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n";
        assert!(matches!(parse_ply(text.as_bytes()), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn ply_errors() {
        assert!(parse_ply("xyz\n".as_bytes()).is_err());
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(parse_ply(short.as_bytes()).is_err());
        let bad = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 b 3\n";
        match parse_ply(bad.as_bytes()) {
            Err(Error::Parse { line: 8, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(PointFormat::from_path(Path::new("a/b.PLY")), PointFormat::PlyAscii);
        assert_eq!(PointFormat::from_path(Path::new("a/b.xyz")), PointFormat::Xyz);
        assert_eq!(PointFormat::from_path(Path::new("noext")), PointFormat::Xyz);
    }
}
