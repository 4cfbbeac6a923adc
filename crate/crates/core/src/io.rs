//! File formats: PLY meshes and point clouds, CSV point lists, and JSON for
//! transforms, reports and run configurations.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::costs::{CostFamily, CostMode};
use crate::error::{Error, Result};
use crate::geometry::{Connectivity, OrientedPointSet, Vec3};
use crate::normals::NormalEstimatorConfig;
use crate::optimize::{AnnealingSchedule, CorrespondenceOptions, RegisterOptions};
use crate::transforms::TransformFamily;

/// Normals further than this from unit length are rejected on input.
const NORMAL_TOLERANCE: f64 = 1e-3;
/// Normals this close to unit length are kept verbatim so files round-trip.
const NORMAL_EXACT: f64 = 1e-9;

fn unit_normal(u: Vec3) -> std::result::Result<Vec3, f64> {
    let len = u.norm();
    match (len - 1.0).abs() {
        e if e <= NORMAL_EXACT => Ok(u),
        e if e <= NORMAL_TOLERANCE => Ok(u / len),
        _ => Err(len),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlyFormat {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

/// Contents of a PLY file restricted to what registration uses.
#[derive(Clone, Debug, PartialEq)]
pub struct PlyDocument {
    pub vertices: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub faces: Vec<[usize; 3]>,
    pub format: PlyFormat,
}

impl PlyDocument {
    pub fn from_shape(shape: &OrientedPointSet, format: PlyFormat) -> Self {
        Self {
            vertices: shape.points().to_vec(),
            normals: shape.normals().map(<[Vec3]>::to_vec),
            faces: shape.faces().map(<[[usize; 3]]>::to_vec).unwrap_or_default(),
            format,
        }
    }

    pub fn into_shape(self) -> Result<OrientedPointSet> {
        let mut shape = OrientedPointSet::new(3, self.vertices)?;
        if let Some(n) = self.normals {
            shape = shape.with_normals(n)?;
        }
        if !self.faces.is_empty() {
            shape = shape.with_connectivity(Connectivity::Faces(self.faces))?;
        }
        Ok(shape)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar(n, _) | Property::List(n, _, _) => n,
        }
    }
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    lines: usize,
    body_offset: usize,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let mut offset = 0;
    let mut lineno = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(path, lineno + 1, "header ends without end_header"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| parse_err(path, lineno + 1, "header is not valid text"))?
            .trim_end_matches('\r')
            .trim();
        offset += end + 1;
        lineno += 1;
        let words: Vec<&str> = line.split_whitespace().collect();
        if lineno == 1 {
            if line != "ply" {
                return Err(parse_err(path, 1, "missing 'ply' magic line"));
            }
            continue;
        }
        match words.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, version] => {
                if *version != "1.0" {
                    return Err(parse_err(path, lineno, format!("unsupported PLY version {version}")));
                }
                format = Some(match *kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => return Err(Error::UnsupportedFormat("big-endian binary PLY".into())),
                    other => return Err(parse_err(path, lineno, format!("unknown format '{other}'"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(path, lineno, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count_ty, item_ty, name] => {
                let (Some(c), Some(i)) = (Scalar::parse(count_ty), Scalar::parse(item_ty)) else {
                    return Err(parse_err(path, lineno, "unknown list property type"));
                };
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, lineno, "property before any element"))?
                    .properties
                    .push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| parse_err(path, lineno, format!("unknown type '{ty}'")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, lineno, "property before any element"))?
                    .properties
                    .push(Property::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(parse_err(path, lineno, format!("unrecognized header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(path, lineno, "header has no format line"))?;
    Ok(Header {
        format,
        elements,
        lines: lineno,
        body_offset: offset,
    })
}

/// Decoded values per property, and where the row sits for messages.
type Row = (Vec<Vec<f64>>, usize);

/// Row-by-row access to the body, uniform over ascii and binary.
enum Body<'a> {
    Ascii {
        lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
        first_line: usize,
    },
    Binary {
        bytes: &'a [u8],
        pos: usize,
    },
}

impl Body<'_> {
    /// Reads one element row; `None` on end of data. The row's line number
    /// (ascii) or the header length (binary) is returned for messages.
    fn row(&mut self, props: &[Property]) -> std::result::Result<Option<Row>, String> {
        match self {
            Body::Ascii { lines, first_line } => {
                let (idx, line) = loop {
                    match lines.next() {
                        None => return Ok(None),
                        Some((i, l)) if !l.trim().is_empty() => break (i, l),
                        Some(_) => {}
                    }
                };
                let lineno = *first_line + idx;
                let mut values = line.split_whitespace().map(|w| w.parse::<f64>());
                let mut take = || -> std::result::Result<f64, String> {
                    values
                        .next()
                        .ok_or_else(|| format!("line {lineno}: too few values"))?
                        .map_err(|e| format!("line {lineno}: {e}"))
                };
                let mut out = Vec::with_capacity(props.len());
                for p in props {
                    match p {
                        Property::Scalar(..) => out.push(vec![take()?]),
                        Property::List(..) => {
                            let n = take()?;
                            if n < 0.0 || n.fract() != 0.0 {
                                return Err(format!("line {lineno}: bad list length {n}"));
                            }
                            out.push((0..n as usize).map(|_| take()).collect::<std::result::Result<_, _>>()?);
                        }
                    }
                }
                if values.next().is_some() {
                    return Err(format!("line {lineno}: too many values"));
                }
                Ok(Some((out, lineno)))
            }
            Body::Binary { bytes, pos } => {
                let mut out = Vec::with_capacity(props.len());
                let take = |ty: Scalar, pos: &mut usize| -> Option<f64> {
                    let end = *pos + ty.size();
                    let v = bytes.get(*pos..end).map(|b| ty.read_le(b));
                    *pos = end;
                    v
                };
                if *pos >= bytes.len() {
                    return Ok(None);
                }
                for p in props {
                    match p {
                        Property::Scalar(_, ty) => match take(*ty, pos) {
                            Some(v) => out.push(vec![v]),
                            None => return Ok(None),
                        },
                        Property::List(_, cty, ity) => {
                            let Some(n) = take(*cty, pos) else { return Ok(None) };
                            let mut items = Vec::with_capacity(n as usize);
                            for _ in 0..n as usize {
                                match take(*ity, pos) {
                                    Some(v) => items.push(v),
                                    None => return Ok(None),
                                }
                            }
                            out.push(items);
                        }
                    }
                }
                Ok(Some((out, 0)))
            }
        }
    }
}

/// Parses an ascii or binary little-endian PLY 1.0 file. Vertex `x, y, z` are
/// required; `nx, ny, nz` and faces are optional; other properties and
/// elements are skipped.
pub fn read_ply_document(path: &Path) -> Result<PlyDocument> {
    let bytes = fs::read(path)?;
    let header = parse_header(path, &bytes)?;
    let body_bytes = &bytes[header.body_offset..];
    let mut body = match header.format {
        PlyFormat::Ascii => Body::Ascii {
            lines: std::str::from_utf8(body_bytes)
                .map_err(|_| parse_err(path, header.lines + 1, "ascii body is not valid text"))?
                .lines()
                .enumerate()
                .peekable(),
            first_line: header.lines + 1,
        },
        PlyFormat::BinaryLittleEndian => Body::Binary {
            bytes: body_bytes,
            pos: 0,
        },
    };

    let mut doc = PlyDocument {
        vertices: Vec::new(),
        normals: None,
        faces: Vec::new(),
        format: header.format,
    };
    let mut saw_vertex = false;
    for el in &header.elements {
        let find = |name: &str| el.properties.iter().position(|p| p.name() == name);
        let (xyz, nxyz) = if el.name == "vertex" {
            saw_vertex = true;
            let xyz = [find("x"), find("y"), find("z")];
            if xyz.iter().any(Option::is_none) {
                return Err(parse_err(path, header.lines, "vertex element lacks x, y or z"));
            }
            let nxyz = [find("nx"), find("ny"), find("nz")];
            (
                xyz.map(|i| i.unwrap_or(0)),
                nxyz.iter().all(Option::is_some).then(|| nxyz.map(|i| i.unwrap_or(0))),
            )
        } else {
            ([0; 3], None)
        };
        let face_prop = (el.name == "face")
            .then(|| find("vertex_indices").or_else(|| find("vertex_index")))
            .flatten();
        let mut normals = Vec::new();
        for k in 0..el.count {
            let (row, lineno) = body
                .row(&el.properties)
                .map_err(|m| parse_err(path, header.lines, m))?
                .ok_or_else(|| {
                    parse_err(
                        path,
                        header.lines,
                        format!("truncated body: element '{}' has {k} of {} rows", el.name, el.count),
                    )
                })?;
            if el.name == "vertex" {
                doc.vertices
                    .push(Vec3::new(row[xyz[0]][0], row[xyz[1]][0], row[xyz[2]][0]));
                if let Some(n) = nxyz {
                    let u = Vec3::new(row[n[0]][0], row[n[1]][0], row[n[2]][0]);
                    let u = unit_normal(u)
                        .map_err(|len| parse_err(path, lineno, format!("vertex {k} normal has length {len}")))?;
                    normals.push(u);
                }
            } else if let Some(fp) = face_prop {
                let idx = &row[fp];
                if idx.len() < 3 {
                    return Err(parse_err(path, lineno, format!("face {k} has fewer than 3 vertices")));
                }
                let idx: Vec<usize> = idx.iter().map(|&v| v as usize).collect();
                // fan triangulation of polygons
                for t in 1..idx.len() - 1 {
                    doc.faces.push([idx[0], idx[t], idx[t + 1]]);
                }
            }
        }
        if nxyz.is_some() {
            doc.normals = Some(normals);
        }
    }
    if !saw_vertex {
        return Err(parse_err(path, header.lines, "no vertex element"));
    }
    let n = doc.vertices.len();
    if let Some(f) = doc.faces.iter().position(|f| f.iter().any(|&v| v >= n)) {
        return Err(parse_err(
            path,
            header.lines,
            format!("face {f} references a missing vertex"),
        ));
    }
    Ok(doc)
}

pub fn read_ply(path: &Path) -> Result<OrientedPointSet> {
    read_ply_document(path)?.into_shape()
}

/// Shortest decimal that round-trips the value rounded to 9 significant digits.
fn fmt9(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn write_ply_document(path: &Path, doc: &PlyDocument) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let format = match doc.format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {format} 1.0\nelement vertex {}", doc.vertices.len())?;
    let scalar = if doc.format == PlyFormat::Ascii {
        "float"
    } else {
        "double"
    };
    let mut names = vec!["x", "y", "z"];
    if doc.normals.is_some() {
        names.extend(["nx", "ny", "nz"]);
    }
    for n in &names {
        writeln!(w, "property {scalar} {n}")?;
    }
    if !doc.faces.is_empty() {
        writeln!(
            w,
            "element face {}\nproperty list uchar int vertex_indices",
            doc.faces.len()
        )?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in doc.vertices.iter().enumerate() {
        let mut vals = vec![p.x, p.y, p.z];
        if let Some(n) = &doc.normals {
            vals.extend([n[i].x, n[i].y, n[i].z]);
        }
        match doc.format {
            PlyFormat::Ascii => {
                let s: Vec<String> = vals.iter().map(|&v| fmt9(v)).collect();
                writeln!(w, "{}", s.join(" "))?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in vals {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    for f in &doc.faces {
        match doc.format {
            PlyFormat::Ascii => writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?,
            PlyFormat::BinaryLittleEndian => {
                w.write_all(&[3u8])?;
                for &v in f {
                    let v = i32::try_from(v).map_err(|_| Error::InvalidShape("vertex index exceeds i32".into()))?;
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a 3D shape; 2D shapes are written with `z = 0`.
pub fn write_ply(path: &Path, shape: &OrientedPointSet, format: PlyFormat) -> Result<()> {
    write_ply_document(path, &PlyDocument::from_shape(shape, format))
}

/// Reads `x, y[, z][, nx, ny[, nz]]` columns (any order, header required).
/// `dim = None` infers 3 when a `z` column exists.
pub fn read_points_csv(
    path: &Path,
    dim: Option<usize>,
    connectivity: Option<Connectivity>,
) -> Result<OrientedPointSet> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let dim = dim.unwrap_or(if col("z").is_some() { 3 } else { 2 });
    if dim != 2 && dim != 3 {
        return Err(Error::InvalidDimension(dim));
    }
    let axes: &[&str] = if dim == 2 { &["x", "y"] } else { &["x", "y", "z"] };
    let naxes: &[&str] = if dim == 2 { &["nx", "ny"] } else { &["nx", "ny", "nz"] };
    let pos: Vec<usize> = axes
        .iter()
        .map(|a| col(a).ok_or_else(|| parse_err(path, 1, format!("missing column '{a}'"))))
        .collect::<Result<_>>()?;
    let npos: Vec<Option<usize>> = naxes.iter().map(|a| col(a)).collect();
    let has_normals = match npos.iter().filter(|p| p.is_some()).count() {
        0 => false,
        k if k == dim => true,
        _ => return Err(parse_err(path, 1, "normal columns are incomplete")),
    };
    let width = headers.len();
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        if record.len() != width {
            return Err(parse_err(
                path,
                line,
                format!("expected {width} columns, found {}", record.len()),
            ));
        }
        let get = |c: usize| -> Result<f64> {
            record[c]
                .parse::<f64>()
                .map_err(|e| parse_err(path, line, format!("column {}: {e}", &headers[c])))
        };
        let mut p = Vec3::zeros();
        for (k, &c) in pos.iter().enumerate() {
            p[k] = get(c)?;
        }
        points.push(p);
        if has_normals {
            let mut u = Vec3::zeros();
            for (k, c) in npos.iter().enumerate() {
                u[k] = get(c.expect("complete normal columns"))?;
            }
            normals.push(unit_normal(u).map_err(|len| parse_err(path, line, format!("normal has length {len}")))?);
        }
    }
    let mut shape = OrientedPointSet::new(dim, points)?;
    if has_normals {
        shape = shape.with_normals(normals)?;
    }
    if let Some(c) = connectivity {
        shape = shape.with_connectivity(c)?;
    }
    Ok(shape)
}

/// Writes points (and normals when present) with a header row.
pub fn write_points_csv(path: &Path, shape: &OrientedPointSet) -> Result<()> {
    write_points_csv_to(fs::File::create(path)?, shape)
}

pub fn write_points_csv_to<W: Write>(writer: W, shape: &OrientedPointSet) -> Result<()> {
    let d = shape.dim();
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ["x", "y", "z"][..d].to_vec();
    if shape.normals().is_some() {
        header.extend(&["nx", "ny", "nz"][..d]);
    }
    w.write_record(&header)?;
    for (i, p) in shape.points().iter().enumerate() {
        let mut row: Vec<String> = (0..d).map(|k| fmt9(p[k])).collect();
        if let Some(n) = shape.normals() {
            row.extend((0..d).map(|k| fmt9(n[i][k])));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a shape from `.ply` or `.csv` by extension.
pub fn read_shape(path: &Path, connectivity: Option<Connectivity>) -> Result<OrientedPointSet> {
    match extension(path).as_deref() {
        Some("ply") => {
            let shape = read_ply(path)?;
            match connectivity {
                Some(c) => shape.without_connectivity().with_connectivity(c),
                None => Ok(shape),
            }
        }
        Some("csv") => read_points_csv(path, None, connectivity),
        _ => Err(Error::UnsupportedFormat(format!(
            "{} (expected .ply or .csv)",
            path.display()
        ))),
    }
}

pub fn write_shape(path: &Path, shape: &OrientedPointSet) -> Result<()> {
    match extension(path).as_deref() {
        Some("ply") => write_ply(path, shape, PlyFormat::Ascii),
        Some("csv") => write_points_csv(path, shape),
        _ => Err(Error::UnsupportedFormat(format!(
            "{} (expected .ply or .csv)",
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Options for one registration run, as read from a `--config` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cost: CostFamily,
    /// Defaults to the rotation matching the shape dimension.
    pub transform: Option<TransformFamily>,
    pub mode: Option<CostMode>,
    pub schedule: Option<AnnealingSchedule>,
    pub subsample: Option<usize>,
    pub correspondences: Option<CorrespondenceOptions>,
    pub seed: u64,
    /// Estimate normals for shapes that lack them.
    pub normals: Option<NormalEstimatorConfig>,
    pub with_translation: bool,
    pub tps_grid: Option<Vec<usize>>,
    pub max_evals: usize,
    pub multi_start: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let r = RegisterOptions::default();
        Self {
            cost: r.cost,
            transform: None,
            mode: None,
            schedule: None,
            subsample: None,
            correspondences: None,
            seed: 0,
            normals: None,
            with_translation: false,
            tps_grid: None,
            max_evals: r.max_evals,
            multi_start: r.multi_start,
        }
    }
}

impl RunConfig {
    /// Registration options for shapes of dimension `dim`, after consistency checks.
    pub fn register_options(&self, dim: usize) -> Result<RegisterOptions> {
        let rigid = if dim == 2 {
            TransformFamily::Rotation2d
        } else {
            TransformFamily::Rotation3d
        };
        let transform = self.transform.unwrap_or(rigid);
        if transform.is_rigid() && transform != rigid {
            return Err(Error::InvalidConfig(format!(
                "{transform:?} cannot register {dim}D shapes"
            )));
        }
        if transform == TransformFamily::Tps && !self.cost.uses_positions() {
            return Err(Error::InvalidConfig(format!(
                "cost '{}' cannot drive a thin-plate spline",
                self.cost
            )));
        }
        if self.mode == Some(CostMode::RigidScalarProduct) && !transform.is_rigid() {
            return Err(Error::InvalidConfig(
                "rigid scalar-product mode needs a rotation".into(),
            ));
        }
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        if let Some(c) = &self.correspondences {
            if c.k == 0 {
                return Err(Error::InvalidConfig("correspondence k must be at least 1".into()));
            }
        }
        if self.subsample == Some(0) || self.max_evals == 0 || self.multi_start == 0 {
            return Err(Error::InvalidConfig(
                "subsample, max_evals and multi_start must be positive".into(),
            ));
        }
        Ok(RegisterOptions {
            cost: self.cost,
            transform,
            mode: self.mode,
            schedule: self.schedule,
            subsample: self.subsample,
            seed: self.seed,
            with_translation: self.with_translation,
            correspondences: self.correspondences.clone(),
            tps_grid: self.tps_grid.clone(),
            max_evals: self.max_evals,
            multi_start: self.multi_start,
            ..RegisterOptions::default()
        })
    }
}

/// Default correspondence options, for callers enabling them by flag.
pub fn default_correspondences() -> CorrespondenceOptions {
    CorrespondenceOptions::default()
}

/// `path` with its extension replaced, for derived output names.
pub fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    const TETRA: &str = "ply\nformat ascii 1.0\ncomment tiny fixture\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 2\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255\n1 0 0 0\n0 1 0 0\n0 0 1 0\n3 0 2 1\n3 0 1 3\n";

    fn write(dir: &Path, name: &str, body: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn ascii_tetrahedron() {
        let d = tempdir().unwrap();
        let s = read_ply(&write(d.path(), "t.ply", TETRA.as_bytes())).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.faces().unwrap().len(), 2);
        assert!(s.normals().is_none());
    }

    #[test]
    fn normals_are_renormalized_or_rejected() {
        let d = tempdir().unwrap();
        let head = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\nend_header\n";
        let ok = read_ply(&write(
            d.path(),
            "a.ply",
            format!("{head}0 0 0 0 0 1.0005\n").as_bytes(),
        ))
        .unwrap();
        assert_eq!(ok.normals().unwrap()[0], Vec3::z());
        let bad = read_ply(&write(d.path(), "b.ply", format!("{head}0 0 0 0 0 1.01\n").as_bytes()));
        assert!(matches!(bad, Err(Error::Parse { line: 11, .. })), "{bad:?}");
    }

    #[test]
    fn truncated_body_names_element() {
        let d = tempdir().unwrap();
        let cut = TETRA.rsplit_once("3 0 1 3\n").unwrap().0;
        let err = read_ply(&write(d.path(), "t.ply", cut.as_bytes())).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("face") && msg.contains("1 of 2"), "{msg}");
    }

    #[test]
    fn malformed_header_reports_line() {
        let d = tempdir().unwrap();
        let text = TETRA.replace("property float y", "property float");
        let err = read_ply(&write(d.path(), "t.ply", text.as_bytes())).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 6, .. }), "{err:?}");
        let text = TETRA.replace("ascii", "binary_big_endian");
        let err = read_ply(&write(d.path(), "t.ply", text.as_bytes())).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
    }

    #[test]
    fn binary_and_ascii_round_trip() {
        let d = tempdir().unwrap();
        let src = read_ply(&write(d.path(), "t.ply", TETRA.as_bytes())).unwrap();
        let normals = vec![Vec3::new(0.6, 0.8, 0.0), Vec3::x(), Vec3::y(), Vec3::z()];
        let shape = OrientedPointSet::new(
            3,
            vec![
                Vec3::new(0.1, 0.2, 0.3),
                Vec3::new(1.0 / 3.0, 0.0, 2e-7),
                Vec3::new(-4.5, 1e5, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
        )
        .unwrap()
        .with_normals(normals)
        .unwrap()
        .with_connectivity(src.connectivity().unwrap().clone())
        .unwrap();
        let bin = d.path().join("b.ply");
        write_ply(&bin, &shape, PlyFormat::BinaryLittleEndian).unwrap();
        assert_eq!(read_ply(&bin).unwrap(), shape);
        let asc = d.path().join("a.ply");
        write_ply(&asc, &shape, PlyFormat::Ascii).unwrap();
        let first = fs::read_to_string(&asc).unwrap();
        let once = read_ply(&asc).unwrap();
        write_ply(&asc, &once, PlyFormat::Ascii).unwrap();
        assert_eq!(fs::read_to_string(&asc).unwrap(), first);
        assert!((once.points()[1].x - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn csv_points() {
        let d = tempdir().unwrap();
        let s = read_points_csv(&write(d.path(), "p.csv", b"x,y\n0,0\n1,0\n0,1\n"), Some(2), None).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.normals().is_none());
        let s = read_points_csv(&write(d.path(), "n.csv", b"x,y,nx,ny\n0,0,1,0\n1,0,0,1\n"), None, None).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.normals().unwrap()[1], Vec3::y());
        let err = read_points_csv(&write(d.path(), "m.csv", b"x,y\n0,0\n1,0,5\n"), None, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn csv_round_trip_with_connectivity() {
        let d = tempdir().unwrap();
        let s = crate::harness::gen_curve(crate::harness::CurveKind::Fourier, 20, 1).unwrap();
        let p = d.path().join("c.csv");
        let closed = Some(Connectivity::Polyline { closed: true });
        write_points_csv(&p, &s).unwrap();
        let once = read_points_csv(&p, None, closed.clone()).unwrap();
        assert_eq!(once.connectivity(), s.connectivity());
        write_points_csv(&p, &once).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let twice = read_points_csv(&p, None, closed).unwrap();
        assert_eq!(twice, once);
        write_points_csv(&p, &twice).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), text);
        for (a, b) in once.points().iter().zip(s.points()) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn run_config_checks() {
        let c: RunConfig = serde_json::from_str(r#"{"cost": "u", "transform": "tps"}"#).unwrap();
        assert!(c.register_options(2).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"cost": "xu", "seed": 4}"#).unwrap();
        let o = c.register_options(3).unwrap();
        assert_eq!(o.transform, TransformFamily::Rotation3d);
        assert_eq!(o.seed, 4);
        assert!(serde_json::from_str::<RunConfig>(r#"{"cots": "x"}"#).is_err());
    }
}
