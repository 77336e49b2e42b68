use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use super::Surfel;
use crate::volume_grid::SurfelKey;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshVertex {
    pub key: SurfelKey,
    pub surfel: Surfel,
}

/// Shared-vertex triangle mesh whose vertices are surfels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<MeshVertex>,
    pub triangles: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn positions(&self) -> impl Iterator<Item = Point3<f64>> + '_ {
        self.vertices.iter().map(|v| v.surfel.position)
    }

    /// Number of triangles using each undirected edge.
    pub fn edge_usage(&self) -> HashMap<(u32, u32), usize> {
        let mut usage = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *usage.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        usage
    }

    /// Every edge shared by exactly two triangles traversing it in opposite directions.
    pub fn is_closed(&self) -> bool {
        let mut directed = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_insert(0usize) += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_usage().len() as i64 + self.triangles.len() as i64
    }

    pub fn write_ply(&self, path: &Path, format: PlyFormat) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_ply_to(&mut w, format)
            .map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_ply_to(&self, w: &mut impl Write, format: PlyFormat) -> std::io::Result<()> {
        let fmt = match format {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary_little_endian",
        };
        writeln!(w, "ply")?;
        writeln!(w, "format {fmt} 1.0")?;
        writeln!(w, "element vertex {}", self.vertices.len())?;
        for p in ["x", "y", "z", "nx", "ny", "nz", "confidence"] {
            writeln!(w, "property float {p}")?;
        }
        writeln!(w, "element face {}", self.triangles.len())?;
        writeln!(w, "property list uchar int vertex_indices")?;
        writeln!(w, "end_header")?;
        for v in &self.vertices {
            let s = &v.surfel;
            let vals = [
                s.position.x,
                s.position.y,
                s.position.z,
                s.normal.x,
                s.normal.y,
                s.normal.z,
                s.confidence.clamp(0.0, 1.0),
            ]
            .map(|x| x as f32);
            match format {
                PlyFormat::Ascii => {
                    let line: Vec<String> = vals.iter().map(|x| x.to_string()).collect();
                    writeln!(w, "{}", line.join(" "))?;
                }
                PlyFormat::BinaryLittleEndian => {
                    for x in vals {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        for t in &self.triangles {
            match format {
                PlyFormat::Ascii => writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?,
                PlyFormat::BinaryLittleEndian => {
                    w.write_all(&[3u8])?;
                    for i in t {
                        w.write_all(&(*i as i32).to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Geometry read back from a PLY file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyMesh {
    pub positions: Vec<Point3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub confidence: Vec<f64>,
    pub triangles: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
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
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

impl PlyMesh {
    /// Reads vertex positions (plus normals / confidence when present) and
    /// triangular faces from an ASCII or binary little-endian PLY file.
    pub fn read(path: &Path) -> Result<PlyMesh> {
        let bad = |reason: &str| Error::Ply {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);

        let mut line = String::new();
        let mut next_line = |r: &mut BufReader<File>| -> Result<String> {
            line.clear();
            let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(bad("unexpected end of header"));
            }
            Ok(line.trim_end().to_string())
        };
        if next_line(&mut r)? != "ply" {
            return Err(bad("missing magic"));
        }
        let mut binary = None;
        let mut elements: Vec<Element> = Vec::new();
        loop {
            let l = next_line(&mut r)?;
            let tok: Vec<&str> = l.split_whitespace().collect();
            match tok.as_slice() {
                ["format", "ascii", _] => binary = Some(false),
                ["format", "binary_little_endian", _] => binary = Some(true),
                ["format", other, _] => return Err(bad(&format!("unsupported format {other}"))),
                ["comment", ..] | ["obj_info", ..] => {}
                ["element", name, count] => elements.push(Element {
                    name: name.to_string(),
                    count: count.parse().map_err(|_| bad("bad element count"))?,
                    props: Vec::new(),
                }),
                ["property", "list", ct, it, name] => {
                    let (ct, it) = Scalar::parse(ct)
                        .zip(Scalar::parse(it))
                        .ok_or_else(|| bad("bad list type"))?;
                    elements
                        .last_mut()
                        .ok_or_else(|| bad("property before element"))?
                        .props
                        .push(Property::List(name.to_string(), ct, it));
                }
                ["property", ty, name] => {
                    let ty = Scalar::parse(ty).ok_or_else(|| bad("bad property type"))?;
                    elements
                        .last_mut()
                        .ok_or_else(|| bad("property before element"))?
                        .props
                        .push(Property::Scalar(name.to_string(), ty));
                }
                ["end_header"] => break,
                _ => return Err(bad(&format!("unrecognized header line '{l}'"))),
            }
        }
        let binary = binary.ok_or_else(|| bad("missing format line"))?;

        let mut body = Vec::new();
        r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
        let text = if binary {
            String::new()
        } else {
            String::from_utf8_lossy(&body).into_owned()
        };
        let mut words = text.split_whitespace();
        let mut offset = 0usize;
        let mut read = |ty: Scalar| -> Result<f64> {
            if binary {
                let end = offset + ty.size();
                let bytes = body.get(offset..end).ok_or_else(|| bad("truncated body"))?;
                offset = end;
                Ok(ty.read_le(bytes))
            } else {
                words
                    .next()
                    .ok_or_else(|| bad("truncated body"))?
                    .parse()
                    .map_err(|_| bad("bad number"))
            }
        };

        let mut mesh = PlyMesh::default();
        for el in &elements {
            for _ in 0..el.count {
                let mut named: HashMap<&str, f64> = HashMap::new();
                let mut list = Vec::new();
                for p in &el.props {
                    match p {
                        Property::Scalar(name, ty) => {
                            named.insert(name, read(*ty)?);
                        }
                        Property::List(name, ct, it) => {
                            let n = read(*ct)? as usize;
                            let vals = (0..n).map(|_| read(*it)).collect::<Result<Vec<_>>>()?;
                            if name == "vertex_indices" || name == "vertex_index" {
                                list = vals;
                            }
                        }
                    }
                }
                match el.name.as_str() {
                    "vertex" => {
                        let get = |k: &str| named.get(k).copied();
                        let (x, y, z) = get("x")
                            .zip(get("y"))
                            .zip(get("z"))
                            .map(|((x, y), z)| (x, y, z))
                            .ok_or_else(|| bad("vertex without x/y/z"))?;
                        mesh.positions.push(Point3::new(x, y, z));
                        if let (Some(nx), Some(ny), Some(nz)) = (get("nx"), get("ny"), get("nz")) {
                            mesh.normals.push(Vector3::new(nx, ny, nz));
                        }
                        if let Some(c) = get("confidence") {
                            mesh.confidence.push(c);
                        }
                    }
                    "face" => {
                        for k in 1..list.len().saturating_sub(1) {
                            mesh.triangles.push([
                                list[0] as u32,
                                list[k] as u32,
                                list[k + 1] as u32,
                            ]);
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(mesh)
    }
}
