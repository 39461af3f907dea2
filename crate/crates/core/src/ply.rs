//! Binary little-endian PLY in the layout used by Gaussian splat tools:
//! `x y z f_dc_0..2 opacity scale_0..2 rot_0..3`, degree-0 color only.
//!
//! Values are written as `double` so a save/load round trip is bit-exact.
//! The rest-state snapshot is stored in extra `init_*` properties that other
//! readers ignore; files without them load with rest = current.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::quat::Quat;
use crate::scene::{Gaussian3D, GaussianScene};

const CURRENT: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];
const INIT: [&str; 13] = [
    "init_x",
    "init_y",
    "init_z",
    "init_f_dc_0",
    "init_f_dc_1",
    "init_f_dc_2",
    "init_scale_0",
    "init_scale_1",
    "init_scale_2",
    "init_rot_0",
    "init_rot_1",
    "init_rot_2",
    "init_rot_3",
];

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

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Ply {
        offset,
        message: message.into(),
    }
}

pub fn save_scene(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_scene(scene)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scene(&bytes)
}

pub fn encode_scene(scene: &GaussianScene) -> Result<Vec<u8>> {
    if scene.gaussians.is_empty() {
        return Err(Error::EmptyScene);
    }
    let bg = scene.background;
    let mut out = Vec::new();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("comment background {} {} {}\n", bg.x, bg.y, bg.z));
    header.push_str(&format!("element vertex {}\n", scene.gaussians.len()));
    for name in CURRENT.iter().chain(INIT.iter()) {
        header.push_str(&format!("property double {name}\n"));
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    for g in &scene.gaussians {
        let current = [
            g.mu.x,
            g.mu.y,
            g.mu.z,
            g.color.x,
            g.color.y,
            g.color.z,
            g.opacity_logit,
            g.log_scale.x,
            g.log_scale.y,
            g.log_scale.z,
            g.q.w,
            g.q.x,
            g.q.y,
            g.q.z,
        ];
        let init = [
            g.mu_init.x,
            g.mu_init.y,
            g.mu_init.z,
            g.color_init.x,
            g.color_init.y,
            g.color_init.z,
            g.log_scale_init.x,
            g.log_scale_init.y,
            g.log_scale_init.z,
            g.q_init.w,
            g.q_init.x,
            g.q_init.y,
            g.q_init.z,
        ];
        for v in current.iter().chain(init.iter()) {
            out.write_all(&v.to_le_bytes()).expect("write to Vec");
        }
    }
    Ok(out)
}

struct Property {
    name: String,
    kind: Scalar,
    offset: usize,
}

pub fn decode_scene(bytes: &[u8]) -> Result<GaussianScene> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let rest = &bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(start, "unterminated header"))?;
        *pos = start + end + 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| parse_err(start, "header is not UTF-8"))?
            .trim_end_matches('\r')
            .to_string();
        Ok((start, line))
    };

    let (off, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(parse_err(off, "missing 'ply' magic"));
    }
    let mut background = Vector3::zeros();
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<Property> = Vec::new();
    let mut stride = 0usize;
    let mut format_ok = false;
    loop {
        let (off, line) = next_line(&mut pos)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", other, ..] => {
                return Err(parse_err(off, format!("unsupported format '{other}'")));
            }
            ["comment", "background", r, g, b] => {
                let parse = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| parse_err(off, format!("bad background value '{s}'")))
                };
                background = Vector3::new(parse(r)?, parse(g)?, parse(b)?);
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                if vertex_count.is_some() && !in_vertex {
                    continue;
                }
                if *name == "vertex" {
                    let n = count
                        .parse::<usize>()
                        .map_err(|_| parse_err(off, format!("bad vertex count '{count}'")))?;
                    vertex_count = Some(n);
                    in_vertex = true;
                } else if vertex_count.is_some() {
                    // Elements after the vertex block are ignored.
                    in_vertex = false;
                } else {
                    return Err(parse_err(off, format!("element '{name}' before vertex")));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(parse_err(off, "list properties are not supported on vertices"));
            }
            ["property", kind, name] if in_vertex => {
                let kind = Scalar::parse(kind)
                    .ok_or_else(|| parse_err(off, format!("unknown property type '{kind}'")))?;
                props.push(Property {
                    name: name.to_string(),
                    kind,
                    offset: stride,
                });
                stride += kind.size();
            }
            ["property", ..] => {}
            _ => return Err(parse_err(off, format!("malformed header line '{line}'"))),
        }
    }
    if !format_ok {
        return Err(parse_err(0, "missing 'format binary_little_endian 1.0'"));
    }
    let n = vertex_count.ok_or_else(|| parse_err(pos, "missing vertex element"))?;
    if n == 0 {
        return Err(Error::EmptyScene);
    }
    let find = |name: &str| props.iter().find(|p| p.name == name);
    let mut current = Vec::with_capacity(CURRENT.len());
    for name in CURRENT {
        current.push(find(name).ok_or_else(|| parse_err(pos, format!("missing property '{name}'")))?);
    }
    let init: Option<Vec<&Property>> = INIT.iter().map(|name| find(name)).collect();

    let body = pos;
    let needed = n * stride;
    if bytes.len() < body + needed {
        return Err(parse_err(
            bytes.len(),
            format!("truncated body: expected {needed} bytes of vertex data"),
        ));
    }

    let read = |v: usize, p: &Property| -> Result<f64> {
        let at = body + v * stride + p.offset;
        let x = p.kind.read(&bytes[at..at + p.kind.size()]);
        if !x.is_finite() {
            return Err(parse_err(at, format!("non-finite value in '{}' of vertex {v}", p.name)));
        }
        Ok(x)
    };

    let mut gaussians = Vec::with_capacity(n);
    for v in 0..n {
        let c: Vec<f64> = current.iter().map(|p| read(v, p)).collect::<Result<_>>()?;
        let q = Quat::new(c[10], c[11], c[12], c[13]);
        if q.norm() == 0.0 {
            return Err(parse_err(
                body + v * stride + current[10].offset,
                format!("degenerate quaternion in vertex {v}"),
            ));
        }
        let mu = Vector3::new(c[0], c[1], c[2]);
        let color = Vector3::new(c[3], c[4], c[5]);
        let log_scale = Vector3::new(c[7], c[8], c[9]);
        let mut g = Gaussian3D::new(mu, q, log_scale, c[6], color);
        if let Some(init) = &init {
            let i: Vec<f64> = init.iter().map(|p| read(v, p)).collect::<Result<_>>()?;
            let qi = Quat::new(i[9], i[10], i[11], i[12]);
            if qi.norm() == 0.0 {
                return Err(parse_err(
                    body + v * stride + init[9].offset,
                    format!("degenerate rest quaternion in vertex {v}"),
                ));
            }
            g.mu_init = Vector3::new(i[0], i[1], i[2]);
            g.color_init = Vector3::new(i[3], i[4], i[5]);
            g.log_scale_init = Vector3::new(i[6], i[7], i[8]);
            g.q_init = qi;
        }
        gaussians.push(g);
    }
    GaussianScene::new(gaussians, background)
}
