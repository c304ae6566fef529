//! Binary little-endian PLY for the world cache.
//!
//! Vertex layout: `x y z` (float32), `red green blue` (uint8),
//! `nx ny nz` (float32). Update history rides along as header comments of
//! the form `comment update <frame> <candidates> <added_hole>
//! <added_normal> <rejected>`, which also recovers each point's source
//! frame since the cache is append-only.

use std::io::{BufRead, Write};

use crate::cache::{CachedPoint, UpdateStats, WorldCache};
use crate::camera::Vec3;
use crate::error::{Error, Result};

const VERTEX_PROPERTIES: [(&str, &str); 9] = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("float", "nx"),
    ("float", "ny"),
    ("float", "nz"),
];

const VERTEX_BYTES: usize = 3 * 4 + 3 + 3 * 4;

pub fn quantize_color(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_cache_ply(w: &mut impl Write, cache: &WorldCache) -> Result<()> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    for u in cache.updates() {
        header.push_str(&format!(
            "comment update {} {} {} {} {}\n",
            u.frame, u.candidates, u.added_hole, u.added_normal, u.rejected
        ));
    }
    header.push_str(&format!("element vertex {}\n", cache.len()));
    for (ty, name) in VERTEX_PROPERTIES {
        header.push_str(&format!("property {ty} {name}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let mut buf = Vec::with_capacity(cache.len() * VERTEX_BYTES);
    for p in cache.points() {
        for v in p.position.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend(p.color.iter().map(|&c| quantize_color(c)));
        for v in p.normal.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn parse_update(fields: &[&str]) -> Result<UpdateStats> {
    let nums: Vec<usize> = fields
        .iter()
        .map(|f| f.parse().map_err(|_| Error::Format(format!("bad update comment field {f:?}"))))
        .collect::<Result<_>>()?;
    if nums.len() != 5 {
        return Err(Error::Format("update comment needs 5 fields".into()));
    }
    Ok(UpdateStats {
        frame: nums[0] as u32,
        candidates: nums[1],
        added_hole: nums[2],
        added_normal: nums[3],
        rejected: nums[4],
    })
}

pub fn read_cache_ply(r: &mut impl BufRead) -> Result<WorldCache> {
    let mut line = String::new();
    let mut next_line = |r: &mut dyn BufRead| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("unexpected end of PLY header".into()));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(r)? != "ply" {
        return Err(Error::Format("missing ply magic".into()));
    }
    let mut vertices: Option<usize> = None;
    let mut props = Vec::new();
    let mut updates = Vec::new();
    let mut format_ok = false;
    loop {
        let l = next_line(r)?;
        let fields: Vec<&str> = l.split_whitespace().collect();
        match fields.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", ..] => return Err(Error::Format(format!("unsupported PLY format: {l}"))),
            ["comment", "update", rest @ ..] => updates.push(parse_update(rest)?),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                vertices = Some(n.parse().map_err(|_| Error::Format("bad vertex count".into()))?)
            }
            ["element", other, ..] => {
                return Err(Error::Format(format!("unexpected PLY element {other:?}")))
            }
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            _ => return Err(Error::Format(format!("unrecognized PLY header line {l:?}"))),
        }
    }
    if !format_ok {
        return Err(Error::Format("PLY format line missing".into()));
    }
    let n = vertices.ok_or_else(|| Error::Format("PLY has no vertex element".into()))?;
    let expected: Vec<(String, String)> = VERTEX_PROPERTIES
        .iter()
        .map(|(t, p)| (t.to_string(), p.to_string()))
        .collect();
    if props != expected {
        return Err(Error::Format(
            "PLY vertex layout must be x y z red green blue nx ny nz".into(),
        ));
    }

    let mut bytes = vec![0u8; n * VERTEX_BYTES];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated PLY vertex data".into()))?;
    let f = |b: &[u8]| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;

    // Source frames follow from the append-only update history; without a
    // history every point is attributed to frame 0.
    let mut frames = Vec::with_capacity(n);
    for u in &updates {
        frames.extend(std::iter::repeat_n(u.frame, u.added()));
    }
    let mut points = Vec::with_capacity(n);
    for (k, v) in bytes.chunks_exact(VERTEX_BYTES).enumerate() {
        points.push(CachedPoint {
            position: Vec3::new(f(&v[0..4]), f(&v[4..8]), f(&v[8..12])),
            color: [v[12], v[13], v[14]].map(|c| c as f32 / 255.0),
            normal: Vec3::new(f(&v[15..19]), f(&v[19..23]), f(&v[23..27])),
            source_frame: frames.get(k).copied().unwrap_or(0),
        });
    }
    if updates.is_empty() {
        updates.push(UpdateStats {
            frame: 0,
            candidates: n,
            added_hole: n,
            ..UpdateStats::default()
        });
    }
    WorldCache::from_parts(points, updates)
}
