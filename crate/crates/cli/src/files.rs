//! On-disk session layout: frame directories, PNG, staged outputs and the
//! run manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use worldcache::io::{pfm, ply::quantize_color, read_cameras, Pfm};
use worldcache::synthetic::TrajectorySpec;
use worldcache::{Camera, ColorImage, DepthMap, Grid, Mask, RgbdFrame};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    String::from_utf8(read_bytes(path)?).map_err(|_| CliError::new("parse", format!("{} is not UTF-8", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(CliError::from)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn read_depth(path: &Path) -> CliResult<DepthMap> {
    Ok(pfm::from_bytes(&read_bytes(path)?)?.to_depth()?)
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> CliResult<()> {
    write_bytes(path, &pfm::to_bytes(&Pfm::from_depth(depth))?)
}

pub fn write_pfm(path: &Path, pfm: &Pfm) -> CliResult<()> {
    write_bytes(path, &pfm::to_bytes(pfm)?)
}

fn png_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new("format", format!("{}: {e}", path.display()))
}

/// 8-bit PNG as linear `[0, 1]` values with `channels` entries per pixel
/// (1 or 3); gray is broadcast and alpha dropped.
fn read_png_channels(path: &Path, channels: usize) -> CliResult<(usize, usize, Vec<f32>)> {
    let file = File::open(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| png_error(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
    let src = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(png_error(path, "palette was not expanded")),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut out = Vec::with_capacity(w * h * channels);
    for px in buf[..info.buffer_size()].chunks_exact(src) {
        let v = |c: usize| px[c] as f32 / 255.0;
        match (channels, src) {
            (1, _) => out.push(v(0)),
            (_, 1 | 2) => out.extend([v(0); 3]),
            _ => out.extend([v(0), v(1), v(2)]),
        }
    }
    Ok((w, h, out))
}

pub fn read_png_rgb(path: &Path) -> CliResult<ColorImage> {
    let (w, h, v) = read_png_channels(path, 3)?;
    Ok(Grid::from_vec(w, h, v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())?)
}

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, data: &[u8]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| png_error(path, e))?;
    writer.write_image_data(data).map_err(|e| png_error(path, e))?;
    writer.finish().map_err(|e| png_error(path, e))
}

pub fn write_png_rgb(path: &Path, img: &ColorImage) -> CliResult<()> {
    let data: Vec<u8> = img.as_slice().iter().flat_map(|c| c.map(quantize_color)).collect();
    write_png(path, img.width(), img.height(), png::ColorType::Rgb, &data)
}

pub fn write_png_mask(path: &Path, mask: &Mask) -> CliResult<()> {
    let data: Vec<u8> = mask.as_slice().iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_png(path, mask.width(), mask.height(), png::ColorType::Grayscale, &data)
}

/// A mask file: PNG (gray > 0.5) or PFM (value > 0.5).
pub fn read_mask(path: &Path) -> CliResult<Mask> {
    if path.extension().is_some_and(|e| e == "pfm") {
        let g = pfm::from_bytes(&read_bytes(path)?)?.to_scalar()?;
        return Ok(g.map(|&v| v > 0.5));
    }
    let (w, h, v) = read_png_channels(path, 1)?;
    Ok(Grid::from_vec(w, h, v.into_iter().map(|x| x > 0.5).collect())?)
}

pub fn frame_name(prefix: &str, i: usize, ext: &str) -> String {
    format!("{prefix}_{i:04}.{ext}")
}

/// Indices of `<prefix>_NNNN.<ext>` files in `dir`; they must run 0..n.
pub fn indexed_files(dir: &Path, prefix: &str, ext: &str) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(format!("cannot list {}: {e}", dir.display())))?;
    let mut found = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(e.to_string()))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(idx) = name
            .strip_prefix(prefix)
            .and_then(|s| s.strip_prefix('_'))
            .and_then(|s| s.strip_suffix(ext))
            .and_then(|s| s.strip_suffix('.'))
        else {
            continue;
        };
        if let Ok(i) = idx.parse::<usize>() {
            found.insert(i, entry.path());
        }
    }
    if found.is_empty() {
        return Err(CliError::new(
            "invalid_input",
            format!("no {prefix}_NNNN.{ext} files in {}", dir.display()),
        ));
    }
    for (expect, &i) in found.keys().enumerate() {
        if i != expect {
            return Err(CliError::new(
                "invalid_input",
                format!("{}: {prefix} files must be numbered from 0 without gaps, missing {expect}", dir.display()),
            ));
        }
    }
    Ok(found.into_values().collect())
}

/// Paired `rgb_NNNN.png` / `depth_NNNN.pfm` frames.
pub fn read_frames(dir: &Path) -> CliResult<(Vec<RgbdFrame>, Vec<PathBuf>)> {
    let depths = indexed_files(dir, "depth", "pfm")?;
    let mut frames = Vec::with_capacity(depths.len());
    let mut inputs = Vec::new();
    for (i, dp) in depths.into_iter().enumerate() {
        let rp = dir.join(frame_name("rgb", i, "png"));
        frames.push(RgbdFrame::new(read_png_rgb(&rp)?, read_depth(&dp)?)?);
        inputs.push(rp);
        inputs.push(dp);
    }
    Ok((frames, inputs))
}

pub fn write_frame(dir: &Path, i: usize, frame: &RgbdFrame) -> CliResult<()> {
    write_png_rgb(&dir.join(frame_name("rgb", i, "png")), &frame.rgb)?;
    write_depth(&dir.join(frame_name("depth", i, "pfm")), &frame.depth)
}

/// Cameras from either a camera-record array or a trajectory spec.
pub fn load_cameras(path: &Path) -> CliResult<Vec<Camera>> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))?;
    let cams = if value.is_array() {
        read_cameras(&text).map_err(|e| CliError::from(e).context(path))?
    } else {
        let spec: TrajectorySpec = serde_json::from_value(value).map_err(|e| CliError::parse(path, e))?;
        spec.cameras()?
    };
    if cams.is_empty() {
        return Err(CliError::new("invalid_input", format!("{} holds no cameras", path.display())));
    }
    Ok(cams)
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::parse(path, e))
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

/// What a run read, wrote and how long each stage took.
#[derive(Serialize)]
pub struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config_sha256: String,
    config: serde_json::Value,
    inputs: Vec<InputRecord>,
    outputs: Vec<String>,
    timings_ms: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize) -> CliResult<Self> {
        let config = serde_json::to_value(config).map_err(CliError::from)?;
        let bytes = serde_json::to_vec(&config).map_err(CliError::from)?;
        Ok(Self {
            tool: "worldcache",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256: sha256_hex(&bytes),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let sha256 = sha256_hex(&read_bytes(path)?);
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> CliResult<()> {
        for p in paths {
            self.input(p)?;
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let t = std::time::Instant::now();
        let out = f()?;
        self.timings_ms.insert(stage.to_string(), t.elapsed().as_secs_f64() * 1e3);
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }
}

struct Staged {
    tmp: PathBuf,
    target: PathBuf,
    dir: bool,
}

/// Outputs are built under hidden sibling paths and renamed into place by
/// [`Staging::commit`]; anything uncommitted is removed on drop.
#[derive(Default)]
pub struct Staging {
    items: Vec<Staged>,
}

fn sibling_tmp(target: &Path) -> CliResult<PathBuf> {
    let name = target
        .file_name()
        .ok_or_else(|| CliError::new("invalid_input", format!("output path {} has no file name", target.display())))?;
    let parent = match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    if !parent.is_dir() {
        return Err(CliError::io(format!("output parent {} does not exist", parent.display())));
    }
    Ok(parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id())))
}

impl Staging {
    /// Temp directory that becomes `target`. An existing `target` is only
    /// replaced if it is empty or holds a previous run's manifest.
    pub fn dir(&mut self, target: &Path) -> CliResult<PathBuf> {
        if target.exists() {
            let replaceable = target.is_dir()
                && (target.join(MANIFEST).is_file()
                    || fs::read_dir(target).map_err(|e| CliError::io(e.to_string()))?.next().is_none());
            if !replaceable {
                return Err(CliError::io(format!(
                    "{} exists and is not a previous output directory",
                    target.display()
                )));
            }
        }
        let tmp = sibling_tmp(target)?;
        let _ = fs::remove_dir_all(&tmp);
        fs::create_dir(&tmp).map_err(|e| CliError::io(format!("cannot create {}: {e}", tmp.display())))?;
        self.items.push(Staged {
            tmp: tmp.clone(),
            target: target.to_path_buf(),
            dir: true,
        });
        Ok(tmp)
    }

    /// Temp file path that becomes `target`.
    pub fn file(&mut self, target: &Path) -> CliResult<PathBuf> {
        if target.is_dir() {
            return Err(CliError::io(format!("{} is a directory", target.display())));
        }
        let tmp = sibling_tmp(target)?;
        self.items.push(Staged {
            tmp: tmp.clone(),
            target: target.to_path_buf(),
            dir: false,
        });
        Ok(tmp)
    }

    pub fn commit(mut self) -> CliResult<()> {
        for item in std::mem::take(&mut self.items) {
            if item.dir && item.target.exists() {
                fs::remove_dir_all(&item.target)
                    .map_err(|e| CliError::io(format!("cannot replace {}: {e}", item.target.display())))?;
            }
            fs::rename(&item.tmp, &item.target)
                .map_err(|e| CliError::io(format!("cannot move output to {}: {e}", item.target.display())))?;
        }
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        for item in &self.items {
            if item.dir {
                let _ = fs::remove_dir_all(&item.tmp);
            } else {
                let _ = fs::remove_file(&item.tmp);
            }
        }
    }
}

/// Writes `text` to stdout, ignoring a closed pipe.
pub fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}
