use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use worldcache::align::{
    align_disparity, align_disparity_pooled, apply_metric, metric_scale, metric_scale_pooled, AlignmentSolution,
    MetricScale, DEFAULT_QUANTILE_HI, DEFAULT_QUANTILE_LO,
};
use worldcache::condition::{make_condition, pack_conditions};
use worldcache::io::protocol::{serve_denoiser as serve, ExternDenoiser};
use worldcache::io::{ply::quantize_color, read_cache_ply, write_cache_ply, write_cameras, Pfm};
use worldcache::sampler::{run_autoregressive, Denoiser, GroundTruthDenoiser, IdentityDenoiser};
use worldcache::synthetic::{orbit_room_scene, orbit_room_trajectory, render_view, SceneSpec};
use worldcache::{Camera, DepthMap, Mask, RgbdFrame, WorldCache};

use crate::error::{CliError, CliResult};
use crate::files::*;
use crate::session::SessionConfig;
use crate::{
    AlignArgs, CacheBuildArgs, ConditionRenderArgs, DenoiserKind, ExportPlyArgs, FixtureArgs, OracleRenderArgs,
    SampleArgs, ServeArgs, ServeKind, StatsArgs,
};

fn load_cache(path: &Path) -> CliResult<WorldCache> {
    let bytes = read_bytes(path)?;
    read_cache_ply(&mut &bytes[..]).map_err(|e| CliError::from(e).context(path))
}

fn write_cache(path: &Path, cache: &WorldCache) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    write_cache_ply(&mut w, cache)?;
    w.flush().map_err(|e| CliError::io(e.to_string()))
}

fn write_camera_file(path: &Path, cams: &[Camera]) -> CliResult<()> {
    write_bytes(path, write_cameras(cams)?.as_bytes())
}

fn load_scene(path: &Path) -> CliResult<SceneSpec> {
    let scene: SceneSpec = load_json(path)?;
    scene.validate()?;
    Ok(scene)
}

fn check_frames(frames: &[RgbdFrame], cams: &[Camera]) -> CliResult<()> {
    if frames.len() != cams.len() {
        return Err(CliError::new(
            "invalid_input",
            format!("{} frames but {} cameras", frames.len(), cams.len()),
        ));
    }
    Ok(())
}

fn build_cache(frames: &[RgbdFrame], cams: &[Camera], cfg: &SessionConfig) -> CliResult<WorldCache> {
    let cull = cfg.culling_config();
    let mut cache = WorldCache::init(&frames[0], &cams[0], 0)?;
    for k in 1..frames.len() {
        cache.update(&frames[k], &cams[k], &cull, k as u32)?;
    }
    Ok(cache)
}

pub fn cache_build(cfg: &SessionConfig, a: &CacheBuildArgs) -> CliResult<()> {
    let frames_dir = SessionConfig::resolve(a.frames.as_deref(), &cfg.paths.frames, "frames")?;
    let cams_path = SessionConfig::resolve(a.cameras.as_deref(), &cfg.paths.cameras, "cameras")?;
    let out = SessionConfig::resolve(a.out.as_deref(), &cfg.paths.out, "out")?;
    let manifest_path = a.manifest.clone().unwrap_or_else(|| out.with_extension("manifest.json"));

    let mut m = Manifest::new("cache build", &json!({ "session": cfg, "args": a }))?;
    let mut staging = Staging::default();
    let ply_tmp = staging.file(&out)?;
    let stats_tmp = a.stats.as_deref().map(|s| staging.file(s)).transpose()?;
    let manifest_tmp = staging.file(&manifest_path)?;

    let (frames, inputs, cams) = m.time("load", || {
        let cams = load_cameras(&cams_path)?;
        let (frames, inputs) = read_frames(&frames_dir)?;
        Ok((frames, inputs, cams))
    })?;
    check_frames(&frames, &cams)?;
    cfg.check_aspect(&cams[0].intrinsics);
    m.input(&cams_path)?;
    m.inputs(&inputs)?;

    let cache = m.time("build", || build_cache(&frames, &cams, cfg))?;
    m.time("write", || {
        write_cache(&ply_tmp, &cache)?;
        if let Some(t) = &stats_tmp {
            write_json(t, &cache.summary())?;
        }
        Ok(())
    })?;
    m.output(&out);
    if let Some(s) = &a.stats {
        m.output(s);
    }
    m.write(&manifest_tmp)?;
    staging.commit()
}

#[derive(Serialize)]
struct LayoutSidecar {
    placeholder_height: usize,
    pool_factor: usize,
    depth_min: f64,
    depth_max: f64,
    width: usize,
    frame_height: usize,
    packed_height: usize,
    frames: usize,
}

pub fn condition_render(cfg: &SessionConfig, a: &ConditionRenderArgs) -> CliResult<()> {
    let cams_path = SessionConfig::resolve(a.cameras.as_deref(), &cfg.paths.cameras, "cameras")?;
    let out = SessionConfig::resolve(a.out.as_deref(), &cfg.paths.out, "out")?;
    let mut m = Manifest::new("condition render", &json!({ "session": cfg, "args": a }))?;
    let mut staging = Staging::default();
    let dir = staging.dir(&out)?;

    let (cache, cams) = m.time("load", || Ok((load_cache(&a.cache)?, load_cameras(&cams_path)?)))?;
    m.input(&a.cache)?;
    m.input(&cams_path)?;
    cfg.check_aspect(&cams[0].intrinsics);

    let sampler = cfg.sampler_config();
    let packed = m.time("render", || {
        let conds = cams
            .iter()
            .enumerate()
            .map(|(k, c)| make_condition(&cache, c, &cfg.splat, k))
            .collect::<worldcache::Result<Vec<_>>>()?;
        let packed = pack_conditions(&conds, sampler.placeholder_height, sampler.pool_factor)?;
        Ok((conds, packed))
    })?;
    let (conds, packed) = packed;
    m.time("write", || {
        for (c, p) in conds.iter().zip(&packed) {
            let k = c.view_index;
            write_pfm(&dir.join(frame_name("packed", k, "pfm")), &Pfm::from_rgb(&p.grid))?;
            write_pfm(&dir.join(frame_name("packed_mask", k, "pfm")), &Pfm::from_scalar(&p.mask))?;
            write_pfm(&dir.join(frame_name("pooled_mask", k, "pfm")), &Pfm::from_scalar(&p.pooled_mask))?;
            write_png_rgb(&dir.join(frame_name("partial_rgb", k, "png")), &c.partial_rgb)?;
            write_depth(&dir.join(frame_name("partial_depth", k, "pfm")), &c.partial_depth)?;
            write_png_mask(&dir.join(frame_name("mask", k, "png")), &c.mask)?;
        }
        let p = &packed[0];
        write_json(
            &dir.join("layout.json"),
            &LayoutSidecar {
                placeholder_height: p.layout.placeholder_height,
                pool_factor: p.layout.pool_factor,
                depth_min: p.normalization.depth_min,
                depth_max: p.normalization.depth_max,
                width: p.layout.width,
                frame_height: p.layout.frame_height,
                packed_height: p.layout.packed_height(),
                frames: packed.len(),
            },
        )
    })?;
    m.output(&out);
    m.write(&dir.join(MANIFEST))?;
    staging.commit()
}

fn load_depth_dir(dir: &Path) -> CliResult<(Vec<DepthMap>, Vec<PathBuf>)> {
    let paths = indexed_files(dir, "depth", "pfm")?;
    let maps = paths.iter().map(|p| read_depth(p)).collect::<CliResult<Vec<_>>>()?;
    Ok((maps, paths))
}

fn load_mask_dir(dir: &Path) -> CliResult<(Vec<Mask>, Vec<PathBuf>)> {
    let paths = indexed_files(dir, "mask", "png").or_else(|_| indexed_files(dir, "mask", "pfm"))?;
    let masks = paths.iter().map(|p| read_mask(p)).collect::<CliResult<Vec<_>>>()?;
    Ok((masks, paths))
}

/// Drops depth where `exclude` is set.
fn without(depth: &DepthMap, exclude: Option<&Mask>) -> DepthMap {
    let Some(ex) = exclude else {
        return depth.clone();
    };
    let mut d = depth.clone();
    for y in 0..d.height() {
        for x in 0..d.width() {
            if *ex.get(x, y) {
                d.set(x, y, None);
            }
        }
    }
    d
}

#[derive(Serialize)]
struct FrameReport {
    frame: usize,
    scale: f64,
    bias: f64,
    residual: f64,
    valid_count: usize,
    s_metric: Option<f64>,
}

#[derive(Serialize)]
struct AlignReport {
    alignment: &'static str,
    metric: &'static str,
    pooled: Option<AlignmentSolution>,
    metric_scale: Option<MetricScale>,
    frames: Vec<FrameReport>,
}

pub fn align_run(cfg: &SessionConfig, a: &AlignArgs) -> CliResult<()> {
    let mut m = Manifest::new("align run", &json!({ "session": cfg, "args": a }))?;
    let mut staging = Staging::default();
    let dir = staging.dir(&a.out)?;
    let report_tmp = staging.file(&a.report)?;

    let (src, src_paths) = load_depth_dir(&a.src)?;
    let (reference, ref_paths) = load_depth_dir(&a.reference)?;
    m.inputs(&src_paths)?;
    m.inputs(&ref_paths)?;
    let n = src.len();
    if reference.len() != n {
        return Err(CliError::new(
            "invalid_input",
            format!("{n} source maps but {} reference maps", reference.len()),
        ));
    }
    let masks = match &a.mask {
        Some(d) => {
            let (masks, paths) = load_mask_dir(d)?;
            m.inputs(&paths)?;
            if masks.len() != n {
                return Err(CliError::new("invalid_input", format!("{n} frames but {} masks", masks.len())));
            }
            Some(masks)
        }
        None => None,
    };
    let metric = match &a.metric {
        Some(d) => {
            let (maps, paths) = load_depth_dir(d)?;
            m.inputs(&paths)?;
            if maps.len() != n {
                return Err(CliError::new("invalid_input", format!("{n} frames but {} metric maps", maps.len())));
            }
            Some(maps)
        }
        None => None,
    };
    let cams = match &a.cameras {
        Some(p) => {
            let cams = load_cameras(p)?;
            m.input(p)?;
            if cams.len() != n {
                return Err(CliError::new("invalid_input", format!("{n} frames but {} cameras", cams.len())));
            }
            Some(cams)
        }
        None => None,
    };

    let keep: Vec<Mask> = (0..n)
        .map(|k| {
            let valid = src[k].valid_mask();
            match &masks {
                Some(ms) => {
                    if ms[k].dims() != valid.dims() {
                        return Err(CliError::new(
                            "dimension_mismatch",
                            format!("mask {k} is {:?}, depth is {:?}", ms[k].dims(), valid.dims()),
                        ));
                    }
                    let v: Vec<bool> = ms[k].as_slice().iter().map(|&x| !x).collect();
                    Ok(Mask::from_vec(valid.width(), valid.height(), v)?)
                }
                None => Ok(worldcache::Grid::filled(valid.width(), valid.height(), true)),
            }
        })
        .collect::<CliResult<_>>()?;

    let (solutions, pooled) = m.time("disparity", || {
        if a.per_sequence {
            let triples: Vec<_> = (0..n).map(|k| (&src[k], &reference[k], &keep[k])).collect();
            let s = align_disparity_pooled(&triples)?;
            Ok((vec![s; n], Some(s)))
        } else {
            let sols = (0..n)
                .map(|k| align_disparity(&src[k], &reference[k], &keep[k]).map_err(|e| CliError::from(e).context(&src_paths[k])))
                .collect::<CliResult<Vec<_>>>()?;
            Ok((sols, None))
        }
    })?;
    let aligned: Vec<DepthMap> = (0..n).map(|k| solutions[k].apply(&src[k])).collect();

    let exclude = |k: usize| masks.as_ref().map(|ms| &ms[k]);
    let (scales, scene_scale) = m.time("metric", || {
        let Some(metric) = &metric else {
            return Ok((vec![None; n], None));
        };
        let rel: Vec<DepthMap> = (0..n).map(|k| without(&aligned[k], exclude(k))).collect();
        let met: Vec<DepthMap> = (0..n).map(|k| without(&metric[k], exclude(k))).collect();
        if a.metric_per_frame {
            let s = (0..n)
                .map(|k| metric_scale(&rel[k], &met[k]).map(Some))
                .collect::<worldcache::Result<Vec<_>>>()?;
            Ok((s, None))
        } else {
            let s = metric_scale_pooled(
                &rel.iter().collect::<Vec<_>>(),
                &met.iter().collect::<Vec<_>>(),
                DEFAULT_QUANTILE_LO,
                DEFAULT_QUANTILE_HI,
            )?;
            Ok((vec![Some(s); n], Some(s)))
        }
    })?;

    m.time("write", || {
        let mut out_cams = Vec::new();
        for k in 0..n {
            let depth = match (&scales[k], &cams) {
                (Some(s), Some(cams)) => {
                    let (d, pose) = apply_metric(&aligned[k], &cams[k].pose, s);
                    out_cams.push(Camera::new(cams[k].intrinsics, pose));
                    d
                }
                (Some(s), None) => aligned[k].scaled(s.s_metric),
                (None, Some(cams)) => {
                    out_cams.push(cams[k]);
                    aligned[k].clone()
                }
                (None, None) => aligned[k].clone(),
            };
            write_depth(&dir.join(frame_name("depth", k, "pfm")), &depth)?;
        }
        if !out_cams.is_empty() {
            write_camera_file(&dir.join("cameras.json"), &out_cams)?;
        }
        let report = AlignReport {
            alignment: if a.per_sequence { "per_sequence" } else { "per_frame" },
            metric: match (&metric, a.metric_per_frame) {
                (None, _) => "none",
                (Some(_), true) => "per_frame",
                (Some(_), false) => "per_scene",
            },
            pooled,
            metric_scale: scene_scale,
            frames: (0..n)
                .map(|k| FrameReport {
                    frame: k,
                    scale: solutions[k].scale,
                    bias: solutions[k].bias,
                    residual: solutions[k].residual,
                    valid_count: solutions[k].valid_count,
                    s_metric: scales[k].map(|s| s.s_metric),
                })
                .collect(),
        };
        write_json(&report_tmp, &report)
    })?;
    m.output(&a.out);
    m.output(&a.report);
    m.write(&dir.join(MANIFEST))?;
    staging.commit()
}

/// `depth.pfm+rgb.png`, in either order.
fn parse_init(spec: &str) -> CliResult<(PathBuf, PathBuf)> {
    let bad = || CliError::new("usage", format!("--init must look like depth.pfm+rgb.png, got {spec:?}"));
    let (a, b) = spec
        .split_once(".pfm+")
        .map(|(d, r)| (format!("{d}.pfm"), r.to_string()))
        .or_else(|| spec.split_once(".png+").map(|(r, d)| (d.to_string(), format!("{r}.png"))))
        .ok_or_else(bad)?;
    if !a.ends_with(".pfm") || !b.ends_with(".png") {
        return Err(bad());
    }
    Ok((PathBuf::from(a), PathBuf::from(b)))
}

fn render_all(scene: &SceneSpec, cams: &[Camera]) -> CliResult<Vec<RgbdFrame>> {
    Ok(cams.iter().map(|c| render_view(scene, c)).collect::<worldcache::Result<Vec<_>>>()?)
}

#[derive(Serialize)]
struct Trace<'a> {
    schedule: &'a worldcache::sampler::ClipSchedule,
    calls: &'a [worldcache::sampler::DenoiseCall],
    calls_per_frame: Vec<usize>,
}

pub fn sample_run(cfg: &SessionConfig, a: &SampleArgs) -> CliResult<()> {
    let out = SessionConfig::resolve(a.out.as_deref(), &cfg.paths.out, "out")?;
    let mut session = cfg.clone();
    if let Some(seed) = a.seed {
        session.seed = seed;
    }
    let mut m = Manifest::new("sample run", &json!({ "session": session, "args": a }))?;
    let mut staging = Staging::default();
    let dir = staging.dir(&out)?;

    let (depth_path, rgb_path) = parse_init(&a.init)?;
    let (init, cams) = m.time("load", || {
        let init = RgbdFrame::new(read_png_rgb(&rgb_path)?, read_depth(&depth_path)?)?;
        Ok((init, load_cameras(&a.traj)?))
    })?;
    m.input(&depth_path)?;
    m.input(&rgb_path)?;
    m.input(&a.traj)?;
    session.check_aspect(&cams[0].intrinsics);

    let denoiser: Box<dyn Denoiser> = match a.denoiser {
        DenoiserKind::Identity => Box::new(IdentityDenoiser),
        DenoiserKind::Oracle => {
            let path = a
                .scene
                .as_deref()
                .ok_or_else(|| CliError::new("usage", "--denoiser oracle needs --scene"))?;
            m.input(path)?;
            let scene = load_scene(path)?;
            let frames = m.time("oracle", || render_all(&scene, &cams))?;
            Box::new(GroundTruthDenoiser { frames })
        }
        DenoiserKind::Extern => {
            let prog = a
                .extern_cmd
                .as_deref()
                .ok_or_else(|| CliError::new("usage", "--denoiser extern needs --extern-cmd"))?;
            Box::new(ExternDenoiser::spawn(prog, &a.extern_arg)?)
        }
    };
    let result = m.time("sample", || {
        Ok(run_autoregressive(
            &init,
            &cams,
            denoiser,
            &session.culling_config(),
            &session.sampler_config(),
        )?)
    })?;
    m.time("write", || {
        for (k, f) in result.frames.iter().enumerate() {
            write_frame(&dir, k, f)?;
        }
        write_camera_file(&dir.join("cameras.json"), &cams)?;
        write_cache(&dir.join("cache.ply"), &result.cache)?;
        write_json(
            &dir.join("trace.json"),
            &Trace {
                schedule: &result.schedule,
                calls: &result.calls,
                calls_per_frame: result.calls_per_frame(),
            },
        )
    })?;
    m.output(&out);
    m.write(&dir.join(MANIFEST))?;
    staging.commit()
}

pub fn oracle_render(cfg: &SessionConfig, a: &OracleRenderArgs) -> CliResult<()> {
    let mut m = Manifest::new("oracle render", &json!({ "session": cfg, "args": a }))?;
    let mut staging = Staging::default();
    let dir = staging.dir(&a.out)?;
    let (scene, cams) = m.time("load", || Ok((load_scene(&a.scene)?, load_cameras(&a.traj)?)))?;
    m.input(&a.scene)?;
    m.input(&a.traj)?;
    cfg.check_aspect(&cams[0].intrinsics);
    let frames = m.time("render", || render_all(&scene, &cams))?;
    m.time("write", || {
        for (k, f) in frames.iter().enumerate() {
            write_frame(&dir, k, f)?;
        }
        write_camera_file(&dir.join("cameras.json"), &cams)
    })?;
    m.output(&a.out);
    m.write(&dir.join(MANIFEST))?;
    staging.commit()
}

pub fn oracle_fixture(cfg: &SessionConfig, a: &FixtureArgs) -> CliResult<()> {
    let mut m = Manifest::new("oracle fixture", &json!({ "session": cfg, "args": a }))?;
    let mut staging = Staging::default();
    let dir = staging.dir(&a.out)?;
    let traj = orbit_room_trajectory(a.frames, a.size, a.radius)?;
    traj.cameras()?;
    write_json(&dir.join("scene.json"), &orbit_room_scene())?;
    write_json(&dir.join("traj.json"), &traj)?;
    m.output(&a.out);
    m.write(&dir.join(MANIFEST))?;
    staging.commit()
}

pub fn export_ply(a: &ExportPlyArgs) -> CliResult<()> {
    let cache = load_cache(&a.cache)?;
    let mut staging = Staging::default();
    let tmp = staging.file(&a.out)?;
    let mut buf = format!(
        "ply\nformat {} 1.0\nelement vertex {}\n",
        if a.ascii { "ascii" } else { "binary_little_endian" },
        cache.len()
    )
    .into_bytes();
    for p in ["float x", "float y", "float z", "uchar red", "uchar green", "uchar blue", "float nx", "float ny", "float nz"] {
        buf.extend_from_slice(format!("property {p}\n").as_bytes());
    }
    buf.extend_from_slice(b"end_header\n");
    for p in cache.points() {
        let pos = p.position.map(|v| v as f32);
        let nrm = p.normal.map(|v| v as f32);
        let rgb = p.color.map(quantize_color);
        if a.ascii {
            let line = format!(
                "{} {} {} {} {} {} {} {} {}\n",
                pos[0], pos[1], pos[2], rgb[0], rgb[1], rgb[2], nrm[0], nrm[1], nrm[2]
            );
            buf.extend_from_slice(line.as_bytes());
        } else {
            pos.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
            buf.extend_from_slice(&rgb);
            nrm.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        }
    }
    write_bytes(&tmp, &buf)?;
    staging.commit()
}

pub fn stats(a: &StatsArgs) -> CliResult<()> {
    let summary = load_cache(&a.cache)?.summary();
    if a.json {
        let mut s = serde_json::to_string_pretty(&summary)?;
        s.push('\n');
        print(&s);
        return Ok(());
    }
    let mut s = format!(
        "points {}\ncandidates {}\nreduction {}\n",
        summary.total_points, summary.total_candidates, summary.reduction_ratio
    );
    for u in &summary.updates {
        s.push_str(&format!(
            "update frame={} candidates={} added_hole={} added_normal={} rejected={}\n",
            u.frame, u.candidates, u.added_hole, u.added_normal, u.rejected
        ));
    }
    print(&s);
    Ok(())
}

pub fn serve_denoiser(a: &ServeArgs) -> CliResult<()> {
    let mut denoiser: Box<dyn Denoiser> = match a.kind {
        ServeKind::Identity => Box::new(IdentityDenoiser),
        ServeKind::Oracle => {
            let (Some(scene), Some(traj)) = (&a.scene, &a.traj) else {
                return Err(CliError::new("usage", "oracle serving needs --scene and --traj"));
            };
            let frames = render_all(&load_scene(scene)?, &load_cameras(traj)?)?;
            Box::new(GroundTruthDenoiser { frames })
        }
    };
    let mut input = BufReader::new(std::io::stdin().lock());
    let mut output = BufWriter::new(std::io::stdout().lock());
    serve(&mut input, &mut output, &mut denoiser)?;
    output.flush().map_err(|e| CliError::io(e.to_string()))
}
