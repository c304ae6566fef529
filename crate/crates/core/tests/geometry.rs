mod common;

use common::*;
use proptest::prelude::*;
use worldcache::camera::{estimate_normals, project, unproject, view_direction};
use worldcache::render::{render_points, visibility_against_cache};
use worldcache::synthetic::{brute_force_visibility, render_view, Albedo, Primitive, SceneSpec, Shape};
use worldcache::*;

/// Depth of the plane `n·x = c` along each pixel ray, solved directly.
fn plane_depth(camera: &Camera, n: Vec3, c: f64) -> DepthMap {
    let intr = &camera.intrinsics;
    let rt = camera.pose.rotation().transpose();
    let center = camera.pose.center();
    let mut d = DepthMap::invalid(intr.width, intr.height);
    for y in 0..intr.height {
        for x in 0..intr.width {
            let ray = rt * Vec3::new((x as f64 - intr.cx) / intr.fx, (y as f64 - intr.cy) / intr.fy, 1.0);
            let t = (c - n.dot(&center)) / n.dot(&ray);
            if t > 0.0 {
                d.set(x, y, Some(t));
            }
        }
    }
    d
}

#[test]
fn plane_unprojection_matches_closed_form() {
    let mut r = rng(10);
    for _ in 0..50 {
        let intr = random_intrinsics(&mut r, 16, 12);
        let pose = random_pose(&mut r);
        let cam = Camera::new(intr, pose);
        let n = cam.pose.rotation().transpose() * Vec3::new(0.1, -0.2, -1.0).normalize();
        let c = n.dot(&(cam.pose.center() + cam.pose.rotation().transpose() * Vec3::new(0.0, 0.0, 3.0)));
        let depth = plane_depth(&cam, n, c);
        for p in unproject(&depth, &intr, &cam.pose, None).unwrap() {
            assert!((n.dot(&p.position) - c).abs() < 1e-9);
        }
    }
}

#[test]
fn tilted_plane_normals_match_analytic() {
    let intr = CameraIntrinsics::from_fov(32, 32, 50.0).unwrap();
    let cam = Camera::new(intr, CameraPose::identity());
    let n = Vec3::new(0.0, -1.0, -1.0).normalize();
    let depth = plane_depth(&cam, n, n.dot(&Vec3::new(0.0, 0.0, 4.0)));
    let normals = estimate_normals(&depth, &intr, &cam.pose).unwrap();
    assert!(normals.iter().all(|m| (m.unwrap() - n).norm() < 1e-6));

    let cache = WorldCache::init(&RgbdFrame::new(Grid::filled(32, 32, [0.5; 3]), depth).unwrap(), &cam, 0).unwrap();
    assert!(cache.points().iter().all(|p| (p.normal - n).norm() < 1e-6));
}

#[test]
fn normals_face_their_camera() {
    let mut r = rng(11);
    for _ in 0..20 {
        let scene = random_two_object_scene(&mut r);
        let cam = Camera::new(
            CameraIntrinsics::from_fov(40, 30, 60.0).unwrap(),
            CameraPose::look_at(Vec3::new(0.3, -0.2, 0.0), Vec3::new(0.0, 0.0, 4.0), Vec3::new(0.0, 1.0, 0.0)).unwrap(),
        );
        let frame = render_view(&scene, &cam).unwrap();
        let cache = WorldCache::init(&frame, &cam, 0).unwrap();
        for p in cache.points() {
            assert!((p.normal.norm() - 1.0).abs() < 1e-9);
            assert!(p.normal.dot(&view_direction(&p.position, &cam.pose).unwrap()) < 0.0);
        }
    }
}

fn ray_box(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<f64> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        let (a, b) = ((lo[i] - origin[i]) / dir[i], (hi[i] - origin[i]) / dir[i]);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

#[test]
fn box_orbit_depth_matches_slab_intersection() {
    let (center, half) = (Vec3::new(0.2, 0.1, 0.0), Vec3::new(0.6, 0.4, 0.5));
    let scene = SceneSpec {
        primitives: vec![Primitive {
            shape: Shape::Box {
                center: center.into(),
                half_size: half.into(),
                rotation: None,
            },
            albedo: Albedo::Solid { color: [1.0; 3] },
        }],
    };
    let traj = worldcache::synthetic::TrajectorySpec {
        kind: worldcache::synthetic::TrajectoryKind::Orbit {
            center: [0.0; 3],
            radius: 3.0,
            degrees: 360.0,
            start_degrees: 10.0,
            height: 1.0,
            target: None,
        },
        frames: 8,
        intrinsics: CameraIntrinsics::from_fov(40, 40, 50.0).unwrap(),
        up: [0.0, 1.0, 0.0],
    };
    let mut hits = 0;
    for cam in traj.cameras().unwrap() {
        let frame = render_view(&scene, &cam).unwrap();
        let intr = &cam.intrinsics;
        let rt = cam.pose.rotation().transpose();
        for y in 0..intr.height {
            for x in 0..intr.width {
                let dir = rt * Vec3::new((x as f64 - intr.cx) / intr.fx, (y as f64 - intr.cy) / intr.fy, 1.0);
                let t = ray_box(cam.pose.center(), dir, center - half, center + half);
                match (frame.depth.get(x, y), t) {
                    (Some(d), Some(t)) => {
                        assert!((d - t).abs() <= 1e-12 * t.max(1.0), "{d} vs {t}");
                        hits += 1;
                    }
                    (None, None) => {}
                    other => panic!("pixel ({x},{y}) disagrees: {other:?}"),
                }
            }
        }
    }
    assert!(hits > 1000);
}

fn two_plane_scene() -> SceneSpec {
    SceneSpec {
        primitives: vec![
            Primitive {
                shape: Shape::Rect {
                    center: [-0.5, 0.0, 2.0],
                    u: [0.6, 0.0, 0.0],
                    v: [0.0, 1.5, 0.0],
                },
                albedo: Albedo::Solid { color: [1.0, 0.0, 0.0] },
            },
            Primitive {
                shape: Shape::Plane {
                    point: [0.0, 0.0, 4.0],
                    normal: [0.0, 0.0, -1.0],
                },
                albedo: Albedo::Solid { color: [0.0, 0.0, 1.0] },
            },
        ],
    }
}

fn view(eye: [f64; 3]) -> Camera {
    Camera::new(
        CameraIntrinsics::from_fov(48, 40, 60.0).unwrap(),
        CameraPose::look_at(Vec3::from(eye), Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 1.0, 0.0)).unwrap(),
    )
}

#[test]
fn two_plane_classification_matches_brute_force() {
    let scene = two_plane_scene();
    let cfg = SplatConfig::default();
    let a = view([0.0, 0.0, 0.0]);
    let cache = WorldCache::init(&render_view(&scene, &a).unwrap(), &a, 0).unwrap();
    let cached: Vec<Vec3> = cache.points().iter().map(|p| p.position).collect();
    for eye in [[0.8, 0.0, 0.0], [-0.8, 0.2, 0.3], [0.0, 0.0, 0.5]] {
        let b = view(eye);
        let cands: Vec<Vec3> = unproject(&render_view(&scene, &b).unwrap().depth, &b.intrinsics, &b.pose, None)
            .unwrap()
            .iter()
            .map(|p| p.position)
            .collect();
        let out = cache.render(&b, &cfg);
        let fast = visibility_against_cache(&cands, &out, &b.intrinsics, &b.pose, &cfg);
        let slow = brute_force_visibility(&cands, &cached, &b, &cfg).unwrap();
        assert_eq!(fast, slow);
        assert!(fast.contains(&Visibility::Occluded) || fast.contains(&Visibility::InHole));
    }
}

#[test]
fn partial_depth_does_not_see_through_front_plane() {
    let scene = two_plane_scene();
    let a = view([0.0, 0.0, 0.0]);
    let cache = WorldCache::init(&render_view(&scene, &a).unwrap(), &a, 0).unwrap();
    let b = view([0.4, 0.0, 0.0]);
    let truth = render_view(&scene, &b).unwrap();
    let out = cache.render(&b, &SplatConfig::default());
    for i in 0..truth.depth.len() {
        // wherever the front rect is the true surface and the cache covers
        // the pixel, the cache must report the rect, never the wall behind it
        if let (Some(t), Some(d)) = (truth.depth.at(i), out.partial_depth.at(i)) {
            if t < 3.0 {
                assert!(d < 3.0, "pixel {i}: wall depth {d} shows through rect at {t}");
            }
        }
    }
}

#[test]
fn single_sided_wall_from_behind_adds_everything() {
    let wall = SceneSpec {
        primitives: vec![Primitive {
            shape: Shape::Rect {
                center: [0.0, 0.0, 3.0],
                u: [2.0, 0.0, 0.0],
                v: [0.0, 2.0, 0.0],
            },
            albedo: Albedo::Solid { color: [0.5; 3] },
        }],
    };
    let intr = CameraIntrinsics::from_fov(32, 32, 40.0).unwrap();
    let up = Vec3::new(0.0, 1.0, 0.0);
    let front = Camera::new(intr, CameraPose::look_at(Vec3::zeros(), Vec3::new(0.0, 0.0, 3.0), up).unwrap());
    let back = Camera::new(intr, CameraPose::look_at(Vec3::new(0.0, 0.0, 6.0), Vec3::new(0.0, 0.0, 3.0), up).unwrap());
    let mut cache = WorldCache::init(&render_view(&wall, &front).unwrap(), &front, 0).unwrap();
    let frame = render_view(&wall, &back).unwrap();
    let s = cache.update(&frame, &back, &CullingConfig::default(), 1).unwrap();
    assert_eq!(s.added(), s.candidates);
    assert_eq!(s.added_normal, s.candidates);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn project_inverts_unproject(seed in any::<u64>(), w in 1usize..12, h in 1usize..12) {
        let mut r = rng(seed);
        let intr = random_intrinsics(&mut r, w, h);
        let pose = random_pose(&mut r);
        let depth = random_depth(&mut r, w, h, 0.2);
        let pts = unproject(&depth, &intr, &pose, None).unwrap();
        let pos: Vec<Vec3> = pts.iter().map(|p| p.position).collect();
        for (p, pr) in pts.iter().zip(project(&pos, &intr, &pose, 1e-4)) {
            prop_assert!((pr.u - (p.pixel % w) as f64).abs() < 1e-9);
            prop_assert!((pr.v - (p.pixel / w) as f64).abs() < 1e-9);
            prop_assert_eq!(pr.pixel(&intr), Some((p.pixel % w, p.pixel / w)));
        }
    }

    #[test]
    fn view_direction_is_unit(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pose = random_pose(&mut r);
        let p = random_pose(&mut r).center() * 3.0 + Vec3::new(0.5, 0.0, 0.0);
        if (p - pose.center()).norm() > 1e-6 {
            prop_assert!((view_direction(&p, &pose).unwrap().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn render_mask_matches_oracle_zbuffer(seed in any::<u64>(), radius in 0usize..3) {
        let mut r = rng(seed);
        let intr = random_intrinsics(&mut r, 20, 15);
        let pose = random_pose(&mut r);
        let src = random_pose(&mut r);
        let depth = random_depth(&mut r, 20, 15, 0.3);
        let pts: Vec<(Vec3, Rgb)> = unproject(&depth, &intr, &src, None).unwrap().iter().map(|p| (p.position, [0.0; 3])).collect();
        let cfg = SplatConfig { splat_radius: radius, ..SplatConfig::default() };
        let out = render_points(&pts, &intr, &pose, &cfg);
        let pos: Vec<Vec3> = pts.iter().map(|p| p.0).collect();
        let zb = oracle_zbuffer(&pos, &Camera::new(intr, pose), &cfg);
        for (i, z) in zb.iter().enumerate() {
            prop_assert_eq!(out.mask.as_slice()[i], z.is_finite());
            if z.is_finite() {
                prop_assert_eq!(out.partial_depth.at(i), Some(*z));
                let hit = out.hit_index.as_slice()[i].unwrap() as usize;
                // the winner is the first point at the minimum depth
                let first = (0..pts.len()).find(|&k| {
                    let pr = worldcache::camera::project_point(&pos[k], &intr, &pose, cfg.near_plane);
                    pr.z == *z && pr.pixel(&intr).is_some_and(|(x, y)| {
                        (x as i64 - (i % 20) as i64).abs() <= radius as i64 && (y as i64 - (i / 20) as i64).abs() <= radius as i64
                    })
                });
                prop_assert_eq!(Some(hit), first);
            }
        }
    }

    #[test]
    fn cache_never_shrinks_and_is_bounded(seed in any::<u64>()) {
        let mut r = rng(seed);
        let scene = random_two_object_scene(&mut r);
        let intr = CameraIntrinsics::from_fov(24, 24, 60.0).unwrap();
        let up = Vec3::new(0.0, 1.0, 0.0);
        let mut cache: Option<WorldCache> = None;
        let mut baseline = 0;
        for k in 0..4 {
            let eye = Vec3::new(0.4 * k as f64 - 0.6, 0.1 * k as f64, 0.0);
            let cam = Camera::new(intr, CameraPose::look_at(eye, Vec3::new(0.0, 0.0, 4.0), up).unwrap());
            let frame = render_view(&scene, &cam).unwrap();
            baseline += frame.depth.valid_count();
            match cache.as_mut() {
                None => cache = Some(WorldCache::init(&frame, &cam, 0).unwrap()),
                Some(c) => {
                    let before: Vec<_> = c.points().to_vec();
                    let s = c.update(&frame, &cam, &CullingConfig::default(), k).unwrap();
                    prop_assert_eq!(s.added_hole + s.added_normal + s.rejected, s.candidates);
                    prop_assert_eq!(&c.points()[..before.len()], &before[..]);
                }
            }
        }
        prop_assert!(cache.unwrap().len() <= baseline);
    }
}
