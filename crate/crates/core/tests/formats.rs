mod common;

use common::*;
use proptest::prelude::*;
use worldcache::condition::{pack_frame, unpack_frame, DepthNormalization, PackLayout};
use worldcache::io::{pfm, read_cache_ply, read_cameras, write_cache_ply, write_cameras, Pfm};
use worldcache::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ply_reexport_is_byte_identical(seed in any::<u64>()) {
        let mut r = rng(seed);
        let intr = random_intrinsics(&mut r, 10, 7);
        let a = Camera::new(intr, random_pose(&mut r));
        let b = Camera::new(intr, random_pose(&mut r));
        let frame = |r: &mut rand_chacha::ChaCha8Rng| RgbdFrame::new(random_rgb(r, 10, 7), random_depth(r, 10, 7, 0.2)).unwrap();
        let mut cache = WorldCache::init(&frame(&mut r), &a, 0).unwrap();
        cache.update(&frame(&mut r), &b, &CullingConfig::default(), 1).unwrap();
        let mut first = Vec::new();
        write_cache_ply(&mut first, &cache).unwrap();
        let back = read_cache_ply(&mut &first[..]).unwrap();
        let mut second = Vec::new();
        write_cache_ply(&mut second, &back).unwrap();
        prop_assert_eq!(first, second);
        prop_assert_eq!(back.summary().reduction_ratio, cache.summary().reduction_ratio);
    }

    #[test]
    fn packed_frame_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let f = RgbdFrame::new(random_rgb(&mut r, 8, 4), random_depth(&mut r, 8, 4, 0.3)).unwrap();
        let layout = PackLayout::new(8, 4, 8, 4).unwrap();
        let norm = DepthNormalization::from_depths([&f.depth]);
        let grid = pack_frame(&f, &layout, &norm).unwrap();
        let wire = pfm::from_bytes(&pfm::to_bytes(&Pfm::from_rgb(&grid)).unwrap()).unwrap().to_rgb().unwrap();
        let back = unpack_frame(&wire, &layout, &norm).unwrap();
        prop_assert_eq!(&back.rgb, &f.rgb);
        for i in 0..f.depth.len() {
            match (back.depth.at(i), f.depth.at(i)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= norm.quantization_step()),
                (None, None) => {}
                other => prop_assert!(false, "validity changed at {}: {:?}", i, other),
            }
        }
    }

    #[test]
    fn camera_json_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let cams: Vec<Camera> = (0..3).map(|_| Camera::new(random_intrinsics(&mut r, 20, 10), random_pose(&mut r))).collect();
        let back = read_cameras(&write_cameras(&cams).unwrap()).unwrap();
        prop_assert_eq!(back, cams);
    }
}
