use afh_core::image::{
    crop_patch, read_png, replace_patch, resize_bicubic, to_luminance, write_png, Image,
    PatchGeometry, PatchLocation,
};
use proptest::prelude::*;

fn image_strategy(max: usize) -> impl Strategy<Value = Image> {
    (1..=max, 1..=max, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(h, w, c)| {
        prop::collection::vec(0.0f64..=1.0, h * w * c)
            .prop_map(move |data| Image::new(h, w, c, data).unwrap())
    })
}

fn case() -> impl Strategy<Value = (Image, PatchGeometry, PatchLocation)> {
    image_strategy(12).prop_flat_map(|img| {
        let (h, w) = (img.height(), img.width());
        (Just(img), 1..=2 * h, 1..=2 * w, 1..=w, 1..=h).prop_map(|(img, ph, pw, x, y)| {
            (img, PatchGeometry::new(ph, pw), PatchLocation::new(x, y))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn writing_back_a_crop_changes_nothing((img, geom, loc) in case()) {
        let p = crop_patch(&img, loc, &geom).unwrap();
        prop_assert_eq!(replace_patch(&img, loc, &p, &geom).unwrap(), img);
    }

    #[test]
    fn crop_has_pad_exactly_outside((img, geom, loc) in case()) {
        let p = crop_patch(&img, loc, &geom).unwrap();
        prop_assert_eq!(p.dims(), (geom.patch_height, geom.patch_width, img.channels()));
        let mask = geom.in_bounds_mask(loc, img.height(), img.width());
        let (oy, ox) = geom.origin(loc);
        for i in 0..geom.patch_height {
            for j in 0..geom.patch_width {
                for c in 0..img.channels() {
                    let v = p.get(i, j, c);
                    if mask[i * geom.patch_width + j] {
                        let (sy, sx) = ((oy + i as i64) as usize, (ox + j as i64) as usize);
                        prop_assert_eq!(v, img.get(sy, sx, c));
                    } else {
                        prop_assert_eq!(v, geom.pad_value);
                    }
                }
            }
        }
    }

    #[test]
    fn replace_touches_only_the_footprint((img, geom, loc) in case(), fill in 0.0f64..=1.0) {
        let patch = Image::filled(geom.patch_height, geom.patch_width, img.channels(), fill);
        let out = replace_patch(&img, loc, &patch, &geom).unwrap();
        let (ys, xs) = geom.footprint(loc, img.height(), img.width());
        let mut inside = 0;
        for y in 0..img.height() {
            for x in 0..img.width() {
                for c in 0..img.channels() {
                    if ys.contains(&y) && xs.contains(&x) {
                        prop_assert_eq!(out.get(y, x, c), fill);
                    } else {
                        prop_assert_eq!(out.get(y, x, c), img.get(y, x, c));
                    }
                }
                inside += (ys.contains(&y) && xs.contains(&x)) as usize;
            }
        }
        let mask = geom.in_bounds_mask(loc, img.height(), img.width());
        prop_assert_eq!(inside, mask.iter().filter(|&&m| m).count());
    }

    #[test]
    fn the_location_is_always_inside_its_own_patch((img, geom, loc) in case()) {
        let (ys, xs) = geom.footprint(loc, img.height(), img.width());
        prop_assert!(ys.contains(&(loc.y - 1)) && xs.contains(&(loc.x - 1)));
    }

    #[test]
    fn flat_index_round_trips(w in 1usize..64, h in 1usize..64, i in 0usize..4096) {
        let i = i % (w * h);
        let loc = PatchLocation::from_flat(i, w);
        prop_assert!(loc.validate(h, w).is_ok());
        prop_assert_eq!(loc.flat_index(w), i);
    }

    #[test]
    fn resize_stays_in_range_and_keeps_constants(
        img in image_strategy(10), oh in 1usize..24, ow in 1usize..24, v in 0.0f64..=1.0
    ) {
        let out = resize_bicubic(&img, oh, ow).unwrap();
        prop_assert_eq!(out.dims(), (oh, ow, img.channels()));
        prop_assert!(out.data().iter().all(|x| (0.0..=1.0).contains(x)));
        let flat = Image::filled(img.height(), img.width(), img.channels(), v);
        let r = resize_bicubic(&flat, oh, ow).unwrap();
        prop_assert!(r.data().iter().all(|x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn same_size_resize_is_identity(img in image_strategy(10)) {
        let out = resize_bicubic(&img, img.height(), img.width()).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gray_luminance_is_the_gray_value(h in 1usize..8, w in 1usize..8, v in 0.0f64..=1.0) {
        let y = to_luminance(&Image::filled(h, w, 3, v)).unwrap();
        prop_assert!(y.data().iter().all(|x| (x - v).abs() < 1e-12));
    }
}

#[test]
fn png_round_trip_is_within_quantization() {
    let img = Image::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) * 3 + c) as f64 / 105.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.png");
    write_png(&img, &path).unwrap();
    let back = read_png(&path).unwrap();
    assert_eq!(back.dims(), img.dims());
    for (a, b) in back.data().iter().zip(img.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
    assert!(read_png(dir.path().join("missing.png")).is_err());
}
