use afh_core::data::{
    batch_iterator, load_dataset, make_toy_dataset, render_toy_image, write_split, DatasetSpec,
    SamplePair, Split,
};
use afh_core::error::AfhError;
use afh_core::image::{resize_bicubic, to_luminance, write_png, Image};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(root: &std::path::Path, crop: usize) -> DatasetSpec {
    DatasetSpec {
        root_dir: root.to_path_buf(),
        crop_height: crop,
        crop_width: crop,
        scale: 4,
    }
}

#[test]
fn written_splits_load_back_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let train = make_toy_dataset(5, 48, 48, 4, 3).unwrap();
    let test = make_toy_dataset(3, 48, 48, 4, 4).unwrap();
    write_split(dir.path(), Split::Train, &train).unwrap();
    write_split(dir.path(), Split::Test, &test).unwrap();
    let loaded = load_dataset(&spec(dir.path(), 48), Split::Train).unwrap();
    assert_eq!(loaded.len(), 5);
    for (a, b) in loaded.iter().zip(&train) {
        assert_eq!(a.id, b.id);
        let err = a.hr.data().iter().zip(b.hr.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err <= 0.5 / 255.0 + 1e-12);
        assert_eq!(a.lr.dims(), (12, 12, 3));
    }
    let ids: Vec<String> = load_dataset(&spec(dir.path(), 48), Split::Test)
        .unwrap()
        .into_iter()
        .map(|p| p.id)
        .collect();
    assert_eq!(ids, test.iter().map(|p| p.id.clone()).collect::<Vec<_>>());
}

#[test]
fn overlapping_splits_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = make_toy_dataset(3, 48, 48, 4, 3).unwrap();
    write_split(dir.path(), Split::Train, &pairs).unwrap();
    write_split(dir.path(), Split::Test, &pairs[2..]).unwrap();
    let err = load_dataset(&spec(dir.path(), 48), Split::Train).unwrap_err();
    assert!(matches!(err, AfhError::Dataset(_)), "{err}");
}

#[test]
fn missing_file_and_oversized_crop_fail() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = make_toy_dataset(2, 48, 48, 4, 3).unwrap();
    write_split(dir.path(), Split::Train, &pairs).unwrap();
    assert!(load_dataset(&spec(dir.path(), 64), Split::Train).is_err());
    std::fs::remove_file(dir.path().join("images").join(format!("{}.png", pairs[1].id))).unwrap();
    assert!(load_dataset(&spec(dir.path(), 48), Split::Train).is_err());
    assert!(load_dataset(&spec(dir.path(), 48), Split::Test).is_err());
}

#[test]
fn center_crop_and_gray_promotion() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    std::fs::create_dir_all(dir.path().join("splits")).unwrap();
    let gray = Image::from_fn(60, 52, 1, |y, x, _| ((y * 7 + x * 3) % 256) as f64 / 255.0);
    write_png(&gray, dir.path().join("images/g.png")).unwrap();
    std::fs::write(dir.path().join("splits/train.txt"), "g\n\n").unwrap();
    let pairs = load_dataset(&spec(dir.path(), 48), Split::Train).unwrap();
    let hr = &pairs[0].hr;
    assert_eq!(hr.dims(), (48, 48, 3));
    for c in 0..3 {
        assert!((hr.get(0, 0, c) - gray.get(6, 2, 0)).abs() < 1e-12);
        assert!((hr.get(47, 47, c) - gray.get(53, 49, 0)).abs() < 1e-12);
    }
}

#[test]
fn pairs_are_consistent() {
    for p in make_toy_dataset(3, 48, 48, 4, 8).unwrap() {
        assert_eq!(p.lr, resize_bicubic(&p.hr, 12, 12).unwrap());
        assert_eq!(p.lr_up, resize_bicubic(&p.lr, 48, 48).unwrap());
        assert_eq!(SamplePair::from_hr(p.id.clone(), p.hr.clone(), 4).unwrap(), p);
    }
}

#[test]
fn toy_generator_is_deterministic() {
    let a = make_toy_dataset(100, 48, 48, 4, 21).unwrap();
    let b = make_toy_dataset(100, 48, 48, 4, 21).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|p| p.lr.dims() == (12, 12, 3)));
    let c = make_toy_dataset(3, 48, 48, 4, 22).unwrap();
    assert_ne!(a[0].hr, c[0].hr);
}

fn laplacian_energy(img: &Image, inside: impl Fn(usize, usize) -> bool) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 1..img.height() - 1 {
        for x in 1..img.width() - 1 {
            if inside(y, x) {
                let l = img.get(y - 1, x, 0) + img.get(y + 1, x, 0) + img.get(y, x - 1, 0)
                    + img.get(y, x + 1, 0)
                    - 4.0 * img.get(y, x, 0);
                sum += l * l;
                n += 1;
            }
        }
    }
    sum / n as f64
}

#[test]
fn detail_concentrates_in_feature_regions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let toy = render_toy_image(48, 48, &mut rng);
        let lum = to_luminance(&toy.image).unwrap();
        let regions = &toy.regions;
        let inside = laplacian_energy(&lum, |y, x| regions.iter().any(|r| r.contains(y, x)));
        let outside = laplacian_energy(&lum, |y, x| !regions.iter().any(|r| r.contains(y, x)));
        assert!(inside >= 5.0 * outside, "{inside} vs {outside}");
    }
}

#[test]
fn batches_follow_the_seed() {
    let items: Vec<usize> = (0..10).collect();
    let sizes: Vec<usize> = batch_iterator(&items, 4, 9).unwrap().map(|b| b.len()).collect();
    assert_eq!(sizes, vec![4, 4, 2]);
    let order = |seed| -> Vec<usize> { batch_iterator(&items, 4, seed).unwrap().flatten().copied().collect() };
    assert_eq!(order(9), order(9));
    assert_ne!(order(9), order(10));
}
