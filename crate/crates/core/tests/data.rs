mod common;

use adaptovision::data::augment::{crop_resize, flip_horizontal, rotate_shear};
use adaptovision::data::cifar::{encode_cifar10, parse_cifar10, RECORD};
use adaptovision::data::{
    augment, load_cifar10_binary, load_cifar10_dir, synthetic_dataset, tile_image, write_cifar10_binary,
    AugmentPolicy, LabeledImage,
};
use adaptovision::{Error, Tensor};
use common::{brute_offsets, rng};
use rand::Rng;

fn random_images(n: usize, seed: u64) -> Vec<LabeledImage> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| LabeledImage {
            pixels: Tensor::from_fn((1, 3, 32, 32), |_, _, _, _| r.random_range(0.0..=1.0)),
            label: r.random_range(0..10),
        })
        .collect()
}

#[test]
fn cifar_round_trip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.bin");
    let images = random_images(12, 1);
    write_cifar10_binary(&path, &images).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 12 * 3073);
    let back = load_cifar10_binary(&path).unwrap();
    assert_eq!(back.len(), images.len());
    for (a, b) in images.iter().zip(&back) {
        assert_eq!(a.label, b.label);
        assert!(a.pixels.max_abs_diff(&b.pixels) <= 0.5 / 255.0 + 1e-12);
    }
    assert_eq!(encode_cifar10(&back).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn cifar_fixtures() {
    let mut one = vec![0u8; RECORD];
    one[0] = 7;
    let imgs = parse_cifar10(&one).unwrap();
    assert_eq!(imgs.len(), 1);
    assert_eq!(imgs[0].label, 7);
    assert!(imgs[0].pixels.data().iter().all(|v| *v == 0.0));

    let mut bright = vec![255u8; RECORD];
    bright[0] = 0;
    assert!(parse_cifar10(&bright).unwrap()[0].pixels.data().iter().all(|v| *v == 1.0));

    // red plane first, row-major
    let mut layout = vec![0u8; RECORD];
    layout[1 + 1024 + 32 + 5] = 51;
    let img = &parse_cifar10(&layout).unwrap()[0];
    assert_eq!(img.pixels.at(0, 1, 1, 5), 0.2);

    assert!(matches!(parse_cifar10(&vec![0u8; RECORD + 1]), Err(Error::Format(_))));
    let mut bad = vec![0u8; RECORD];
    bad[0] = 10;
    assert!(matches!(parse_cifar10(&bad), Err(Error::Data(_))));
}

#[test]
fn cifar_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("cifar-10-batches-bin");
    std::fs::create_dir(&sub).unwrap();
    for i in 1..=5 {
        write_cifar10_binary(sub.join(format!("data_batch_{i}.bin")), &random_images(2, i)).unwrap();
    }
    write_cifar10_binary(sub.join("test_batch.bin"), &random_images(3, 9)).unwrap();
    let (train, test) = load_cifar10_dir(dir.path()).unwrap();
    assert_eq!((train.len(), test.len()), (10, 3));
    assert!(load_cifar10_dir(dir.path().join("missing")).is_err());
}

#[test]
fn synthetic_is_balanced_and_seeded() {
    let d = synthetic_dataset(4, 2, 16, 0).unwrap();
    assert_eq!(d.iter().filter(|i| i.label == 0).count(), 2);
    assert_eq!(d, synthetic_dataset(4, 2, 16, 0).unwrap());
    assert_ne!(d, synthetic_dataset(4, 2, 16, 1).unwrap());
    assert!(d.iter().all(|i| i.pixels.data().iter().all(|v| (0.0..=1.0).contains(v))));
    assert!(synthetic_dataset(1, 2, 16, 0).is_err());
}

#[test]
fn nearest_centroid_separates_synthetic_classes() {
    for k in [2, 4, 10] {
        let fit = synthetic_dataset(200, k, 16, 10).unwrap();
        let test = synthetic_dataset(200, k, 16, 11).unwrap();
        let dim = fit[0].pixels.numel();
        let mut centroids = vec![vec![0.0; dim]; k];
        let mut counts = vec![0.0; k];
        for img in &fit {
            counts[img.label] += 1.0;
            for (c, v) in centroids[img.label].iter_mut().zip(img.pixels.data()) {
                *c += v;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= n);
        }
        let correct = test
            .iter()
            .filter(|img| {
                let dist = |c: &Vec<f64>| c.iter().zip(img.pixels.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                let best = (0..k).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
                best == img.label
            })
            .count();
        assert!(correct as f64 / test.len() as f64 >= 0.99, "k={k}: {correct}");
    }
}

#[test]
fn augment_identity_and_label() {
    let img = random_images(1, 2).remove(0);
    assert_eq!(augment(&img, &AugmentPolicy::none(), 5).unwrap(), img);
    for seed in 0..20 {
        let out = augment(&img, &AugmentPolicy::cifar(), seed).unwrap();
        assert_eq!(out.label, img.label);
        assert_eq!(out.pixels.shape(), img.pixels.shape());
        assert_eq!(out, augment(&img, &AugmentPolicy::cifar(), seed).unwrap());
    }
    let too_big = AugmentPolicy { crop: Some((40, 32)), ..AugmentPolicy::none() };
    assert!(matches!(augment(&img, &too_big, 0), Err(Error::Argument(_))));
}

#[test]
fn geometric_primitives() {
    let img = random_images(1, 3).remove(0).pixels;
    let f = flip_horizontal(&img);
    for c in 0..3 {
        for i in 0..32 {
            for j in 0..32 {
                assert_eq!(f.at(0, c, i, j), img.at(0, c, i, 31 - j));
            }
        }
    }
    assert!(rotate_shear(&img, 0.0, 0.0).max_abs_diff(&img) < 1e-12);
    assert!(crop_resize(&img, 0, 0, 32, 32).max_abs_diff(&img) < 1e-12);
    let crop = crop_resize(&img, 3, 4, 26, 32);
    assert_eq!(crop.shape().dims(), [1, 3, 32, 32]);
}

#[test]
fn tiling_examples() {
    let img = Tensor::from_fn((1, 1, 8, 8), |_, _, h, w| (h * 8 + w) as f64);
    assert_eq!(tile_image(&img, 4, 4, 4).unwrap().len(), 4);
    let whole = tile_image(&img, 8, 8, 3).unwrap();
    assert_eq!(whole, vec![img.clone()]);
    let tall = Tensor::zeros((1, 1, 10, 8));
    assert_eq!(tile_image(&tall, 4, 4, 4).unwrap().len(), 6);
    assert!(matches!(tile_image(&img, 9, 4, 4), Err(Error::Argument(_))));
    assert!(tile_image(&img, 4, 4, 0).is_err());
}

#[test]
fn tiles_match_brute_force_windows() {
    let mut r = rng(7);
    for _ in 0..50 {
        let (h, w) = (r.random_range(1..=20), r.random_range(1..=20));
        let (th, tw) = (r.random_range(1..=h), r.random_range(1..=w));
        let step = r.random_range(1..=6);
        let c = r.random_range(1..=3);
        let img = Tensor::from_fn((1, c, h, w), |_, c, i, j| (c * 1000 + i * 40 + j) as f64);
        let tiles = tile_image(&img, th, tw, step).unwrap();
        let rows = brute_offsets(h, th, step);
        let cols = brute_offsets(w, tw, step);
        assert_eq!(tiles.len(), rows.len() * cols.len());
        let mut it = tiles.iter();
        for &r0 in &rows {
            for &c0 in &cols {
                let t = it.next().unwrap();
                let want = Tensor::from_fn((1, c, th, tw), |_, ch, i, j| img.at(0, ch, r0 + i, c0 + j));
                assert_eq!(t, &want);
            }
        }
        if step <= th && step <= tw {
            let mut covered = vec![false; h * w];
            for &r0 in &rows {
                for &c0 in &cols {
                    for i in r0..r0 + th {
                        for j in c0..c0 + tw {
                            covered[i * w + j] = true;
                        }
                    }
                }
            }
            assert!(covered.iter().all(|v| *v));
        }
    }
}
