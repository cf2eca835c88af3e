//! Patch sampling, heatmap scoring and thresholding against brute-force references.

use patchspn::ae::{build_ae, AeConfig, AeModel, Variant};
use patchspn::circuit::{build_region_graph, materialize, LeafInit, Standardization};
use patchspn::grid::{Image, Mask};
use patchspn::pipeline::{
    extract_patches, make_synthetic_dataset, score_image, threshold_heatmap, Label, LabeledImage, PatchConfig, PatchScorer,
    RegionTag, ScoreConfig,
};
use patchspn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn nearest_distance(mask: &Mask, y: usize, x: usize, want: bool) -> f64 {
    let (h, w) = mask.dims();
    let mut best = i64::MAX;
    for ty in 0..h {
        for tx in 0..w {
            if *mask.get(ty, tx) == want {
                best = best.min((y as i64 - ty as i64).pow(2) + (x as i64 - tx as i64).pow(2));
            }
        }
    }
    (best as f64).sqrt()
}

fn small_cae(patch: usize) -> AeModel {
    build_ae(Variant::Cae, AeConfig { patch_size: patch, channels: vec![2, 2], kernel: 3, latent_dim: 4, residual_blocks: 0, seed: 3, ..AeConfig::default() })
        .unwrap()
}

fn labeled(image: Image, tissue: Mask) -> LabeledImage {
    let (h, w) = image.dims();
    LabeledImage {
        image,
        tissue_mask: tissue,
        anomaly_mask: Mask::filled(h, w, false),
        subject_id: "s".into(),
        image_id: "img".into(),
        label: Label::Healthy,
    }
}

#[test]
fn patch_centres_respect_the_contour_band() {
    let img = make_synthetic_dataset(1, 0, 0, 128, 9).unwrap().remove(0);
    let cfg = PatchConfig { patch_size: 32, per_image: 21, band: 6.0, ..PatchConfig::default() };
    let set = extract_patches(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(set.patches.shape(), &[21, 1, 32, 32]);
    let interior = set.origins.iter().filter(|o| o.tag == RegionTag::Interior).count();
    assert_eq!(interior, 11);
    for (i, o) in set.origins.iter().enumerate() {
        let in_tissue = *img.tissue_mask.get(o.row, o.col);
        let d = nearest_distance(&img.tissue_mask, o.row, o.col, !in_tissue);
        match o.tag {
            RegionTag::Interior => assert!(in_tissue && d > cfg.band, "{o:?} d={d}"),
            RegionTag::Contour => assert!(d <= cfg.band, "{o:?} d={d}"),
        }
        let (y0, x0) = (o.row - 16, o.col - 16);
        assert_eq!(set.patches.item(i), img.image.window(y0, x0, 32).as_slice());
    }
}

#[test]
fn anomalous_windows_are_never_sampled() {
    let img = make_synthetic_dataset(0, 1, 0, 128, 4).unwrap().remove(0);
    let cfg = PatchConfig { patch_size: 32, per_image: 30, ..PatchConfig::default() };
    let set = extract_patches(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for o in &set.origins {
        assert!(!img.anomaly_mask.any_in(o.row - 16, o.row + 16, o.col - 16, o.col + 16));
    }
}

#[test]
fn cae_heatmap_is_per_window_reconstruction_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let image = Image::from_fn(40, 48, |_, _| rng.random::<f64>());
    let tissue = Mask::from_fn(40, 48, |y, x| (y as f64 - 20.0).powi(2) + (x as f64 - 10.0).powi(2) < 500.0);
    let img = labeled(image, tissue);
    let ae = small_cae(8);
    let hm = score_image(&img, PatchScorer::Autoencoder(&ae), &ScoreConfig { stride: 4, seed: 0 }).unwrap();
    assert_eq!((hm.grid_h, hm.grid_w), (9, 11));
    for gy in 0..hm.grid_h {
        for gx in 0..hm.grid_w {
            let (cy, cx) = (gy * 4 + 4, gx * 4 + 4);
            let k = gy * hm.grid_w + gx;
            assert_eq!(hm.valid[k], *img.tissue_mask.get(cy, cx));
            if hm.valid[k] {
                let x = Tensor::new(&[1, 1, 8, 8], img.image.window(gy * 4, gx * 4, 8)).unwrap();
                let r = ae.reconstruct(&x).unwrap();
                let mse = x.data().iter().zip(r.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 64.0;
                assert!((hm.scores[k] - mse).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn full_tissue_256_gives_13_by_13_grid_and_one_percent_segmentation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = labeled(Image::from_fn(256, 256, |_, _| rng.random::<f64>()), Mask::filled(256, 256, true));
    let ae = small_cae(64);
    let mut hm = score_image(&img, PatchScorer::Autoencoder(&ae), &ScoreConfig::default()).unwrap();
    assert_eq!((hm.grid_h, hm.grid_w), (13, 13));
    assert!(hm.valid.iter().all(|v| *v));

    // random position scores: about 1% of the positions survive a p99 cut
    let mut above = 0;
    for trial in 0..50u64 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + trial);
        hm.scores.iter_mut().for_each(|s| *s = r.random::<f64>());
        let seg = threshold_heatmap(&hm, 99.0, &img.tissue_mask).unwrap();
        let n = seg.grid.iter().filter(|g| **g).count();
        assert!((1..=2).contains(&n), "{n}");
        above += n;
    }
    let frac = above as f64 / (50.0 * 169.0);
    assert!((frac - 0.01).abs() < 0.005, "{frac}");
}

#[test]
fn circuit_scorer_composes_encoder_standardization_and_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let image = Image::from_fn(32, 32, |_, _| rng.random::<f64>());
    let img = labeled(image, Mask::filled(32, 32, true));
    let ae = small_cae(8);
    let windows: Vec<f64> = (0..20).flat_map(|i| img.image.window(i, i / 2, 8)).collect();
    let z = ae.encode(&Tensor::new(&[20, 1, 8, 8], windows).unwrap()).unwrap();
    let st = Standardization::fit(&z).unwrap();
    let rg = build_region_graph(4, 2, 2, 1).unwrap();
    let mut circuit = materialize(&rg, 1, 2, 2, LeafInit::Data(&st.apply(&z).unwrap())).unwrap();
    circuit.standardization = Some(st.clone());

    let hm = score_image(&img, PatchScorer::Circuit { ae: &ae, circuit: &circuit }, &ScoreConfig { stride: 8, seed: 0 }).unwrap();
    for gy in 0..hm.grid_h {
        for gx in 0..hm.grid_w {
            let x = Tensor::new(&[1, 1, 8, 8], img.image.window(gy * 8, gx * 8, 8)).unwrap();
            let z = ae.encode(&x).unwrap();
            let zs: Vec<f64> = z.data().iter().zip(&st.mean).zip(&st.std).map(|((v, m), s)| (v - m) / s).collect();
            let expected = -circuit.log_likelihood_one(&zs).unwrap();
            assert!((hm.scores[gy * hm.grid_w + gx] - expected).abs() < 1e-12);
        }
    }
}
