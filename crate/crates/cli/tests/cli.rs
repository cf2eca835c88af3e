use std::path::Path;
use std::process::{Command, Output};

use patchspn::eval::{auc, hausdorff};
use patchspn::grid::{Image, Mask};
use patchspn::pipeline::{write_dataset, HeatmapResult, Label, LabeledImage};
use patchspn::tensor::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn patchspn(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchspn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("PATCHSPN_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = patchspn(dir.path(), &["train-spn", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let help = patchspn(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = patchspn(dir.path(), &["train-ae"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!dir.path().join(".patchspn.lock").exists());
}

#[test]
fn print_config_resolves_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[spn]\nreplicas = 3\n[ae]\nvariant = \"vqvae\"\n").unwrap();
    let o = patchspn(dir.path(), &["train-spn", "--config", cfg.to_str().unwrap(), "--inputs", "7", "--print-config"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let table: toml::Table = text.parse().unwrap();
    assert_eq!(table["seed"].as_integer(), Some(5));
    assert_eq!(table["spn"]["replicas"].as_integer(), Some(3));
    assert_eq!(table["spn"]["inputs"].as_integer(), Some(7));
    assert_eq!(table["spn"]["sums"].as_integer(), Some(7));
    assert_eq!(table["ae"]["epochs"].as_integer(), Some(20));
    assert_eq!(table["pipeline"]["stride"].as_integer(), Some(16));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[spn]\nbogus = 1\n").unwrap();
    assert_eq!(patchspn(dir.path(), &["report", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn train_spn_full_batch_trace_is_monotone_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let centers = [(-4.0, 0.0), (0.0, 3.0), (4.0, -2.0)];
    let mut data = Vec::new();
    for i in 0..600 {
        let (cx, cy) = centers[i % 3];
        data.push(cx + rng.random_range(-1.0..1.0));
        data.push(cy + rng.random_range(-1.0..1.0));
    }
    let fixture = dir.path().join("gmm.aetn");
    Tensor::new(&[600, 2], data).unwrap().save(&fixture, DType::F64).unwrap();
    let args = ["train-spn", "--train", fixture.to_str().unwrap(), "--depth", "0", "--inputs", "3", "--mode", "full-batch", "--em-epochs", "15"];
    let o = patchspn(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = std::fs::read_to_string(dir.path().join("spn/ll_trace.csv")).unwrap();
    let lls: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(lls.len(), 16);
    assert!(lls.windows(2).all(|w| w[1] >= w[0] - 1e-8), "{lls:?}");
    let first = std::fs::read(dir.path().join("spn/manifest.toml")).unwrap();
    assert!(String::from_utf8_lossy(&first).contains("config_sha256"));
    let again = patchspn(dir.path(), &args);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("spn/manifest.toml")).unwrap(), first);
}

/// Two 128×128 images with known heatmaps; metrics are checked against
/// pair counting and brute-force Hausdorff.
#[test]
fn evaluate_matches_metric_oracles() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("fixture");
    let heat_dir = dir.path().join("maps");
    std::fs::create_dir_all(&heat_dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut images = Vec::new();
    let mut oracle_aucs = Vec::new();
    let mut oracle_h = Vec::new();
    for k in 0..2 {
        let id = format!("img{k}");
        let anomaly = Mask::from_fn(128, 128, |y, x| (40 + 16 * k..70 + 16 * k).contains(&y) && (50..80).contains(&x));
        let img = LabeledImage {
            image: Image::filled(128, 128, 0.5),
            tissue_mask: Mask::filled(128, 128, true),
            anomaly_mask: anomaly.clone(),
            subject_id: id.clone(),
            image_id: id.clone(),
            label: Label::Mass,
        };
        let scores: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut hm = HeatmapResult {
            image_id: id.clone(),
            height: 128,
            width: 128,
            patch_size: 64,
            stride: 16,
            grid_h: 5,
            grid_w: 5,
            scores: scores.clone(),
            valid: vec![true; 25],
            map: Image::filled(128, 128, 0.0),
        };
        hm.map = hm.upsample(&hm.scores);
        hm.save(&heat_dir).unwrap();
        let labels: Vec<bool> = (0..25).map(|i| *anomaly.get(32 + 16 * (i / 5), 32 + 16 * (i % 5))).collect();
        let mut pairs = 0.0;
        let mut total = 0.0;
        for (si, li) in scores.iter().zip(&labels) {
            for (sj, lj) in scores.iter().zip(&labels) {
                if *li && !*lj {
                    total += 1.0;
                    pairs += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        oracle_aucs.push(pairs / total);
        assert_eq!(auc(&scores, &labels).unwrap(), pairs / total);
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let pos = 0.99 * 24.0;
        let t = sorted[23] + (pos - 23.0) * (sorted[24] - sorted[23]);
        let seg = hm.upsample(&scores.iter().map(|s| *s > t).collect::<Vec<_>>());
        let brute = seg
            .points()
            .iter()
            .map(|a| anomaly.points().iter().map(|b| (a.0 as f64 - b.0 as f64).hypot(a.1 as f64 - b.1 as f64)).fold(f64::INFINITY, f64::min))
            .chain(anomaly.points().iter().map(|b| {
                seg.points().iter().map(|a| (a.0 as f64 - b.0 as f64).hypot(a.1 as f64 - b.1 as f64)).fold(f64::INFINITY, f64::min)
            }))
            .fold(0.0, f64::max);
        assert_eq!(hausdorff(&seg, &anomaly).unwrap(), brute);
        oracle_h.push(brute);
        images.push(img);
    }
    write_dataset(&data_dir, &images).unwrap();
    let manifest = data_dir.join("manifest.csv");
    let o = patchspn(dir.path(), &["evaluate", "--data", manifest.to_str().unwrap(), "--heatmaps", heat_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics: toml::Table = std::fs::read_to_string(dir.path().join("metrics/maps/metrics.toml")).unwrap().parse().unwrap();
    let mean_auc = (oracle_aucs[0] + oracle_aucs[1]) / 2.0;
    assert!((metrics["imagewise_auc_mean"].as_float().unwrap() - mean_auc).abs() < 1e-12);
    let mean_h = (oracle_h[0] + oracle_h[1]) / 2.0;
    assert!((metrics["hausdorff_mean"].as_float().unwrap() - mean_h).abs() < 1e-9);
    assert!(metrics.contains_key("gap_statistic"));
    assert!(dir.path().join("metrics/maps/histogram.csv").exists());

    let r = patchspn(dir.path(), &["report"]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    assert!(String::from_utf8_lossy(&r.stdout).contains("maps"));
}

#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(
        &cfg,
        "seed = 3\n\
         [data]\nimage_size = 128\nn_healthy = 4\nn_mass = 2\nn_calc = 1\ntrain_fraction = 0.5\n\
         [architecture]\nchannels = [4, 8, 8]\nlatent_dim = 4\n\
         [ae]\nepochs = 1\nlr = 0.001\nbatch_size = 8\n\
         [spn]\nreplicas = 2\ninputs = 2\nsums = 2\n\
         [em]\nepochs = 2\nmode = \"full_batch\"\n\
         [pipeline]\npatches_per_image = 4\npercentile = 90.0\nhistogram_bins = 5\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let circuit = dir.path().join("spn/circuit.spnc");
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth-data"],
        vec!["extract-patches"],
        vec!["train-ae"],
        vec!["encode"],
        vec!["train-spn"],
        vec!["score"],
        vec!["score", "--circuit", circuit.to_str().unwrap()],
    ];
    for step in &steps {
        let mut args = step.clone();
        args.extend(["--config", c]);
        let o = patchspn(dir.path(), &args);
        assert_eq!(o.status.code(), Some(0), "{step:?}: {}", stderr(&o));
    }
    for name in ["cae", "cae-spn"] {
        let maps = dir.path().join("heatmaps").join(name);
        assert_eq!(std::fs::read_dir(&maps).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "heat")).count(), 3);
        for cmd in ["segment", "evaluate"] {
            let o = patchspn(dir.path(), &[cmd, "--config", c, "--heatmaps", maps.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{cmd} {name}: {}", stderr(&o));
        }
    }
    let o = patchspn(dir.path(), &["report", "--config", c]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("cae-spn") && table.lines().count() == 3, "{table}");
    let diverge = patchspn(dir.path(), &["train-ae", "--config", c, "--lr", "1e30", "--epochs", "3"]);
    assert_eq!(diverge.status.code(), Some(3), "{}", stderr(&diverge));
    assert!(std::fs::read_to_string(dir.path().join("diagnostics.txt")).unwrap().contains("train-ae"));
    for stage in ["data", "patches", "ae", "latents", "spn", "heatmaps/cae", "segmentations/cae", "metrics/cae-spn", "report"] {
        assert!(dir.path().join(stage).join("manifest.toml").exists(), "{stage}");
    }
}
