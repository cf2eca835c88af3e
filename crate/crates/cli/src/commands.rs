//! Subcommands. Each writes into its own stage directory under the output
//! root and finishes with a manifest of inputs and artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use patchspn::ae::{build_ae, train_ae, AeConfig, AeModel, Variant};
use patchspn::circuit::Circuit;
use patchspn::em::EmMode;
use patchspn::eval::{export_score_histograms, MetricsReport, ScoredPixelSet};
use patchspn::pipeline::{
    evaluate_heatmaps, extract_dataset, fit_circuit, make_synthetic_dataset, read_dataset, score_images, split_dataset, split_scores,
    threshold_heatmap, write_dataset, write_mask, HeatmapResult, Label, LabeledImage, PatchConfig, PatchScorer, PatchSet, ScoreConfig,
};
use patchspn::seed;
use patchspn::tensor::{DType, Tensor};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::CliError;

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub config_text: String,
}

impl Context {
    /// Fresh stage directory `<out>/<parts...>`.
    fn stage(&self, parts: &[&str]) -> Result<PathBuf, CliError> {
        let dir = parts.iter().fold(self.out.clone(), |p, s| p.join(s));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn manifest(&self, command: &str) -> Manifest {
        Manifest::new(command, self.cfg.seed, &self.config_text)
    }

    fn finish(&self, m: Manifest, dir: &Path) -> Result<(), CliError> {
        m.finish(dir, &self.config_text)
    }

    fn data(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone().unwrap_or_else(|| self.cfg.data_manifest(&self.out))
    }

    fn derive(&self, stage: &str) -> u64 {
        seed::derive(self.cfg.seed, stage, 0)
    }
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} not found: {}", path.display())))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic image benchmark.
    SynthData(SynthArgs),
    /// Split healthy images by subject and sample training patches.
    ExtractPatches(ExtractArgs),
    /// Train an autoencoder on healthy patches.
    TrainAe(TrainAeArgs),
    /// Encode patches into autoencoder latents.
    Encode(EncodeArgs),
    /// Fit a RAT-SPN to latents with EM.
    TrainSpn(TrainSpnArgs),
    /// Score test images into patch-grid heatmaps.
    Score(ScoreArgs),
    /// Threshold heatmaps into binary segmentations.
    Segment(SegmentArgs),
    /// Compute AUC, Hausdorff distance and score histograms.
    Evaluate(EvaluateArgs),
    /// Tabulate several evaluations side by side.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    n_healthy: Option<usize>,
    #[arg(long)]
    n_mass: Option<usize>,
    #[arg(long)]
    n_calc: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Dataset manifest (default: <data_root>/manifest.csv).
    #[arg(long, value_name = "CSV")]
    data: Option<PathBuf>,
    #[arg(long)]
    per_image: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainAeArgs {
    /// Directory with train/val patch sets (default: <out>/patches).
    #[arg(long, value_name = "DIR")]
    patches: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Autoencoder checkpoint (default: <out>/ae/model.aeck).
    #[arg(long, value_name = "FILE")]
    ae: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    patches: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainSpnArgs {
    /// `[n, D]` latent tensor (default: <out>/latents/train.aetn).
    #[arg(long, value_name = "FILE")]
    train: Option<PathBuf>,
    /// Validation latents (default: <out>/latents/val.aetn when present).
    #[arg(long, value_name = "FILE")]
    val: Option<PathBuf>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    roots: Option<usize>,
    /// Sum nodes per internal region (default: same as --inputs).
    #[arg(long)]
    sums: Option<usize>,
    #[arg(long)]
    inputs: Option<usize>,
    #[arg(long)]
    em_epochs: Option<usize>,
    #[arg(long)]
    em_batch_size: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    /// `full-batch` or `stochastic`.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<EmMode>,
}

fn parse_mode(s: &str) -> Result<EmMode, String> {
    match s {
        "full-batch" | "full_batch" => Ok(EmMode::FullBatch),
        "stochastic" => Ok(EmMode::Stochastic),
        other => Err(format!("unknown EM mode '{other}' (expected full-batch or stochastic)")),
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_name = "CSV")]
    data: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    ae: Option<PathBuf>,
    /// Circuit; without it the autoencoder's own score is used.
    #[arg(long, value_name = "FILE")]
    circuit: Option<PathBuf>,
    #[arg(long)]
    stride: Option<usize>,
    /// Also score healthy images.
    #[arg(long)]
    include_healthy: bool,
    /// Restrict to one label (`mass` or `calcification`).
    #[arg(long)]
    label: Option<String>,
    /// Output name under <out>/heatmaps (default: derived from the scorer).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long, value_name = "CSV")]
    data: Option<PathBuf>,
    /// Directory of `.heat` files.
    #[arg(long, value_name = "DIR")]
    heatmaps: PathBuf,
    #[arg(long)]
    percentile: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "CSV")]
    data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    heatmaps: PathBuf,
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
    /// Report name (default: the heatmap directory name).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation directories (default: every directory under <out>/metrics).
    #[arg(value_name = "DIR")]
    metrics: Vec<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthData(_) => "synth-data",
            Command::ExtractPatches(_) => "extract-patches",
            Command::TrainAe(_) => "train-ae",
            Command::Encode(_) => "encode",
            Command::TrainSpn(_) => "train-spn",
            Command::Score(_) => "score",
            Command::Segment(_) => "segment",
            Command::Evaluate(_) => "evaluate",
            Command::Report(_) => "report",
        }
    }

    /// Writes flag values over the configuration.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        match self {
            Command::SynthData(a) => {
                set(&mut cfg.data.n_healthy, &a.n_healthy);
                set(&mut cfg.data.n_mass, &a.n_mass);
                set(&mut cfg.data.n_calc, &a.n_calc);
                set(&mut cfg.data.image_size, &a.image_size);
            }
            Command::ExtractPatches(a) => {
                set(&mut cfg.pipeline.patches_per_image, &a.per_image);
                set(&mut cfg.data.train_fraction, &a.train_fraction);
            }
            Command::TrainAe(a) => {
                set(&mut cfg.ae.variant, &a.variant);
                if a.epochs.is_some() {
                    cfg.ae.epochs = a.epochs;
                }
                if a.lr.is_some() {
                    cfg.ae.lr = a.lr;
                }
                set(&mut cfg.ae.batch_size, &a.batch_size);
            }
            Command::TrainSpn(a) => {
                set(&mut cfg.spn.depth, &a.depth);
                set(&mut cfg.spn.replicas, &a.replicas);
                set(&mut cfg.spn.roots, &a.roots);
                set(&mut cfg.spn.inputs, &a.inputs);
                cfg.spn.sums = a.sums.or(a.inputs).unwrap_or(cfg.spn.sums);
                set(&mut cfg.em.epochs, &a.em_epochs);
                set(&mut cfg.em.batch_size, &a.em_batch_size);
                set(&mut cfg.em.step_size, &a.step_size);
                set(&mut cfg.em.mode, &a.mode);
            }
            Command::Score(a) => set(&mut cfg.pipeline.stride, &a.stride),
            Command::Segment(a) => set(&mut cfg.pipeline.percentile, &a.percentile),
            Command::Evaluate(a) => {
                set(&mut cfg.pipeline.percentile, &a.percentile);
                set(&mut cfg.pipeline.histogram_bins, &a.bins);
            }
            Command::Encode(_) | Command::Report(_) => {}
        }
        Ok(())
    }

    pub fn execute(&self, ctx: &Context) -> Result<(), CliError> {
        match self {
            Command::SynthData(_) => synth_data(ctx),
            Command::ExtractPatches(a) => extract_patches(ctx, a),
            Command::TrainAe(a) => train_autoencoder(ctx, a),
            Command::Encode(a) => encode(ctx, a),
            Command::TrainSpn(a) => train_spn(ctx, a),
            Command::Score(a) => score(ctx, a),
            Command::Segment(a) => segment(ctx, a),
            Command::Evaluate(a) => evaluate(ctx, a),
            Command::Report(a) => report(ctx, a),
        }
    }
}

fn synth_data(ctx: &Context) -> Result<(), CliError> {
    let d = &ctx.cfg.data;
    let images = make_synthetic_dataset(d.n_healthy, d.n_mass, d.n_calc, d.image_size, ctx.derive("data"))?;
    let dir = ctx.stage(&["data"])?;
    write_dataset(&dir, &images)?;
    ctx.finish(ctx.manifest("synth-data"), &dir)?;
    println!("wrote {} images to {}", images.len(), dir.display());
    Ok(())
}

fn extract_patches(ctx: &Context, a: &ExtractArgs) -> Result<(), CliError> {
    let data = ctx.data(&a.data);
    require(&data, "dataset manifest")?;
    let healthy: Vec<LabeledImage> = read_dataset(&data)?.into_iter().filter(|i| i.label == Label::Healthy).collect();
    if healthy.is_empty() {
        return Err(CliError::Data(format!("{} contains no healthy images", data.display())));
    }
    let split = split_dataset(&healthy, ctx.cfg.data.train_fraction, ctx.derive("split"))?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| healthy[i].clone()).collect::<Vec<_>>();
    let p = &ctx.cfg.pipeline;
    let patch_cfg = |stage: &str| PatchConfig {
        patch_size: ctx.cfg.architecture.patch_size,
        per_image: p.patches_per_image,
        band: p.band,
        reject_anomalies: true,
        seed: ctx.derive(stage),
    };
    let train = extract_dataset(&pick(&split.train), &patch_cfg("patches-train"))?;
    let val = extract_dataset(&pick(&split.val), &patch_cfg("patches-val"))?;
    let dir = ctx.stage(&["patches"])?;
    train.save(&dir, "train")?;
    val.save(&dir, "val")?;
    let mut m = ctx.manifest("extract-patches");
    m.add_input(&data)?;
    ctx.finish(m, &dir)?;
    println!("{} training and {} validation patches in {}", train.len(), val.len(), dir.display());
    Ok(())
}

fn load_patches(ctx: &Context, flag: &Option<PathBuf>) -> Result<(PathBuf, PatchSet, Option<PatchSet>), CliError> {
    let dir = flag.clone().unwrap_or_else(|| ctx.out.join("patches"));
    require(&dir.join("train.aetn"), "training patches")?;
    let train = PatchSet::load(&dir, "train")?;
    let val = if dir.join("val.aetn").exists() { Some(PatchSet::load(&dir, "val")?) } else { None };
    Ok((dir, train, val))
}

fn train_autoencoder(ctx: &Context, a: &TrainAeArgs) -> Result<(), CliError> {
    let (pdir, train, val) = load_patches(ctx, &a.patches)?;
    let arch = AeConfig { seed: ctx.derive("ae"), ..ctx.cfg.architecture.clone() };
    let mut model = build_ae(ctx.cfg.ae.variant, arch)?;
    let trace = train_ae(&mut model, &train.patches, val.as_ref().map(|v| &v.patches), &ctx.cfg.train_config())?;
    let dir = ctx.stage(&["ae"])?;
    model.save(dir.join("model.aeck"))?;
    trace.save_csv(dir.join("loss.csv"))?;
    let mut m = ctx.manifest("train-ae");
    m.add_input(&pdir)?;
    ctx.finish(m, &dir)?;
    if let Some(last) = trace.epochs.last() {
        println!("{} epochs, final training loss {:.6}", trace.epochs.len(), last.train.total);
    }
    Ok(())
}

fn load_ae(ctx: &Context, flag: &Option<PathBuf>) -> Result<(PathBuf, AeModel), CliError> {
    let path = flag.clone().unwrap_or_else(|| ctx.out.join("ae").join("model.aeck"));
    require(&path, "autoencoder checkpoint")?;
    let model = AeModel::load(&path)?;
    Ok((path, model))
}

fn encode(ctx: &Context, a: &EncodeArgs) -> Result<(), CliError> {
    let (ae_path, model) = load_ae(ctx, &a.ae)?;
    let (pdir, train, val) = load_patches(ctx, &a.patches)?;
    let dir = ctx.stage(&["latents"])?;
    model.encode(&train.patches)?.save(dir.join("train.aetn"), DType::F64)?;
    if let Some(v) = &val {
        model.encode(&v.patches)?.save(dir.join("val.aetn"), DType::F64)?;
    }
    let mut m = ctx.manifest("encode");
    m.add_input(&ae_path)?;
    m.add_input(&pdir)?;
    ctx.finish(m, &dir)?;
    println!("encoded {} patches into {}-dimensional latents", train.len() + val.map_or(0, |v| v.len()), model.latent_dim());
    Ok(())
}

fn train_spn(ctx: &Context, a: &TrainSpnArgs) -> Result<(), CliError> {
    let train_path = a.train.clone().unwrap_or_else(|| ctx.out.join("latents").join("train.aetn"));
    require(&train_path, "training latents")?;
    let val_path = a.val.clone().or_else(|| {
        let p = ctx.out.join("latents").join("val.aetn");
        (a.train.is_none() && p.exists()).then_some(p)
    });
    let train = Tensor::load(&train_path)?;
    let val = val_path.as_ref().map(Tensor::load).transpose()?;
    let em = patchspn::em::EmConfig { seed: ctx.derive("em"), ..ctx.cfg.em.clone() };
    let (circuit, trace) = fit_circuit(&train, val.as_ref(), &ctx.cfg.spn, &em, ctx.cfg.seed)?;
    let report = circuit.validate_structure();
    if !report.is_valid() {
        return Err(CliError::Data(format!("trained circuit is invalid:\n{report}")));
    }
    let dir = ctx.stage(&["spn"])?;
    circuit.save(dir.join("circuit.spnc"))?;
    trace.save_csv(dir.join("ll_trace.csv"))?;
    let mut m = ctx.manifest("train-spn");
    m.add_input(&train_path)?;
    if let Some(v) = &val_path {
        m.add_input(v)?;
    }
    ctx.finish(m, &dir)?;
    if let Some(last) = trace.epochs.last() {
        println!("{} nodes, final mean training log-likelihood {:.6}", circuit.num_nodes(), last.mean_train_ll);
    }
    Ok(())
}

fn score(ctx: &Context, a: &ScoreArgs) -> Result<(), CliError> {
    let data = ctx.data(&a.data);
    require(&data, "dataset manifest")?;
    let label = a.label.as_deref().map(str::parse::<Label>).transpose()?;
    let images: Vec<LabeledImage> = read_dataset(&data)?
        .into_iter()
        .filter(|i| label.map_or(a.include_healthy || i.label != Label::Healthy, |l| i.label == l))
        .collect();
    if images.is_empty() {
        return Err(CliError::Data("no images selected for scoring".into()));
    }
    let (ae_path, model) = load_ae(ctx, &a.ae)?;
    let circuit = a.circuit.as_ref().map(|p| require(p, "circuit").and_then(|_| Ok(Circuit::load(p)?))).transpose()?;
    let scorer = match &circuit {
        Some(c) => PatchScorer::Circuit { ae: &model, circuit: c },
        None => PatchScorer::Autoencoder(&model),
    };
    scorer.check()?;
    let name = a.name.clone().unwrap_or_else(|| scorer.name().replace('+', "-"));
    let score_cfg = ScoreConfig { stride: ctx.cfg.pipeline.stride, seed: ctx.derive("score") };
    let heatmaps = score_images(&images, scorer, &score_cfg)?;
    let dir = ctx.stage(&["heatmaps", &name])?;
    for hm in &heatmaps {
        hm.save(&dir)?;
    }
    let mut m = ctx.manifest("score");
    m.add_input(&data)?;
    m.add_input(&ae_path)?;
    if let Some(p) = &a.circuit {
        m.add_input(p)?;
    }
    ctx.finish(m, &dir)?;
    println!("scored {} images into {}", heatmaps.len(), dir.display());
    Ok(())
}

/// Images that have a heatmap in `dir`, in dataset order, paired with it.
fn pair_heatmaps(data: &Path, dir: &Path) -> Result<(Vec<LabeledImage>, Vec<HeatmapResult>), CliError> {
    require(data, "dataset manifest")?;
    require(dir, "heatmap directory")?;
    let mut maps: BTreeMap<String, HeatmapResult> = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "heat") {
            let hm = HeatmapResult::load(&p)?;
            maps.insert(hm.image_id.clone(), hm);
        }
    }
    let mut images = Vec::new();
    let mut heatmaps = Vec::new();
    for img in read_dataset(data)? {
        if let Some(hm) = maps.remove(&img.image_id) {
            heatmaps.push(hm);
            images.push(img);
        }
    }
    if let Some(id) = maps.keys().next() {
        return Err(CliError::Data(format!("heatmap {id} has no image in {}", data.display())));
    }
    if images.is_empty() {
        return Err(CliError::Data(format!("no heatmaps in {}", dir.display())));
    }
    Ok((images, heatmaps))
}

fn dir_name(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "heatmaps".into())
}

fn segment(ctx: &Context, a: &SegmentArgs) -> Result<(), CliError> {
    let data = ctx.data(&a.data);
    let (images, heatmaps) = pair_heatmaps(&data, &a.heatmaps)?;
    let dir = ctx.stage(&["segmentations", &dir_name(&a.heatmaps)])?;
    for (img, hm) in images.iter().zip(&heatmaps) {
        let seg = threshold_heatmap(hm, ctx.cfg.pipeline.percentile, &img.tissue_mask)?;
        write_mask(dir.join(format!("{}.pgm", img.image_id)), &seg.mask)?;
    }
    let mut m = ctx.manifest("segment");
    m.add_input(&data)?;
    m.add_input(&a.heatmaps)?;
    ctx.finish(m, &dir)?;
    println!("wrote {} segmentations to {}", images.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct EvaluationFile<'a> {
    #[serde(flatten)]
    metrics: &'a MetricsReport,
    gap_statistic: Option<f64>,
}

fn evaluate(ctx: &Context, a: &EvaluateArgs) -> Result<(), CliError> {
    let data = ctx.data(&a.data);
    let (images, heatmaps) = pair_heatmaps(&data, &a.heatmaps)?;
    let name = a.name.clone().unwrap_or_else(|| dir_name(&a.heatmaps));
    let (report, _) = evaluate_heatmaps(&name, &images, &heatmaps, ctx.cfg.pipeline.percentile)?;
    let sets: Vec<ScoredPixelSet> = heatmaps.iter().zip(&images).map(|(h, i)| h.scored_set(&i.anomaly_mask)).collect::<Result<_, _>>()?;
    let (healthy, anomalous) = split_scores(&sets);
    let dir = ctx.stage(&["metrics", &name])?;
    let mut gap = None;
    if !healthy.is_empty() && !anomalous.is_empty() {
        let hist = export_score_histograms(&healthy, &anomalous, ctx.cfg.pipeline.histogram_bins)?;
        hist.save_csv(dir.join("histogram.csv"))?;
        gap = Some(hist.gap);
    }
    let text = toml::to_string(&EvaluationFile { metrics: &report, gap_statistic: gap }).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(dir.join("metrics.toml"), &text)?;
    report.write_csv(fs::File::create(dir.join("metrics.csv"))?)?;
    let mut m = ctx.manifest("evaluate");
    m.add_input(&data)?;
    m.add_input(&a.heatmaps)?;
    ctx.finish(m, &dir)?;
    print!("{text}");
    Ok(())
}

const REPORT_COLUMNS: [&str; 7] =
    ["model", "images", "pixelwise_auc", "imagewise_auc_mean", "imagewise_auc_std", "hausdorff_mean", "gap_statistic"];

fn report(ctx: &Context, a: &ReportArgs) -> Result<(), CliError> {
    let dirs = if a.metrics.is_empty() {
        let root = ctx.out.join("metrics");
        require(&root, "metrics directory")?;
        let mut d: Vec<PathBuf> = fs::read_dir(&root)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        d.sort();
        d
    } else {
        a.metrics.clone()
    };
    let mut rows = Vec::new();
    for d in &dirs {
        let path = d.join("metrics.toml");
        require(&path, "metrics file")?;
        let table: toml::Table = fs::read_to_string(&path)?.parse().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let cell = |k: &str| match table.get(k) {
            Some(toml::Value::String(s)) => s.clone(),
            Some(toml::Value::Float(f)) => format!("{f:.4}"),
            Some(v) => v.to_string(),
            None => "-".into(),
        };
        rows.push(REPORT_COLUMNS.map(cell));
    }
    if rows.is_empty() {
        return Err(CliError::Data("no evaluations to report".into()));
    }
    let dir = ctx.stage(&["report"])?;
    let mut w = csv::Writer::from_path(dir.join("report.csv")).map_err(|e| CliError::Data(e.to_string()))?;
    w.write_record(REPORT_COLUMNS).map_err(|e| CliError::Data(e.to_string()))?;
    for r in &rows {
        w.write_record(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush()?;
    let widths: Vec<usize> = (0..REPORT_COLUMNS.len()).map(|c| rows.iter().map(|r| r[c].len()).chain([REPORT_COLUMNS[c].len()]).max().unwrap_or(0)).collect();
    let line = |cells: &[String]| cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string();
    let mut text = line(&REPORT_COLUMNS.map(String::from)) + "\n";
    for r in &rows {
        text += &(line(r) + "\n");
    }
    fs::write(dir.join("report.txt"), &text)?;
    let mut m = ctx.manifest("report");
    for d in &dirs {
        m.add_input(&d.join("metrics.toml"))?;
    }
    ctx.finish(m, &dir)?;
    print!("{text}");
    Ok(())
}
