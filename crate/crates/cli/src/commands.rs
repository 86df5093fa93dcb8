//! The five pipeline subcommands. Each returns `Ok(())` on success; the
//! binary maps errors to exit code 1.

use std::path::PathBuf;

use clap::Args;
use log::{info, warn};

use idlive_core::{
    build_pairs, calibrate_threshold, confusion_counts, default_threshold, emit_report,
    load_dataset, load_image, materialize_pairs, model_digest, seeding, synth_dataset,
    threshold_sweep, verify, DatasetSplit, Gallery, ImageRecord, MetricsReport, ReportFormat,
    SiameseModel, SynthConfig,
};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset root to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of synthetic clients.
    #[arg(long)]
    pub clients: usize,
    /// Real images per client (split 60/20/20 over train/dev/test).
    #[arg(long)]
    pub reals: usize,
    /// Fake images per client.
    #[arg(long)]
    pub fakes: usize,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let summary = synth_dataset(
        &args.out,
        &SynthConfig {
            clients: args.clients,
            reals_per_client: args.reals,
            fakes_per_client: args.fakes,
            image_size: args.size,
            seed: seeding::derive(args.seed, seeding::SYNTH),
        },
    )?;
    println!(
        "wrote {} images to {} (train/dev/test = {}/{}/{})",
        summary.images_written,
        args.out.display(),
        summary.per_split[0],
        summary.per_split[1],
        summary.per_split[2]
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root (layout: <root>/<split>/<client>/{real,fake}/*.pgm).
    #[arg(long)]
    pub data: PathBuf,
    /// Optional `key = value` config file; defaults apply otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let arch = config.architecture()?;
    let train_config = config.train_config();

    let dataset = load_dataset(&args.data)?;
    let samples = build_pairs(
        &dataset.train,
        seeding::derive(train_config.seed, seeding::PAIRS),
    )?;
    let pairs = materialize_pairs(&samples, config.image_size, config.image_size)?;
    info!(
        "training on {} pairs from {} clients",
        pairs.len(),
        dataset.train.clients.len()
    );

    let mut model = SiameseModel::new(arch, seeding::derive(train_config.seed, seeding::INIT))?;
    let epochs = train_config.epochs;
    let history = model.fit_with(&pairs, &train_config, |epoch, loss| {
        println!("epoch {}/{} loss={loss:.6}", epoch + 1, epochs);
    })?;

    let meta = CheckpointMeta {
        margin: train_config.margin,
        calibrated_tau: None,
        seed: train_config.seed,
        epochs: epochs as u32,
    };
    save_checkpoint(&model, &meta, &args.out)?;
    match (history.first(), history.last()) {
        (Some(first), Some(last)) => println!(
            "trained {} epochs (loss {first:.6} -> {last:.6}); checkpoint: {}",
            history.len(),
            args.out.display()
        ),
        _ => println!("trained 0 epochs; checkpoint: {}", args.out.display()),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Trained checkpoint; the calibrated threshold is written back into it.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Gallery file to write.
    #[arg(long)]
    pub gallery: PathBuf,
}

/// Enrolls every train-split client's lexicographically first real image.
fn build_gallery(
    model: &SiameseModel,
    train: &DatasetSplit,
    image_size: (usize, usize),
) -> Result<Gallery, CliError> {
    let mut gallery = Gallery::new(model);
    for client in &train.clients {
        // File lists are sorted at load, so the first entry is the
        // lexicographically first real training image.
        match client.real_images.first() {
            Some(path) => {
                let record = load_image(
                    path,
                    &client.client_id,
                    idlive_core::Liveness::Real,
                    image_size.0,
                    image_size.1,
                )?;
                gallery.enroll(&client.client_id, &record, model)?;
            }
            None => warn!(
                "client {} has no real training image and cannot be enrolled",
                client.client_id
            ),
        }
    }
    Ok(gallery)
}

fn split_records(
    split: &DatasetSplit,
    image_size: (usize, usize),
) -> Result<Vec<ImageRecord>, CliError> {
    split
        .images()
        .into_iter()
        .map(|(path, client_id, label)| {
            Ok(load_image(&path, &client_id, label, image_size.0, image_size.1)?)
        })
        .collect()
}

fn model_image_size(model: &SiameseModel) -> (usize, usize) {
    let [_, h, w] = model.arch().input_shape();
    (h, w)
}

pub fn calibrate(args: &CalibrateArgs) -> Result<(), CliError> {
    let (model, mut meta) = load_checkpoint(&args.ckpt)?;
    let size = model_image_size(&model);
    let dataset = load_dataset(&args.data)?;

    let gallery = build_gallery(&model, &dataset.train, size)?;
    info!("enrolled {} clients", gallery.len());

    let dev = split_records(&dataset.dev, size)?;
    let (tau, report) = calibrate_threshold(&model, &gallery, &dev)?;

    gallery.save(&args.gallery)?;
    meta.calibrated_tau = Some(tau);
    save_checkpoint(&model, &meta, &args.ckpt)?;
    println!(
        "calibrated tau={tau:.6} on {} dev samples (dev FRR={:.4} FAR={:.4} HTER={:.4}); gallery: {}",
        dev.len(),
        report.frr,
        report.far,
        report.hter,
        args.gallery.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    /// Report file; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    pub report: PathBuf,
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let (model, meta) = load_checkpoint(&args.ckpt)?;
    let gallery = Gallery::load(&args.gallery)?;
    if gallery.model_digest() != model_digest(&model) {
        return Err(CliError::GalleryModelMismatch);
    }
    let tau = meta
        .calibrated_tau
        .unwrap_or_else(|| default_threshold(meta.margin));
    if meta.calibrated_tau.is_none() {
        warn!("checkpoint has no calibrated threshold; using margin/2 = {tau}");
    }

    let size = model_image_size(&model);
    let dataset = load_dataset(&args.data)?;
    let records = split_records(&dataset.test, size)?;

    let mut decisions = Vec::with_capacity(records.len());
    let mut distances = Vec::with_capacity(records.len());
    let mut truths = Vec::with_capacity(records.len());
    for record in &records {
        let decision = verify(&model, &gallery, &record.client_id, &record.pixels, tau)?;
        distances.push(decision.distance);
        truths.push(record.label);
        decisions.push(decision);
    }

    let counts = confusion_counts(&decisions, &truths)?;
    let report = MetricsReport::from_counts(tau, counts)?;
    let sweep = threshold_sweep(&distances, &truths)?;
    let format = match args.report.extension().and_then(|e| e.to_str()) {
        Some("json") => ReportFormat::Json,
        _ => ReportFormat::Csv,
    };
    std::fs::write(&args.report, emit_report(&report, &sweep, format))
        .map_err(|e| CliError::File { path: args.report.clone(), source: e })?;
    println!(
        "eval on {} test images: tau={tau:.6} FRR={:.4} FAR={:.4} HTER={:.4}; report: {}",
        records.len(),
        report.frr,
        report.far,
        report.hter,
        args.report.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    /// Claimed client identity (produced by the face recognizer, which is
    /// outside this pipeline).
    #[arg(long)]
    pub client: String,
    /// Probe image file (binary PGM or PPM).
    #[arg(long)]
    pub image: PathBuf,
}

pub fn verify_cmd(args: &VerifyArgs) -> Result<(), CliError> {
    let (model, meta) = load_checkpoint(&args.ckpt)?;
    let gallery = Gallery::load(&args.gallery)?;
    if gallery.model_digest() != model_digest(&model) {
        return Err(CliError::GalleryModelMismatch);
    }
    let tau = meta
        .calibrated_tau
        .unwrap_or_else(|| default_threshold(meta.margin));
    let size = model_image_size(&model);
    let bytes = std::fs::read(&args.image)
        .map_err(|e| CliError::File { path: args.image.clone(), source: e })?;
    let pixels = idlive_core::preprocess(&idlive_core::decode_image(&bytes)?, size.0, size.1);
    let decision = verify(&model, &gallery, &args.client, &pixels, tau)?;
    println!(
        "client={} distance={:.6} threshold={:.6} verdict={}",
        decision.client_id, decision.distance, decision.threshold, decision.verdict
    );
    Ok(())
}
