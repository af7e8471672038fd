//! Command-line front-end for the open-set re-identification pipeline.

use clap::{Args, Parser, Subcommand};
use operid::data::{self, Dataset, FeatureTable};
use operid::error::Error;
use operid::eval;
use operid::features::{extract_descriptor, resize, FeatureConfig, PixelImage};
use operid::metrics::MetricKind;
use operid::pipeline::{self, RunConfig};
use operid::synth::{self, SynthConfig};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "operid", about = "Open-set person re-identification benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract descriptors from the images listed in a manifest.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Train and evaluate a metric over the seeded multi-trial protocol.
    Run {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_parser = parse_metric)]
        metric: MetricKind,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[arg(long = "pca-dim", default_value_t = 100)]
        pca_dim: usize,
        #[arg(long = "trials", default_value_t = 10)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Print the operating-point table for an existing results directory.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.10, 1.0])]
        far: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10])]
        ranks: Vec<usize>,
    },
    /// Generate synthetic data (feature vectors or rendered images).
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },
    /// Select the RRDA ridge parameter on the training session only.
    Tune {
        #[arg(long)]
        features: PathBuf,
        #[arg(long = "trials", default_value_t = 10)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long = "pca-dim", default_value_t = 100)]
        pca_dim: usize,
    },
    /// Dump the trial partitions of a results directory for audit.
    Audit {
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Latent-space feature vectors, written as manifest + feature cache.
    Features {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: SynthArgs,
    },
    /// Rendered 48x128 pedestrian figures, written as manifest + PNGs.
    Images {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: SynthArgs,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 60)]
    identities: usize,
    #[arg(long, default_value_t = 4)]
    cameras: usize,
    #[arg(long = "images-per-cell", default_value_t = 3)]
    images_per_cell: usize,
    #[arg(long = "latent-dim", default_value_t = 30)]
    latent_dim: usize,
    #[arg(long, default_value_t = 0.25)]
    distortion: f64,
    #[arg(long, default_value_t = 4.0)]
    offset: f64,
    #[arg(long = "noise-sigma", default_value_t = 0.15)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.9)]
    presence: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SynthArgs {
    fn to_config(&self) -> SynthConfig {
        SynthConfig {
            n_identities: self.identities,
            n_cameras: self.cameras,
            images_per_identity_per_camera: self.images_per_cell,
            latent_dim: self.latent_dim,
            distortion_strength: self.distortion,
            offset_magnitude: self.offset,
            noise_sigma: self.noise_sigma,
            presence_probability: self.presence,
            seed: self.seed,
        }
    }
}

fn parse_metric(s: &str) -> Result<MetricKind, String> {
    MetricKind::parse(s).ok_or_else(|| format!("unknown metric '{s}'"))
}

fn decode_image(path: &Path) -> Result<PixelImage, Error> {
    let img = image::open(path)
        .map_err(|e| Error::InvalidInput(format!("decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img
        .pixels()
        .map(|p| {
            [
                p.0[0] as f64 / 255.0,
                p.0[1] as f64 / 255.0,
                p.0[2] as f64 / 255.0,
            ]
        })
        .collect();
    PixelImage::new(w, h, pixels)
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}

fn cmd_extract(manifest: &Path, out: &Path, workers: usize) -> Result<(), Error> {
    let dataset = data::load_manifest(manifest)?;
    if dataset.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let config = FeatureConfig::default();
    let base = manifest.parent().unwrap_or(Path::new("."));
    let descriptors: Vec<Result<Vec<f64>, Error>> = with_pool(workers, || {
        dataset
            .records
            .par_iter()
            .map(|r| {
                let path = if r.path.is_absolute() {
                    r.path.clone()
                } else {
                    base.join(&r.path)
                };
                let img = decode_image(&path).map_err(|e| {
                    Error::InvalidInput(format!("record {:?}: {e}", r.key()))
                })?;
                let resized = resize(&img, config.target_width, config.target_height)?;
                extract_descriptor(&resized, &config)
            })
            .collect()
    });
    let mut table = FeatureTable::new(config.descriptor_len());
    for d in descriptors {
        let row: Vec<f32> = d?.iter().map(|&v| v as f32).collect();
        table.push(&row)?;
    }
    let with_features = Dataset::with_features(dataset.records, table)?;
    data::write_feature_cache(&with_features, out)?;
    println!(
        "extracted {} descriptors of dimension {} -> {}",
        with_features.records.len(),
        config.descriptor_len(),
        out.display()
    );
    Ok(())
}

fn cmd_run(
    features: &Path,
    config: &RunConfig,
    out: &Path,
    workers: usize,
) -> Result<(), Error> {
    match run_inner(features, config, out, workers) {
        Ok(()) => Ok(()),
        Err(e) => {
            // leave a marker next to whatever partial results were flushed
            if std::fs::create_dir_all(out).is_ok() {
                let _ = std::fs::write(out.join("FAILED"), format!("{e}\n"));
            }
            Err(e)
        }
    }
}

fn run_inner(
    features: &Path,
    config: &RunConfig,
    out: &Path,
    workers: usize,
) -> Result<(), Error> {
    let dataset = data::read_feature_cache(features)?;
    let output = with_pool(workers, || pipeline::run(&dataset, config))?;
    pipeline::write_results(out, config, &output)?;
    let models_dir = out.join("models");
    std::fs::create_dir_all(&models_dir)?;
    for trained in &output.trials {
        pipeline::save_model(
            &models_dir.join(format!("trial{}.bin", trained.partition.trial_index)),
            trained,
        )?;
    }
    print!("{}", pipeline::render_report(&output.summary));
    println!("results written to {}", out.display());
    Ok(())
}

fn cmd_report(results: &Path, far: &[f64], ranks: &[usize]) -> Result<(), Error> {
    let outcomes = pipeline::read_outcomes(results)?;
    let grid: Vec<(f64, usize)> = far
        .iter()
        .flat_map(|&f| ranks.iter().map(move |&k| (f, k)))
        .collect();
    let stats = eval::aggregate(&outcomes, &grid)?;
    let rendered = pipeline::render_report(&stats);
    print!("{rendered}");
    std::fs::write(results.join("report.csv"), rendered)?;
    Ok(())
}

fn cmd_synth_features(out: &Path, config: &SynthConfig) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    let dataset = synth::generate_features(config)?;
    data::save_manifest(&dataset, &out.join("manifest.csv"))?;
    data::write_feature_cache(&dataset, &out.join("features.bin"))?;
    println!(
        "wrote {} synthetic feature vectors to {}",
        dataset.records.len(),
        out.display()
    );
    Ok(())
}

fn cmd_synth_images(out: &Path, config: &SynthConfig) -> Result<(), Error> {
    let images_dir = out.join("img");
    std::fs::create_dir_all(&images_dir)?;
    let rendered = synth::generate_images(config)?;
    let mut records = Vec::with_capacity(rendered.len());
    for (mut record, image) in rendered {
        let name = format!(
            "{:04}-{:02}-{}-{:05}.png",
            record.person_id,
            record.camera_id,
            record.session.as_str(),
            record.frame
        );
        let mut buf = image::RgbImage::new(image.width as u32, image.height as u32);
        for y in 0..image.height {
            for x in 0..image.width {
                let p = image.pixel(x, y);
                buf.put_pixel(
                    x as u32,
                    y as u32,
                    image::Rgb([
                        (p[0] * 255.0).round() as u8,
                        (p[1] * 255.0).round() as u8,
                        (p[2] * 255.0).round() as u8,
                    ]),
                );
            }
        }
        buf.save(images_dir.join(&name))
            .map_err(|e| Error::InvalidInput(format!("write {name}: {e}")))?;
        record.path = PathBuf::from("img").join(&name);
        records.push(record);
    }
    let count = records.len();
    let dataset = Dataset::new(records)?;
    data::save_manifest(&dataset, &out.join("manifest.csv"))?;
    println!("wrote {} synthetic images to {}", count, out.display());
    Ok(())
}

fn cmd_tune(features: &Path, trials: usize, seed: u64, pca_dim: usize) -> Result<(), Error> {
    let dataset = data::read_feature_cache(features)?;
    let config = RunConfig {
        metric: MetricKind::Rrda,
        n_trials: trials,
        master_seed: seed,
        pca_dim,
        ..RunConfig::default()
    };
    let (best, scored) = pipeline::tune_lambda(&dataset, &config)?;
    println!("lambda,val_dir_far10_rank1");
    for (lambda, score) in &scored {
        println!("{lambda},{score}");
    }
    println!("best lambda: {best}");
    Ok(())
}

fn cmd_audit(results: &Path) -> Result<(), Error> {
    let partitions = pipeline::read_partitions(results)?;
    let json = serde_json::to_string_pretty(&partitions)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Extract {
            manifest,
            out,
            workers,
        } => cmd_extract(&manifest, &out, workers),
        Command::Run {
            features,
            metric,
            lambda,
            epsilon,
            pca_dim,
            trials,
            seed,
            out,
            workers,
        } => {
            let config = RunConfig {
                metric,
                lambda,
                epsilon,
                pca_dim,
                n_trials: trials,
                master_seed: seed,
                ..RunConfig::default()
            };
            cmd_run(&features, &config, &out, workers)
        }
        Command::Report {
            results,
            far,
            ranks,
        } => cmd_report(&results, &far, &ranks),
        Command::Synth { what } => match what {
            SynthCommand::Features { out, config } => {
                cmd_synth_features(&out, &config.to_config())
            }
            SynthCommand::Images { out, config } => cmd_synth_images(&out, &config.to_config()),
        },
        Command::Tune {
            features,
            trials,
            seed,
            pca_dim,
        } => cmd_tune(&features, trials, seed, pca_dim),
        Command::Audit { results } => cmd_audit(&results),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{{\"error\": {}}}", serde_json::json!(e.to_string()));
            ExitCode::FAILURE
        }
    }
}
