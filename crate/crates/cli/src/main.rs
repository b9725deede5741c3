use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use lidarsr::baselines::Interpolation;
use lidarsr::config;
use lidarsr::data::{samples, simulate_frames, Sample, SplitFractions};
use lidarsr::evaluate::{evaluate, Candidate};
use lidarsr::formats::{ingest_bin, load_ldi, ply::save_ply, save_ldi};
use lidarsr::geometry::{back_project, decimate, DistanceImage, Parity, SensorGeometry};
use lidarsr::metrics::parse_ratings;
use lidarsr::nets::{Extractor, Upsampler};
use lidarsr::sim::{default_geometry, simulate_scene, SceneSpec};
use lidarsr::survey::{survey_aggregate, survey_prepare, SurveyManifest, SurveyMethod, GROUND_TRUTH};
use lidarsr::train::{pixel_accuracy, train_extractor, train_upsampler, ExtractorTrainConfig, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "lidarsr", version, about = "LiDAR distance-image super-resolution toolkit")]
struct Cli {
    /// Seed for simulation, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sensor geometry file (elevations in radians, column count, max range).
    #[arg(long, global = true)]
    geometry: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Configuration file, `key = value` lines or JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ray-cast synthetic street scenes into labelled distance images.
    Simulate {
        /// Number of scenes, seeded consecutively from --seed.
        #[arg(long, default_value_t = 1)]
        frames: u64,
    },
    /// Project a raw scan (16-byte x, y, z, reflectance records) onto the grid.
    Project { input: PathBuf },
    /// Keep every other layer of a distance image.
    Decimate {
        input: PathBuf,
        #[arg(long, default_value = "even")]
        parity: Parity,
    },
    /// Train the up-sampling network.
    TrainUpsampler {
        #[command(flatten)]
        data: DataArgs,
        /// Pre-trained extractor, required by the feature and semantic losses.
        #[arg(long)]
        extractor: Option<PathBuf>,
        /// Weights to start from.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Train the semantic feature extractor.
    TrainExtractor {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Double the layer count of a distance image.
    Upsample {
        input: PathBuf,
        /// nearest, bilinear, bicubic or a weights file.
        #[arg(long, default_value = "bilinear")]
        method: String,
        /// Also write the result as a point cloud.
        #[arg(long)]
        ply: bool,
    },
    /// Score a method on a test set.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// gt, nearest, bilinear, bicubic or a weights file.
        #[arg(long)]
        method: String,
        /// Extractor weights for the semantic score.
        #[arg(long)]
        extractor: Option<PathBuf>,
    },
    /// Render blinded survey instances and write the manifest.
    SurveyPrepare {
        #[command(flatten)]
        data: DataArgs,
        /// `name=spec` or `spec`, where spec is gt, an interpolation or a weights file.
        #[arg(long = "method", required = true)]
        methods: Vec<String>,
        #[arg(long, default_value_t = 1)]
        subjects: usize,
    },
    /// De-blind ratings and compute mean opinion scores.
    SurveyAggregate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(required = true)]
        ratings: Vec<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
struct DataArgs {
    /// Directory of `.ldi` frames; simulated scenes are used when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of simulated scenes.
    #[arg(long, default_value_t = 20)]
    frames: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryFile {
    elevations: Vec<f64>,
    columns: usize,
    max_range: f64,
}

struct Session {
    seed: Option<u64>,
    geometry: Arc<SensorGeometry>,
    out: PathBuf,
    config: Option<String>,
}

impl Session {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn out(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(self.out.join(name))
    }

    fn config<T: serde::de::DeserializeOwned + Default>(&self) -> Result<T> {
        Ok(match &self.config {
            Some(text) => config::from_text(text)?,
            None => T::default(),
        })
    }

    /// Frames from `--data` in file-name order, or simulated from `--seed`.
    fn frames(&self, data: &DataArgs) -> Result<Vec<DistanceImage>> {
        match &data.data {
            Some(dir) => {
                let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                    .with_context(|| format!("reading {}", dir.display()))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "ldi"))
                    .collect();
                paths.sort();
                paths
                    .iter()
                    .map(|p| load_ldi(p, Some(&self.geometry)).map_err(Into::into))
                    .collect()
            }
            None => {
                let first = self.seed();
                Ok(simulate_frames(first..first + data.frames, &self.geometry)?)
            }
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or("frame".into(), |s| s.to_string_lossy().into_owned())
}

fn split<T: Clone>(items: &[T], fractions: SplitFractions) -> Result<[Vec<T>; 3]> {
    let [a, b, c] = fractions.seed_ranges(0, items.len() as u64)?;
    let part = |r: std::ops::Range<u64>| items[r.start as usize..r.end as usize].to_vec();
    Ok([part(a), part(b), part(c)])
}

enum Method {
    GroundTruth,
    Interpolation(Interpolation),
    Network(Box<Upsampler>),
}

impl Method {
    fn parse(spec: &str) -> Result<Self> {
        if spec == GROUND_TRUTH {
            return Ok(Method::GroundTruth);
        }
        if let Ok(m) = spec.parse::<Interpolation>() {
            return Ok(Method::Interpolation(m));
        }
        let path = Path::new(spec);
        if path.exists() {
            return Ok(Method::Network(Box::new(Upsampler::load(path)?)));
        }
        bail!(lidarsr::Error::BadConfig(format!(
            "method `{spec}` is neither gt, an interpolation nor a weights file"
        )))
    }

    fn candidate(&self) -> Candidate<'_> {
        match self {
            Method::GroundTruth => Candidate::GroundTruth,
            Method::Interpolation(m) => Candidate::Interpolation(*m),
            Method::Network(n) => Candidate::Network(n.as_ref()),
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let geometry = match &cli.geometry {
        Some(path) => {
            let g: GeometryFile = config::from_text(&fs::read_to_string(path)?)?;
            SensorGeometry::new(g.elevations, g.columns, g.max_range)?
        }
        None => default_geometry(),
    };
    let config = match &cli.config {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let ctx = Session {
        seed: cli.seed,
        geometry: Arc::new(geometry),
        out: cli.out,
        config,
    };

    match cli.command {
        Command::Simulate { frames } => {
            let specs: Vec<SceneSpec> = match &ctx.config {
                Some(text) => vec![config::from_text(text)?],
                None => (ctx.seed()..ctx.seed() + frames).map(SceneSpec::random_street).collect(),
            };
            for spec in &specs {
                let image = simulate_scene(spec, &ctx.geometry)?;
                let path = ctx.out(&format!("scene_{:05}.ldi", spec.seed))?;
                save_ldi(&path, &image, true)?;
                println!("{}", path.display());
            }
        }
        Command::Project { input } => {
            let image = ingest_bin(&input, &ctx.geometry)?;
            let path = ctx.out(&format!("{}.ldi", stem(&input)))?;
            save_ldi(&path, &image, true)?;
            println!("{}", path.display());
        }
        Command::Decimate { input, parity } => {
            let image = load_ldi(&input, Some(&ctx.geometry))?;
            let path = ctx.out(&format!("{}_low.ldi", stem(&input)))?;
            save_ldi(&path, &decimate(&image, parity)?, true)?;
            println!("{}", path.display());
        }
        Command::TrainUpsampler { data, extractor, init } => {
            let mut cfg: TrainConfig = ctx.config()?;
            if let Some(s) = ctx.seed {
                cfg.seed = s;
            }
            let all = samples(&ctx.frames(&data)?)?;
            let [train, val, _] = split(&all, cfg.splits)?;
            let extractor = extractor.map(|p| Extractor::load(&p)).transpose()?;
            let init = init.map(|p| Upsampler::load(&p)).transpose()?;
            let (net, log) = train_upsampler(&cfg, &train, &val, extractor.as_ref(), init.as_ref())?;
            let weights = ctx.out("upsampler.lwt")?;
            net.save(&weights)?;
            fs::write(ctx.out("train_log.jsonl")?, log.to_json_lines()?)?;
            println!(
                "{}",
                serde_json::json!({"weights": weights, "best_step": log.best_step, "best_score": log.best_score})
            );
        }
        Command::TrainExtractor { data } => {
            let mut cfg: ExtractorTrainConfig = ctx.config()?;
            if let Some(s) = ctx.seed {
                cfg.seed = s;
            }
            let frames = ctx.frames(&data)?;
            let (net, log) = train_extractor(&cfg, &frames)?;
            let weights = ctx.out("extractor.lwt")?;
            net.save(&weights)?;
            let lines: Vec<String> = log.iter().map(serde_json::to_string).collect::<Result<_, _>>()?;
            fs::write(ctx.out("extractor_log.jsonl")?, lines.join("\n") + "\n")?;
            let accuracy = pixel_accuracy(&net, &frames)?;
            println!("{}", serde_json::json!({"weights": weights, "train_pixel_accuracy": accuracy}));
        }
        Command::Upsample { input, method, ply } => {
            let method = Method::parse(&method)?;
            let low = load_ldi(&input, None)?;
            let high = match method {
                Method::GroundTruth => bail!(lidarsr::Error::BadConfig("gt cannot up-sample a scan".into())),
                Method::Interpolation(m) => lidarsr::baselines::interpolate(&low, m, None)?,
                Method::Network(net) => net.upsample(&low, None)?,
            };
            let path = ctx.out(&format!("{}_up.ldi", stem(&input)))?;
            save_ldi(&path, &high, true)?;
            println!("{}", path.display());
            if ply {
                let cloud_path = path.with_extension("ply");
                save_ply(&cloud_path, &back_project(&high))?;
                println!("{}", cloud_path.display());
            }
        }
        Command::Evaluate { data, method, extractor } => {
            let test = samples(&ctx.frames(&data)?)?;
            let method = Method::parse(&method)?;
            let extractor = extractor.map(|p| Extractor::load(&p)).transpose()?;
            let report = evaluate(&test, method.candidate(), extractor.as_ref())?;
            let json = serde_json::to_string_pretty(&report)?;
            fs::write(ctx.out("metrics.json")?, &json)?;
            println!("{json}");
        }
        Command::SurveyPrepare { data, methods, subjects } => {
            let scenes: Vec<(String, Sample)> = samples(&ctx.frames(&data)?)?
                .into_iter()
                .enumerate()
                .map(|(i, s)| (format!("scene{i:02}"), s))
                .collect();
            let parsed = methods
                .iter()
                .map(|m| {
                    let (name, spec) = m.split_once('=').unwrap_or((m, m));
                    let name = if Path::new(name).exists() { stem(Path::new(name)) } else { name.to_string() };
                    Ok((name, Method::parse(spec)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let survey_methods: Vec<SurveyMethod<'_>> = parsed
                .iter()
                .map(|(name, m)| SurveyMethod {
                    name: name.as_str(),
                    candidate: m.candidate(),
                })
                .collect();
            let subject_ids: Vec<String> = (1..=subjects).map(|i| format!("subject{i:02}")).collect();
            fs::create_dir_all(&ctx.out)?;
            let manifest = survey_prepare(&scenes, &survey_methods, ctx.seed(), &subject_ids, &ctx.out)?;
            println!(
                "{}",
                serde_json::json!({"instances": manifest.instances.len(), "subjects": manifest.subjects.len()})
            );
        }
        Command::SurveyAggregate { manifest, ratings } => {
            let manifest = SurveyManifest::load(&manifest)?;
            let mut records = Vec::new();
            for path in &ratings {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                records.extend(parse_ratings(&text)?);
            }
            let report = survey_aggregate(&records, &manifest)?;
            let json = serde_json::to_string_pretty(&report)?;
            fs::write(ctx.out("mos.json")?, &json)?;
            println!("{json}");
        }
    }
    Ok(())
}

fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<lidarsr::Error>())
        .map_or_else(
            || {
                if err.chain().any(|e| e.is::<std::io::Error>()) {
                    "Io"
                } else {
                    "Other"
                }
            },
            |e| e.kind(),
        );
    serde_json::json!({"error": kind, "message": format!("{err:#}")}).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            eprintln!("{}", serde_json::json!({"error": "Usage", "message": message.trim_end()}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_line(&err));
            ExitCode::FAILURE
        }
    }
}
