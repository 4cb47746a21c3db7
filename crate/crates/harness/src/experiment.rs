//! End-to-end experiments: measurement simulation, sampling, scoring and
//! report emission.
//!
//! Output layout under the configured directory:
//! `config.toml` (effective configuration), `measurements/<stem>.txt` and
//! `<stem>.pgm|ppm` (observed values and their visualization),
//! `reconstructions/<stem>_c<chain>.pgm|ppm`, `metrics.csv` and `summary.txt`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dlps_core::corruption::{CorruptionProcess, NoiseSchedule};
use dlps_core::operators::{
    parse_mask, parse_motion_kernel, random_mask, ForwardOperator, ImageGrid, Measurement, OperatorKind,
};
use dlps_core::potential::Problem;
use dlps_core::prior::{Denoiser, EmpiricalBayesDenoiser, ExternalLogitsDenoiser};
use dlps_core::rng::{derive_seed, StreamKey};
use dlps_core::sampler::run;
use dlps_core::tokenspace::{decode, TokenSequence, VocabSpec};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, OperatorChoice, PriorChoice, ProcessChoice};
use crate::dataset::{load_dataset, make_synthetic_dataset, Dataset};
use crate::error::{io_err, HarnessError, Result};
use crate::metrics::{iou_f1, mean_std, psnr, ssim, token_accuracy};
use crate::pnm::Image;

/// Column order of `metrics.csv`.
pub const CSV_HEADER: &str = "image,chain,seed,psnr,accuracy,ssim,iou,f1,status";

/// Metric names in report order.
pub const METRICS: [&str; 5] = ["psnr", "accuracy", "ssim", "iou", "f1"];

const TAG_OPERATOR: u64 = 1;
const TAG_MEASUREMENT: u64 = 2;
const TAG_CHAIN: u64 = 3;

const MEASUREMENTS: &str = "measurements";
const RECONSTRUCTIONS: &str = "reconstructions";

/// Scores of one `(image, chain)` pair. Metrics are absent when the chain
/// failed; SSIM is absent on images smaller than its window.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    /// Item file name.
    pub image: String,
    /// Chain index.
    pub chain: usize,
    /// Seed of the chain's random stream.
    pub seed: u64,
    /// Peak signal-to-noise ratio in dB.
    pub psnr: Option<f64>,
    /// Token accuracy in percent.
    pub accuracy: Option<f64>,
    /// Structural similarity.
    pub ssim: Option<f64>,
    /// Intersection over union of the foreground class.
    pub iou: Option<f64>,
    /// F1 score of the foreground class.
    pub f1: Option<f64>,
    /// `ok` or the error message.
    pub status: String,
}

impl ChainResult {
    /// Metric value by name, as listed in [`METRICS`].
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "psnr" => self.psnr,
            "accuracy" => self.accuracy,
            "ssim" => self.ssim,
            "iou" => self.iou,
            "f1" => self.f1,
            _ => None,
        }
    }

    fn csv_row(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.image,
            self.chain,
            self.seed,
            cell(self.psnr),
            cell(self.accuracy),
            cell(self.ssim),
            cell(self.iou),
            cell(self.f1),
            self.status.replace([',', '\n'], ";")
        )
    }
}

/// Mean and standard deviation of one metric over a set of rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    /// Sample mean.
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    /// Number of values.
    pub count: usize,
}

impl Aggregate {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std, count: values.len() }
    }
}

/// Rows plus pooled and per-seed aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// One row per `(image, chain)`.
    pub rows: Vec<ChainResult>,
    /// Over every successful `(image, chain)` row, per metric.
    pub pooled: Vec<(String, Aggregate)>,
    /// Per chain index (each chain is one seed), across images.
    pub per_seed: Vec<Vec<(String, Aggregate)>>,
    /// Across the per-seed means.
    pub across_seeds: Vec<(String, Aggregate)>,
    /// Sampling wall time in seconds.
    pub wall_seconds: f64,
}

impl MetricsReport {
    /// Aggregates `rows` over `chains` seeds.
    pub fn from_rows(rows: Vec<ChainResult>, chains: usize, wall_seconds: f64) -> Self {
        let collect = |filter: &dyn Fn(&ChainResult) -> bool| -> Vec<(String, Aggregate)> {
            METRICS
                .iter()
                .map(|&m| {
                    let values: Vec<f64> = rows.iter().filter(|r| filter(r)).filter_map(|r| r.metric(m)).collect();
                    (m.to_string(), Aggregate::of(&values))
                })
                .collect()
        };
        let pooled = collect(&|_| true);
        let per_seed: Vec<_> = (0..chains).map(|c| collect(&|r: &ChainResult| r.chain == c)).collect();
        let across_seeds = METRICS
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let means: Vec<f64> =
                    per_seed.iter().map(|s| s[i].1).filter(|a| a.count > 0).map(|a| a.mean).collect();
                (m.to_string(), Aggregate::of(&means))
            })
            .collect();
        Self { rows, pooled, per_seed, across_seeds, wall_seconds }
    }

    /// `metrics.csv` contents; deterministic for a fixed configuration.
    pub fn csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv_row());
            out.push('\n');
        }
        out
    }

    /// `summary.txt` contents, including wall time.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let failed = self.rows.iter().filter(|r| r.status != "ok").count();
        writeln!(out, "rows {} failed {}", self.rows.len(), failed).unwrap();
        let line = |out: &mut String, label: &str, aggs: &[(String, Aggregate)]| {
            for (m, a) in aggs {
                writeln!(out, "{label} {m} mean {} std {} n {}", a.mean, a.std, a.count).unwrap();
            }
        };
        line(&mut out, "pooled", &self.pooled);
        for (c, aggs) in self.per_seed.iter().enumerate() {
            line(&mut out, &format!("seed{c}"), aggs);
        }
        line(&mut out, "across-seeds", &self.across_seeds);
        writeln!(out, "wall_seconds {:.3}", self.wall_seconds).unwrap();
        out
    }

    /// Pooled aggregate of one metric.
    pub fn pooled(&self, metric: &str) -> Option<Aggregate> {
        self.pooled.iter().find(|(m, _)| m == metric).map(|(_, a)| *a)
    }
}

/// Evaluation images and the prior's training items.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    /// Images to reconstruct.
    pub eval: Dataset,
    /// Support of the empirical-Bayes prior.
    pub prior_items: Vec<TokenSequence>,
}

/// Loads or generates the evaluation dataset and the prior's support.
pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let full = match (&cfg.data.path, &cfg.data.synthetic) {
        (Some(path), _) => load_dataset(path)?,
        (None, Some(spec)) => make_synthetic_dataset(&spec.spec())?,
        (None, None) => return Err(HarnessError::Config("no data source".into())),
    };
    let prior_items = match &cfg.prior.dataset {
        Some(path) => {
            let other = load_dataset(path)?;
            if other.grid != full.grid || other.vocab.size() != full.vocab.size() {
                return Err(HarnessError::Config("prior dataset differs in grid or vocabulary".into()));
            }
            other.items
        }
        None => full.items.clone(),
    };
    let mut eval = full;
    if let Some(limit) = cfg.data.limit {
        eval.items.truncate(limit);
        eval.names.truncate(limit);
    }
    Ok(ExperimentData { eval, prior_items })
}

/// Corruption process over the dataset vocabulary.
pub fn build_process(cfg: &ExperimentConfig, vocab: &VocabSpec) -> Result<CorruptionProcess> {
    let schedule = NoiseSchedule::new(cfg.process.schedule.into(), cfg.process.floor)?;
    Ok(match cfg.process.kind {
        ProcessChoice::Uniform => CorruptionProcess::uniform(vocab.clone().without_mask(), schedule)?,
        ProcessChoice::Masked => CorruptionProcess::masked(vocab.clone().with_mask(), schedule)?,
    })
}

/// Denoiser selected by the configuration.
pub fn build_denoiser(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    process: &CorruptionProcess,
) -> Result<Box<dyn Denoiser>> {
    Ok(match cfg.prior.kind {
        PriorChoice::EmpiricalBayes => Box::new(EmpiricalBayesDenoiser::new(
            data.prior_items.clone(),
            process.clone(),
            cfg.prior.smoothing,
        )?),
        PriorChoice::External => {
            let path = cfg.prior.logits.as_ref().ok_or_else(|| HarnessError::Config("missing prior.logits".into()))?;
            Box::new(ExternalLogitsDenoiser::load(path).map_err(|e| match e {
                dlps_core::Error::Io(source) => HarnessError::Io { path: path.clone(), source },
                other => other.into(),
            })?)
        }
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Operator for image `index`; random parts derive from the root seed.
pub fn build_operator(cfg: &ExperimentConfig, grid: &ImageGrid, index: usize) -> Result<ForwardOperator> {
    let op = &cfg.operator;
    let key = StreamKey::new(cfg.seed).child(TAG_OPERATOR).child(index as u64);
    let kind = match op.kind {
        OperatorChoice::Identity => OperatorKind::Identity,
        OperatorChoice::Inpaint => {
            let mask = match &op.mask {
                Some(path) => parse_mask(&read_text(path)?, grid)?,
                None => random_mask(grid, op.hidden(), &key)?,
            };
            OperatorKind::Inpaint { mask }
        }
        OperatorChoice::Box => {
            let side = op.side();
            if side > grid.height || side > grid.width {
                return Err(HarnessError::Config(format!(
                    "box side {side} exceeds the {}×{} grid",
                    grid.height, grid.width
                )));
            }
            OperatorKind::Box { x: (grid.width - side) / 2, y: (grid.height - side) / 2, w: side, h: side }
        }
        OperatorChoice::Xor | OperatorChoice::And => {
            let count = op.pairs.unwrap_or(grid.len());
            let mut rng = key.rng();
            let pairs = (0..count)
                .map(|_| {
                    let i = rng.random_range(0..grid.len());
                    let mut j = rng.random_range(0..grid.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    (i, j)
                })
                .collect();
            if op.kind == OperatorChoice::Xor {
                OperatorKind::XorPairs(pairs)
            } else {
                OperatorKind::AndPairs(pairs)
            }
        }
        OperatorChoice::GaussianBlur => OperatorKind::GaussianBlur { size: op.blur_size, sigma: op.blur_sigma },
        OperatorChoice::MotionBlur => {
            let path = op.kernel.as_ref().ok_or_else(|| HarnessError::Config("missing operator.kernel".into()))?;
            OperatorKind::MotionBlur { kernel: parse_motion_kernel(&read_text(path)?)? }
        }
        OperatorChoice::Downsample => OperatorKind::Downsample { factor: op.factor },
        OperatorChoice::Hdr => OperatorKind::Hdr,
    };
    Ok(ForwardOperator::new(kind, *grid)?)
}

fn stem(name: &str) -> &str {
    Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name)
}

fn image_ext(grid: &ImageGrid) -> &'static str {
    if grid.channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

/// Plain-text measurement: `sigma <σ>`, `count <m>`, then one value per line.
pub fn format_measurement(m: &Measurement) -> String {
    let mut out = format!("sigma {}\ncount {}\n", m.sigma, m.values.len());
    for v in &m.values {
        writeln!(out, "{v}").unwrap();
    }
    out
}

/// Inverse of [`format_measurement`].
pub fn parse_measurement(text: &str, path: &Path) -> Result<Measurement> {
    let err = |message: String| HarnessError::Parse { path: path.to_path_buf(), message };
    let mut lines = text.lines();
    let mut header = |key: &str| -> Result<String> {
        lines
            .next()
            .and_then(|l| l.strip_prefix(key))
            .map(|v| v.trim().to_string())
            .ok_or_else(|| err(format!("missing {key:?} line")))
    };
    let sigma: f64 = header("sigma ")?.parse().map_err(|_| err("bad sigma".into()))?;
    let count: usize = header("count ")?.parse().map_err(|_| err("bad count".into()))?;
    let values: Vec<f64> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse().map_err(|_| err(format!("bad value {l:?}"))))
        .collect::<Result<_>>()?;
    if values.len() != count {
        return Err(err(format!("declared {count} values, found {}", values.len())));
    }
    Ok(Measurement::new(values, sigma)?)
}

/// Image view of a measurement where one exists: masked operators show
/// hidden pixels as mid-grey, downsampling gives the small image, pair
/// operators have none.
pub fn measurement_image(op: &ForwardOperator, m: &Measurement) -> Result<Option<Image>> {
    let grid = *op.grid();
    Ok(match op.kind() {
        OperatorKind::Inpaint { .. } | OperatorKind::Box { .. } => {
            let placed = op.adjoint(&m.values)?;
            let observed = op.adjoint(&vec![1.0; m.values.len()])?;
            let x: Vec<f64> = placed.iter().zip(&observed).map(|(&v, &o)| if o > 0.0 { v } else { 0.5 }).collect();
            Some(Image::from_intensities(&x, &grid)?)
        }
        OperatorKind::Downsample { factor } => {
            let small = ImageGrid::new(grid.height / factor, grid.width / factor, grid.channels)?;
            Some(Image::from_intensities(&m.values, &small)?)
        }
        OperatorKind::XorPairs(_) | OperatorKind::AndPairs(_) => None,
        _ => Some(Image::from_intensities(&m.values, &grid)?),
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn write_config_echo(cfg: &ExperimentConfig) -> Result<()> {
    create_dir(&cfg.output)?;
    write_file(&cfg.output.join("config.toml"), cfg.to_toml()?.as_bytes())
}

fn measurement_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output.join(MEASUREMENTS).join(format!("{}.txt", stem(name)))
}

fn reconstruction_path(cfg: &ExperimentConfig, grid: &ImageGrid, name: &str, chain: usize) -> PathBuf {
    cfg.output.join(RECONSTRUCTIONS).join(format!("{}_c{chain}.{}", stem(name), image_ext(grid)))
}

/// Simulates and writes one measurement per evaluation image.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Vec<Measurement>> {
    let data = load_data(cfg)?;
    write_config_echo(cfg)?;
    let dir = cfg.output.join(MEASUREMENTS);
    create_dir(&dir)?;
    let grid = data.eval.grid;
    let sigma = cfg.operator.sigma();
    let mut out = Vec::with_capacity(data.eval.len());
    for (i, (z, name)) in data.eval.items.iter().zip(&data.eval.names).enumerate() {
        let op = build_operator(cfg, &grid, i)?;
        let x = decode(z, &data.eval.vocab)?;
        let key = StreamKey::new(cfg.seed).child(TAG_MEASUREMENT).child(i as u64);
        let m = op.simulate_measurement(&x, sigma, &key)?;
        write_file(&measurement_path(cfg, name), format_measurement(&m).as_bytes())?;
        if let Some(img) = measurement_image(&op, &m)? {
            img.save(&dir.join(format!("{}.{}", stem(name), image_ext(&grid))))?;
        }
        out.push(m);
    }
    Ok(out)
}

/// Seed of chain `chain` on image `index`.
pub fn chain_seed(cfg: &ExperimentConfig, index: usize, chain: usize) -> u64 {
    let per_image = derive_seed(derive_seed(cfg.seed, TAG_CHAIN), index as u64);
    derive_seed(per_image, chain as u64)
}

fn score(
    truth: &TokenSequence,
    recon: &TokenSequence,
    vocab: &VocabSpec,
    grid: &ImageGrid,
) -> Result<(f64, f64, Option<f64>, f64, f64)> {
    let x = decode(truth, vocab)?;
    let x_hat = decode(recon, vocab)?;
    let p = psnr(&x, &x_hat, 1.0)?;
    let acc = token_accuracy(truth, recon)?;
    let s = if grid.height >= crate::metrics::SSIM_WINDOW && grid.width >= crate::metrics::SSIM_WINDOW {
        Some(ssim(&x, &x_hat, grid, 1.0)?)
    } else {
        None
    };
    let b: Vec<bool> = x.iter().map(|&v| v >= 0.5).collect();
    let b_hat: Vec<bool> = x_hat.iter().map(|&v| v >= 0.5).collect();
    let (iou, f1) = iou_f1(&b, &b_hat)?;
    Ok((p, acc, s, iou, f1))
}

fn scored_row(
    image: &str,
    chain: usize,
    seed: u64,
    outcome: Result<(f64, f64, Option<f64>, f64, f64)>,
) -> ChainResult {
    match outcome {
        Ok((p, acc, s, iou, f1)) => ChainResult {
            image: image.to_string(),
            chain,
            seed,
            psnr: Some(p),
            accuracy: Some(acc),
            ssim: s,
            iou: Some(iou),
            f1: Some(f1),
            status: "ok".into(),
        },
        Err(e) => ChainResult {
            image: image.to_string(),
            chain,
            seed,
            psnr: None,
            accuracy: None,
            ssim: None,
            iou: None,
            f1: None,
            status: format!("error: {e}"),
        },
    }
}

fn write_report(cfg: &ExperimentConfig, report: &MetricsReport) -> Result<()> {
    write_file(&cfg.output.join("metrics.csv"), report.csv().as_bytes())?;
    write_file(&cfg.output.join("summary.txt"), report.summary().as_bytes())
}

/// Samples every `(image, chain)` pair from the stored measurements, writes
/// reconstructions and the report. Jobs run in parallel; results are
/// collected in `(image, chain)` order.
pub fn sample(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let start = Instant::now();
    let data = load_data(cfg)?;
    write_config_echo(cfg)?;
    create_dir(&cfg.output.join(RECONSTRUCTIONS))?;
    let vocab = &data.eval.vocab;
    let grid = data.eval.grid;
    let process = build_process(cfg, vocab)?;
    let denoiser = build_denoiser(cfg, &data, &process)?;
    let fit = cfg.sampler.fit(cfg.operator.sigma())?;
    let mut problems = Vec::with_capacity(data.eval.len());
    for (i, name) in data.eval.names.iter().enumerate() {
        let path = measurement_path(cfg, name);
        let m = parse_measurement(&read_text(&path)?, &path)?;
        let op = build_operator(cfg, &grid, i)?;
        problems.push(Problem::new(op, m, vocab.clone().without_mask()));
    }
    let jobs: Vec<(usize, usize)> =
        (0..data.eval.len()).flat_map(|i| (0..cfg.n_chains).map(move |c| (i, c))).collect();
    let rows: Vec<ChainResult> = jobs
        .par_iter()
        .map(|&(i, c)| {
            let name = &data.eval.names[i];
            let seed = chain_seed(cfg, i, c);
            let outcome = (|| {
                let problem = problems[i].as_ref().map_err(|e| HarnessError::Config(e.to_string()))?;
                let sampler = cfg.sampler.to_sampler(fit, seed);
                let (z, _) = run(problem, denoiser.as_ref(), &process, &sampler)?;
                Image::from_tokens(&z, vocab, &grid)?.save(&reconstruction_path(cfg, &grid, name, c))?;
                score(&data.eval.items[i], &z, vocab, &grid)
            })();
            scored_row(stem(name), c, seed, outcome)
        })
        .collect();
    let report = MetricsReport::from_rows(rows, cfg.n_chains, start.elapsed().as_secs_f64());
    write_report(cfg, &report)?;
    Ok(report)
}

/// Re-scores stored reconstructions against the evaluation images.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let start = Instant::now();
    let data = load_data(cfg)?;
    let vocab = &data.eval.vocab;
    let grid = data.eval.grid;
    let mut rows = Vec::new();
    for (i, (truth, name)) in data.eval.items.iter().zip(&data.eval.names).enumerate() {
        for c in 0..cfg.n_chains {
            let outcome = Image::load(&reconstruction_path(cfg, &grid, name, c)).and_then(|img| {
                if img.grid()? != grid {
                    return Err(HarnessError::Image(format!("{} has the wrong size", name)));
                }
                score(truth, &img.to_tokens(vocab), vocab, &grid)
            });
            rows.push(scored_row(stem(name), c, chain_seed(cfg, i, c), outcome));
        }
    }
    let report = MetricsReport::from_rows(rows, cfg.n_chains, start.elapsed().as_secs_f64());
    write_report(cfg, &report)?;
    Ok(report)
}

/// Simulation followed by sampling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    simulate(cfg)?;
    sample(cfg)
}
