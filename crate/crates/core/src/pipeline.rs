//! End-to-end runs driven by a TOML configuration.
//!
//! Per frame the scene is traced once (and once more without the targets
//! when reference clutter removal is requested). Per seed and SNR a channel
//! frame is synthesized, every clutter method is applied, and each resulting
//! tensor is imaged and scored against the first target's ground truth.
//!
//! SNR is the power of the strongest traced path over the per-sample noise
//! power `E|n|^2`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use ndarray::Array3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelError, GroundTruth, PathEnsemble, SynthesisMode};
use crate::clutter::{self, ClutterError, ClutterMethod};
use crate::dataset::{
    self, DatasetError, ExperimentRecord, Manifest, MetricRow, RecordFrame, RecordImage,
};
use crate::metrics::{self, DetectionGate, MetricError};
use crate::propagation::{self, PathGain, PropagationError, RadioConfig};
use crate::raytracer::{
    self, InteractionFlags, InteractionKind, ProbeError, PropPath, TracerConfig,
};
use crate::scene::{self, Scene, SceneError};
use crate::sensing::{
    self, CovarianceOptions, ImageSource, MusicConfig, RadarImage, RangeMapping, SecondAxis,
    SensingError, UlaDescriptor,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("scene: {0}")]
    Scene(#[from] SceneError),
    #[error("raytracer, frame {frame}: {source}")]
    Trace { frame: u32, source: ProbeError },
    #[error("propagation, frame {frame}, path {path}: {source}")]
    Propagation {
        frame: u32,
        path: usize,
        source: PropagationError,
    },
    #[error("channel, frame {frame}: {source}")]
    Channel { frame: u32, source: ChannelError },
    #[error("clutter `{method}`, frame {frame}: {source}")]
    Clutter {
        frame: u32,
        method: &'static str,
        source: ClutterError,
    },
    #[error("sensing `{image}`: {source}")]
    Sensing { image: String, source: SensingError },
    #[error("metrics `{image}`: {source}")]
    Metrics { image: String, source: MetricError },
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

/// Serializable subset of [`TracerConfig`]; lengths default to multiples of
/// the carrier wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TracerSettings {
    pub probe_resolution: f64,
    pub max_interactions: usize,
    pub scatter_spread: f64,
    pub scatter_resolution: f64,
    pub rx_cube_halfwidth: Option<f64>,
    pub edge_margin: Option<f64>,
    pub diffraction_step: f64,
    pub diffraction_extent: f64,
    pub enable: InteractionFlags,
    pub refine_specular: bool,
}

impl Default for TracerSettings {
    fn default() -> Self {
        let base = TracerConfig::new(1.0);
        TracerSettings {
            probe_resolution: base.probe_resolution,
            max_interactions: base.max_interactions,
            scatter_spread: base.scatter_spread,
            scatter_resolution: base.scatter_resolution,
            rx_cube_halfwidth: None,
            edge_margin: None,
            diffraction_step: base.diffraction_step,
            diffraction_extent: base.diffraction_extent,
            enable: base.enable,
            refine_specular: base.refine_specular,
        }
    }
}

impl TracerSettings {
    pub fn to_config(&self, wavelength: f64) -> TracerConfig {
        let base = TracerConfig::new(wavelength);
        TracerConfig {
            wavelength,
            probe_resolution: self.probe_resolution,
            max_interactions: self.max_interactions,
            scatter_spread: self.scatter_spread,
            scatter_resolution: self.scatter_resolution,
            rx_cube_halfwidth: self.rx_cube_halfwidth.unwrap_or(base.rx_cube_halfwidth),
            edge_margin: self.edge_margin.unwrap_or(base.edge_margin),
            diffraction_step: self.diffraction_step,
            diffraction_extent: self.diffraction_extent,
            enable: self.enable.clone(),
            refine_specular: self.refine_specular,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingSettings {
    pub music: bool,
    pub periodogram: bool,
    /// Antenna whose grid feeds the periodogram.
    pub periodogram_antenna: usize,
    /// Fixed MUSIC signal subspace dimension; automatic when absent.
    pub signal_subspace_dim: Option<usize>,
    /// `[start, end, step]`, meters.
    pub range_grid: [f64; 3],
    /// `[start, end, step]`, degrees.
    pub azimuth_grid_deg: [f64; 3],
    pub decimation: usize,
    /// Smoothing subarray length; 0 disables smoothing.
    pub smoothing: usize,
    pub range_mapping: RangeMapping,
}

impl Default for SensingSettings {
    fn default() -> Self {
        SensingSettings {
            music: true,
            periodogram: true,
            periodogram_antenna: 0,
            signal_subspace_dim: None,
            range_grid: [0.0, 50.0, 0.25],
            azimuth_grid_deg: [-90.0, 90.0, 1.0],
            decimation: 16,
            smoothing: 32,
            range_mapping: RangeMapping::OneWay,
        }
    }
}

impl SensingSettings {
    pub fn music_config(&self) -> MusicConfig {
        let [r0, r1, dr] = self.range_grid;
        let [a0, a1, da] = self.azimuth_grid_deg;
        MusicConfig {
            signal_subspace_dim: self.signal_subspace_dim,
            range_grid: sensing::linear_grid(r0, r1, dr),
            azimuth_grid: sensing::linear_grid(a0, a1, da)
                .into_iter()
                .map(f64::to_radians)
                .collect(),
            covariance: CovarianceOptions {
                decimation: self.decimation,
                smoothing: (self.smoothing > 0).then_some(self.smoothing),
            },
            range_mapping: self.range_mapping,
        }
    }
}

fn default_methods() -> Vec<ClutterMethod> {
    vec![ClutterMethod::None]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_realizations() -> usize {
    16
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Scene document, relative to the config file.
    pub scene_path: PathBuf,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub tracer: TracerSettings,
    #[serde(default = "default_methods")]
    pub clutter: Vec<ClutterMethod>,
    #[serde(default)]
    pub sensing: SensingSettings,
    /// dB. Empty means `radio.noise_stddev` is used as is.
    #[serde(default)]
    pub snr_sweep: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Object ids to score; the first one is the detection target.
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub synthesis: SynthesisMode,
    /// Noise realizations averaged into the clutter reference.
    #[serde(default = "default_realizations")]
    pub reference_realizations: usize,
    /// Keep the images of the first seed in the record.
    #[serde(default = "yes")]
    pub store_images: bool,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<RunConfig, PipelineError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; relative paths inside resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunConfig::from_toml(&text, base)
    }

    pub fn scene_file(&self) -> PathBuf {
        self.base_dir.join(&self.scene_path)
    }

    pub fn output_path(&self) -> PathBuf {
        self.base_dir.join(&self.output_dir)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        self.radio
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.clutter.is_empty() {
            return bad("at least one clutter method is required");
        }
        for m in &self.clutter {
            if let ClutterMethod::Dynamic { epsilon } = m {
                if !(*epsilon > 0.0 && *epsilon <= 1.0) {
                    return bad("dynamic epsilon must lie in (0, 1]");
                }
            }
        }
        if self.clutter.contains(&ClutterMethod::Reference) && self.targets.is_empty() {
            return bad("reference clutter removal needs `targets`");
        }
        if self.snr_sweep.iter().any(|s| !s.is_finite()) {
            return bad("snr_sweep entries must be finite");
        }
        if self.reference_realizations == 0 {
            return bad("reference_realizations must be >= 1");
        }
        if !(self.tracer.probe_resolution > 0.0) {
            return bad("tracer.probe_resolution must be > 0");
        }
        let s = &self.sensing;
        if s.range_grid[2] <= 0.0 || s.azimuth_grid_deg[2] <= 0.0 || s.decimation == 0 {
            return bad("sensing grid steps and decimation must be > 0");
        }
        Ok(())
    }

    /// Config with the reproducibility-relevant fields as canonical JSON.
    fn manifest_value(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        v
    }
}

/// Traced paths and their gains for one frame.
#[derive(Debug, Clone)]
pub struct FrameTrace {
    pub frame: u32,
    pub paths: Vec<PropPath>,
    pub gains: Vec<PathGain>,
}

/// Trace and propagate every frame of a scene.
pub fn trace_scene(
    scene: &Scene,
    radio: &RadioConfig,
    tracer: &TracerConfig,
) -> Result<Vec<FrameTrace>, PipelineError> {
    (0..scene.num_frames)
        .map(|frame| {
            let start = Instant::now();
            let paths = raytracer::trace_paths(scene, tracer, frame)
                .map_err(|source| PipelineError::Trace { frame, source })?;
            let gains = paths
                .iter()
                .enumerate()
                .map(|(path, p)| {
                    propagation::path_gain(p, radio, tracer.wavelength, &scene.tx, &scene.rx)
                        .map_err(|source| PipelineError::Propagation {
                            frame,
                            path,
                            source,
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            info!(
                "frame {frame}: {} paths traced in {:.2?}",
                paths.len(),
                start.elapsed()
            );
            Ok(FrameTrace {
                frame,
                paths,
                gains,
            })
        })
        .collect()
}

/// Aggregate of one (frame, method, image, SNR) cell over the seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub frame: u32,
    pub method: String,
    pub image: String,
    pub snr_db: f64,
    pub seeds: usize,
    pub p_detection: f64,
    pub mean_sinr_db: f64,
    pub mean_prominence: f64,
    pub mean_normalized_prominence: f64,
    pub mean_isolation: f64,
}

/// Per-path loss breakdown row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub frame: u32,
    pub path: usize,
    pub signature: String,
    pub length: f64,
    pub delay_ns: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub surface_speed: f64,
    pub doppler_phase_per_symbol: f64,
    pub printed_beta: f64,
    pub path_factor: f64,
    pub beam_factor: f64,
    pub reflect: f64,
    pub scatter: f64,
    pub penetrate: f64,
    pub diffract: f64,
    pub backscatter: f64,
}

fn path_rows(trace: &FrameTrace) -> Vec<PathRow> {
    trace
        .paths
        .iter()
        .zip(&trace.gains)
        .enumerate()
        .map(|(i, (p, g))| {
            let f = |k| g.loss_breakdown.get(&k).copied().unwrap_or(1.0);
            let signature = p
                .events
                .iter()
                .map(|e| match &e.object_id {
                    Some(id) => format!("{}:{id}", e.kind),
                    None => e.kind.to_string(),
                })
                .collect::<Vec<_>>()
                .join(">");
            PathRow {
                frame: trace.frame,
                path: i,
                signature,
                length: g.length,
                delay_ns: g.delay * 1e9,
                amplitude: g.amplitude,
                phase: g.phase,
                surface_speed: g.surface_speed,
                doppler_phase_per_symbol: g.doppler_phase_per_symbol,
                printed_beta: g.printed_beta,
                path_factor: g.path_factor,
                beam_factor: g.beam_factor,
                reflect: f(InteractionKind::Reflect),
                scatter: f(InteractionKind::Scatter),
                penetrate: f(InteractionKind::Penetrate),
                diffract: f(InteractionKind::Diffract),
                backscatter: f(InteractionKind::Backscatter),
            }
        })
        .collect()
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: ExperimentRecord,
    pub sweep: Vec<SweepRow>,
    pub paths: Vec<PathRow>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise stream of the `r`-th reference realization for `seed`.
fn reference_seed(seed: u64, r: usize) -> u64 {
    splitmix(seed ^ splitmix(0x5245_4652_0000_0000 ^ r as u64))
}

fn snr_label(snr: f64) -> String {
    if snr.is_infinite() {
        "inf".into()
    } else {
        format!("{snr}")
    }
}

/// Position of the truth on an image's axes.
pub fn truth_coordinates(
    image: &RadarImage,
    truth: &GroundTruth,
    radio: &RadioConfig,
    mapping: RangeMapping,
) -> (f64, f64) {
    let range = truth.path_length / mapping.factor();
    match &image.second_axis {
        SecondAxis::Azimuth(_) => (range, truth.azimuth),
        SecondAxis::Doppler(_) => {
            let doppler = -truth.path_length_rate / radio.wavelength();
            let span = 1.0 / radio.symbol_duration();
            (range, doppler.rem_euclid(span))
        }
    }
}

struct Context<'a> {
    config: &'a RunConfig,
    radio: &'a RadioConfig,
    wavelength: f64,
    ula: UlaDescriptor,
    music: MusicConfig,
}

struct TaskOutput {
    rows: Vec<MetricRow>,
    images: Vec<RecordImage>,
}

impl Context<'_> {
    fn synthesize(
        &self,
        ensemble: &PathEnsemble,
        sigma: f64,
        frame: u32,
        seed: u64,
    ) -> Result<Array3<Complex64>, PipelineError> {
        let radio = RadioConfig {
            noise_stddev: sigma,
            ..self.radio.clone()
        };
        channel::synthesize_frame(ensemble, &radio, frame, seed, self.config.synthesis)
            .map(|f| f.data)
            .map_err(|source| PipelineError::Channel { frame, source })
    }

    fn images(
        &self,
        h: &Array3<Complex64>,
        prefix: &str,
    ) -> Result<Vec<(String, RadarImage)>, PipelineError> {
        let s = &self.config.sensing;
        let mut out = Vec::new();
        if s.music {
            let name = format!("{prefix}/music");
            let img = sensing::music_image(h.view(), &self.music, self.radio, &self.ula).map_err(
                |source| PipelineError::Sensing {
                    image: name.clone(),
                    source,
                },
            )?;
            out.push((name, img));
        }
        if s.periodogram {
            let name = format!("{prefix}/periodogram");
            let img = sensing::antenna_periodogram(
                h.view(),
                s.periodogram_antenna,
                self.radio,
                s.range_mapping,
            )
            .map_err(|source| PipelineError::Sensing {
                image: name.clone(),
                source,
            })?;
            out.push((name, img));
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn task(
        &self,
        frame: u32,
        seed: u64,
        keep_images: bool,
        ensemble: &PathEnsemble,
        reference: Option<&PathEnsemble>,
        snrs: &[(f64, f64)],
        truth: Option<&GroundTruth>,
    ) -> Result<TaskOutput, PipelineError> {
        let mut rows = Vec::new();
        let mut images = Vec::new();
        for &(snr, sigma) in snrs {
            let h = self.synthesize(ensemble, sigma, frame, seed)?;
            let h_ref = match reference {
                Some(r) => {
                    let mut acc = self.synthesize(r, 0.0, frame, seed)?;
                    if sigma > 0.0 {
                        let n = self.config.reference_realizations;
                        let empty = PathEnsemble::empty(r.antenna_count);
                        let mut noise = Array3::<Complex64>::zeros(acc.dim());
                        for i in 0..n {
                            noise +=
                                &self.synthesize(&empty, sigma, frame, reference_seed(seed, i))?;
                        }
                        acc.scaled_add(Complex64::new(1.0 / n as f64, 0.0), &noise);
                    }
                    Some(acc)
                }
                None => None,
            };
            for method in &self.config.clutter {
                let cleaned = clutter::apply(method, h.view(), h_ref.as_ref().map(|r| r.view()))
                    .map_err(|source| PipelineError::Clutter {
                        frame,
                        method: method.name(),
                        source,
                    })?;
                let prefix = format!("f{frame}/{}/snr{}", method.name(), snr_label(snr));
                for (name, image) in self.images(&cleaned, &prefix)? {
                    if let Some(truth) = truth {
                        let coords = truth_coordinates(
                            &image,
                            truth,
                            self.radio,
                            self.config.sensing.range_mapping,
                        );
                        let gate = DetectionGate::for_image(&image, self.wavelength);
                        let (report, _) =
                            metrics::evaluate(&image, coords, gate).map_err(|source| {
                                PipelineError::Metrics {
                                    image: name.clone(),
                                    source,
                                }
                            })?;
                        rows.push(MetricRow {
                            frame,
                            method: method.name().to_string(),
                            image: match image.source {
                                ImageSource::Music => "music".into(),
                                ImageSource::Periodogram => "periodogram".into(),
                            },
                            snr_db: snr,
                            seed,
                            detected: report.detected,
                            p_detection: report.p_detection,
                            sinr: report.sinr,
                            sinr_db: report.sinr_db,
                            prominence: report.prominence,
                            normalized_prominence: report.normalized_prominence,
                            isolation: report.isolation,
                            truth_range: coords.0,
                            truth_azimuth: coords.1,
                            gate_radius: report.gate_radius,
                            num_peaks: report.num_peaks,
                        });
                    }
                    if keep_images {
                        images.push(RecordImage { name, image });
                    }
                }
            }
        }
        Ok(TaskOutput { rows, images })
    }
}

/// Aggregate metric rows over seeds, keeping first-appearance order.
pub fn aggregate(rows: &[MetricRow]) -> Vec<SweepRow> {
    let mut order: Vec<(u32, String, String, u64)> = Vec::new();
    let mut groups: BTreeMap<(u32, String, String, u64), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        let key = (
            r.frame,
            r.method.clone(),
            r.image.clone(),
            r.snr_db.to_bits(),
        );
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let n = g.len() as f64;
            let mean = |f: fn(&MetricRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            let detected: Vec<bool> = g.iter().map(|r| r.detected).collect();
            SweepRow {
                frame: key.0,
                method: key.1.clone(),
                image: key.2.clone(),
                snr_db: f64::from_bits(key.3),
                seeds: g.len(),
                p_detection: metrics::probability_of_detection(&detected).unwrap_or(0.0),
                mean_sinr_db: mean(|r| r.sinr_db),
                mean_prominence: mean(|r| r.prominence),
                mean_normalized_prominence: mean(|r| r.normalized_prominence),
                mean_isolation: mean(|r| r.isolation),
            }
        })
        .collect()
}

/// Execute the full pipeline without touching the filesystem beyond
/// reading the scene.
pub fn run(config: &RunConfig) -> Result<RunOutput, PipelineError> {
    config.validate()?;
    let scene = scene::parse_scene(config.scene_file())?;
    run_scene(config, &scene)
}

/// [`run`] on an already loaded scene.
pub fn run_scene(config: &RunConfig, scene: &Scene) -> Result<RunOutput, PipelineError> {
    config.validate()?;
    for id in &config.targets {
        if scene.object_index(id).is_none() {
            return Err(PipelineError::Scene(SceneError::UnknownObject(id.clone())));
        }
    }
    let radio = &config.radio;
    let wavelength = radio.wavelength();
    let tracer = config.tracer.to_config(wavelength);
    let started = Instant::now();

    let traces = trace_scene(scene, radio, &tracer)?;
    let needs_reference = config.clutter.contains(&ClutterMethod::Reference);
    let reference_traces = if needs_reference {
        let mut empty = scene.clone();
        for id in &config.targets {
            empty = empty.without_object(id)?;
        }
        Some(trace_scene(&empty, radio, &tracer)?)
    } else {
        None
    };
    info!("tracing finished in {:.2?}", started.elapsed());

    let ctx = Context {
        config,
        radio,
        wavelength,
        ula: UlaDescriptor {
            count: scene.rx.array.count,
            spacing_wavelengths: scene.rx.array.spacing_for(wavelength) / wavelength,
        },
        music: config.sensing.music_config(),
    };

    let ensembles: Vec<PathEnsemble> = traces
        .iter()
        .map(|t| PathEnsemble::new(t.gains.clone(), &scene.rx, wavelength))
        .collect();
    let reference_ensembles: Option<Vec<PathEnsemble>> = reference_traces.as_ref().map(|rt| {
        rt.iter()
            .map(|t| PathEnsemble::new(t.gains.clone(), &scene.rx, wavelength))
            .collect()
    });
    let truths: Vec<Vec<GroundTruth>> = (0..scene.num_frames)
        .map(|f| channel::ground_truth(scene, f, &config.targets))
        .collect();

    // (snr dB, noise stddev) per frame
    let snr_table: Vec<Vec<(f64, f64)>> = ensembles
        .iter()
        .map(|e| {
            let reference = e.paths.iter().map(|p| p.gain.amplitude).fold(0.0, f64::max);
            if config.snr_sweep.is_empty() {
                let sigma = radio.noise_stddev;
                vec![(20.0 * (reference / sigma).log10(), sigma)]
            } else {
                if reference == 0.0 {
                    warn!("no signal power; SNR sweep runs noiseless");
                }
                config
                    .snr_sweep
                    .iter()
                    .map(|&snr| (snr, reference * 10f64.powf(-snr / 20.0)))
                    .collect()
            }
        })
        .collect();

    let tasks: Vec<(u32, usize)> = (0..scene.num_frames)
        .flat_map(|f| (0..config.seeds.len()).map(move |s| (f, s)))
        .collect();
    let outputs: Vec<TaskOutput> = tasks
        .par_iter()
        .map(|&(f, s)| {
            let fi = f as usize;
            ctx.task(
                f,
                config.seeds[s],
                config.store_images && s == 0,
                &ensembles[fi],
                reference_ensembles.as_ref().map(|r| &r[fi]),
                &snr_table[fi],
                truths[fi].first(),
            )
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut images = Vec::new();
    for out in outputs {
        rows.extend(out.rows);
        images.extend(out.images);
    }
    // frame-major, then method, SNR and seed in configuration order
    let method_rank = |m: &str| {
        config
            .clutter
            .iter()
            .position(|c| c.name() == m)
            .unwrap_or(usize::MAX)
    };
    let snr_rank = |s: f64| config.snr_sweep.iter().position(|&x| x == s).unwrap_or(0);
    let seed_rank = |seed: u64| config.seeds.iter().position(|&x| x == seed).unwrap_or(0);
    rows.sort_by_key(|r| {
        (
            r.frame,
            method_rank(&r.method),
            r.image != "music",
            snr_rank(r.snr_db),
            seed_rank(r.seed),
        )
    });

    let frames = ensembles
        .iter()
        .enumerate()
        .map(|(f, e)| {
            let h = ctx.synthesize(e, 0.0, f as u32, 0)?;
            Ok(RecordFrame::from_f64(f as u32, &h, truths[f].clone()))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;

    let mut extra = BTreeMap::new();
    extra.insert("config".to_string(), config.manifest_value());
    extra.insert(
        "path_counts".to_string(),
        serde_json::json!(traces.iter().map(|t| t.paths.len()).collect::<Vec<_>>()),
    );
    extra.insert(
        "snr_reference_amplitude".to_string(),
        serde_json::json!(ensembles
            .iter()
            .map(|e| e.paths.iter().map(|p| p.gain.amplitude).fold(0.0, f64::max))
            .collect::<Vec<_>>()),
    );
    let record = ExperimentRecord {
        manifest: Manifest {
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            scene_hash: scene.content_hash(),
            radio: radio.clone(),
            tracer: serde_json::to_value(&config.tracer).expect("tracer settings serialize"),
            seeds: config.seeds.clone(),
            num_frames: scene.num_frames,
            extra,
        },
        frames,
        images,
        metrics: rows,
    };
    let sweep = aggregate(&record.metrics);
    let paths = traces.iter().flat_map(path_rows).collect();
    info!("run finished in {:.2?}", started.elapsed());
    Ok(RunOutput {
        record,
        sweep,
        paths,
    })
}

/// Per-SNR, per-method aggregates; needs an SNR sweep, two or more methods
/// and a target.
pub fn metric_sweep(config: &RunConfig) -> Result<Vec<SweepRow>, PipelineError> {
    if config.snr_sweep.is_empty() || config.clutter.len() < 2 || config.targets.is_empty() {
        return Err(PipelineError::Config(
            "a sweep needs snr_sweep, at least two clutter methods and a target".into(),
        ));
    }
    Ok(run(config)?.sweep)
}

pub fn write_sweep_csv(rows: &[SweepRow], w: impl Write) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_path_csv(rows: &[PathRow], w: impl Write) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_to_io(e: csv::Error) -> io::Error {
    io::Error::other(e.to_string())
}

/// File name for an image name like `f0/none/snr20/music`.
pub fn image_file_stem(name: &str) -> String {
    name.replace('/', "_")
}

/// Floor of the dB scale used for PGM exports.
pub const PGM_FLOOR_DB: f64 = -60.0;

/// Write the record and its sidecars into `dir`:
/// `record.isac`, `manifest.json`, `metrics.csv`, `sweep.csv`, `paths.csv`
/// and one PGM per stored image under `images/`.
pub fn write_outputs(out: &RunOutput, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    dataset::write_record(&out.record, dir.join("record.isac"))?;
    let manifest = serde_json::to_value(&out.record.manifest).expect("manifest serializes");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;

    let mut buf = Vec::new();
    dataset::write_metrics_csv(&out.record.metrics, &mut buf).map_err(csv_to_io)?;
    fs::write(dir.join("metrics.csv"), &buf)?;
    buf.clear();
    write_sweep_csv(&out.sweep, &mut buf).map_err(csv_to_io)?;
    fs::write(dir.join("sweep.csv"), &buf)?;
    buf.clear();
    write_path_csv(&out.paths, &mut buf).map_err(csv_to_io)?;
    fs::write(dir.join("paths.csv"), &buf)?;

    out.record
        .images
        .par_iter()
        .try_for_each(|img| -> Result<(), PipelineError> {
            let mut bytes = Vec::new();
            img.image.write_pgm(&mut bytes, PGM_FLOOR_DB)?;
            fs::write(
                dir.join("images")
                    .join(format!("{}.pgm", image_file_stem(&img.name))),
                bytes,
            )?;
            Ok(())
        })?;
    Ok(())
}

/// Trace every frame and write the path dump.
pub fn trace_debug(config: &RunConfig, mut w: impl Write) -> Result<usize, PipelineError> {
    let scene = scene::parse_scene(config.scene_file())?;
    let tracer = config.tracer.to_config(config.radio.wavelength());
    let mut total = 0;
    for frame in 0..scene.num_frames {
        let paths = raytracer::trace_paths(&scene, &tracer, frame)
            .map_err(|source| PipelineError::Trace { frame, source })?;
        raytracer::write_dump(&mut w, frame, &paths, frame == 0)?;
        total += paths.len();
    }
    Ok(total)
}
