//! Synthetic multi-channel recordings with a known set of informative
//! sensors.
//!
//! An informative sensor under class `c` emits
//! `offset_c + amp_c · sin(2π f_c t + phase)` plus Gaussian noise. Every
//! other sensor emits Gaussian noise around a fixed level. Waveform
//! parameters depend only on (class, sensor); the seed only moves the noise.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::seed::rng_from;
use crate::signal::{write_recording_csv, PipelineConfig, RawRecording, RecordingMeta};

/// Level around which uninformative sensors fluctuate.
pub const REST_LEVEL: f64 = 1.0;
/// Frequency of class 0; each further class adds `FREQUENCY_STEP_HZ`.
pub const BASE_FREQUENCY_HZ: f64 = 8.0;
pub const FREQUENCY_STEP_HZ: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub node_count: usize,
    pub informative_sensors: Vec<usize>,
    pub class_count: usize,
    pub recordings_per_class: usize,
    pub subject_count: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub noise_sd: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Sixteen sensors in bands of 6/6/4 with one planted sensor per band
    /// (sensor 4 of the first band, 1 of the second, 2 of the third).
    fn default() -> Self {
        Self {
            node_count: 16,
            informative_sensors: vec![3, 6, 13],
            class_count: 4,
            recordings_per_class: 3,
            subject_count: 1,
            duration_s: 3.0,
            sample_rate_hz: 1000.0,
            noise_sd: 0.3,
            amplitude: 1.0,
            seed: 0,
        }
    }
}

/// Default band layout matching [`SynthConfig::default`].
pub const DEFAULT_BANDS: [usize; 3] = [6, 6, 4];

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.node_count == 0 {
            return bad("node_count must be positive".into());
        }
        if let Some(&s) = self.informative_sensors.iter().find(|&&s| s >= self.node_count) {
            return bad(format!("informative sensor {s} outside 0..{}", self.node_count));
        }
        let mut sorted = self.informative_sensors.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.informative_sensors.len() {
            return bad("informative sensors must be distinct".into());
        }
        if self.class_count < 2 {
            return bad(format!("class_count must be at least 2, got {}", self.class_count));
        }
        if self.recordings_per_class == 0 || self.subject_count == 0 {
            return bad("recordings_per_class and subject_count must be positive".into());
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return bad(format!("sample_rate_hz must be positive, got {}", self.sample_rate_hz));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) || self.samples_per_recording() == 0 {
            return bad(format!("duration_s must give at least one sample, got {}", self.duration_s));
        }
        let pipe = PipelineConfig::default();
        let needed_ms = pipe.head_clip_ms + pipe.tail_clip_ms + pipe.window_ms;
        if self.duration_s * 1000.0 < needed_ms {
            return bad(format!(
                "duration_s {} leaves no window after default clipping (needs {} ms)",
                self.duration_s, needed_ms
            ));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be nonnegative, got {}", self.noise_sd));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return bad(format!("amplitude must be positive, got {}", self.amplitude));
        }
        Ok(())
    }

    pub fn samples_per_recording(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn label_names(&self) -> Vec<String> {
        (0..self.class_count).map(|c| format!("movement{c}")).collect()
    }

    pub fn recording_count(&self) -> usize {
        self.class_count * self.recordings_per_class * self.subject_count
    }
}

/// Class-conditional waveform of one informative sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waveform {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub phase: f64,
}

impl Waveform {
    /// Parameters for class `class` on the `rank`-th informative sensor.
    pub fn for_class(cfg: &SynthConfig, class: usize, rank: usize) -> Self {
        let m = cfg.informative_sensors.len().max(1) as f64;
        Self {
            offset: REST_LEVEL + 0.5 * class as f64,
            amplitude: cfg.amplitude * (1.0 + 0.25 * class as f64),
            frequency_hz: BASE_FREQUENCY_HZ + FREQUENCY_STEP_HZ * class as f64,
            phase: 2.0 * PI * (rank as f64 / m + 0.15 * class as f64),
        }
    }

    pub fn at(&self, t_s: f64) -> f64 {
        self.offset + self.amplitude * (2.0 * PI * self.frequency_hz * t_s + self.phase).sin()
    }
}

/// Generates `subject × class × recording` recordings in that nesting order.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<RawRecording>> {
    generate_with(cfg, Exec::default())
}

pub fn generate_with(cfg: &SynthConfig, exec: Exec) -> Result<Vec<RawRecording>> {
    cfg.validate()?;
    let per_subject = cfg.class_count * cfg.recordings_per_class;
    let results = exec.map_range(cfg.recording_count(), |idx| {
        let subject = idx / per_subject;
        let class = (idx % per_subject) / cfg.recordings_per_class;
        let rep = idx % cfg.recordings_per_class;
        generate_one(cfg, subject, class, rep)
    });
    results.into_iter().collect()
}

fn generate_one(cfg: &SynthConfig, subject: usize, class: usize, rep: usize) -> Result<RawRecording> {
    let t_len = cfg.samples_per_recording();
    let mut channels = Array2::from_elem((cfg.node_count, t_len), REST_LEVEL);
    for (rank, &sensor) in cfg.informative_sensors.iter().enumerate() {
        let w = Waveform::for_class(cfg, class, rank);
        for (t, v) in channels.row_mut(sensor).iter_mut().enumerate() {
            *v = w.at(t as f64 / cfg.sample_rate_hz);
        }
    }
    if cfg.noise_sd > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
        for (sensor, mut row) in channels.rows_mut().into_iter().enumerate() {
            let mut rng = rng_from(cfg.seed, &[subject as u64, class as u64, rep as u64, sensor as u64]);
            for v in row.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    let mut rec = RawRecording::new(
        cfg.sample_rate_hz,
        channels,
        class,
        format!("S{}", subject + 1),
        format!("R{}", rep + 1),
    )?;
    rec.source = recording_stem(subject, class, rep);
    Ok(rec)
}

fn recording_stem(subject: usize, class: usize, rep: usize) -> String {
    format!("s{:02}_c{:02}_r{:02}", subject + 1, class, rep + 1)
}

/// Writes each recording as `<stem>.csv` plus a `<stem>.toml` sidecar.
/// Returns the written paths in generation order.
pub fn write_recordings(dir: &Path, recordings: &[RawRecording], label_names: &[String]) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for rec in recordings {
        let stem = if rec.source.is_empty() { format!("rec{:04}", written.len() / 2) } else { rec.source.clone() };
        let csv_path = dir.join(format!("{stem}.csv"));
        write_recording_csv(rec, &csv_path)?;
        let meta = RecordingMeta {
            label: rec.label,
            label_name: label_names.get(rec.label).cloned(),
            subject_id: rec.subject_id.clone(),
            session_id: rec.session_id.clone(),
            sample_rate_hz: rec.sample_rate_hz,
        };
        let meta_path = dir.join(format!("{stem}.toml"));
        crate::io::write_atomic(&meta_path, toml::to_string(&meta)?.as_bytes())?;
        written.push(csv_path);
        written.push(meta_path);
    }
    Ok(written)
}
