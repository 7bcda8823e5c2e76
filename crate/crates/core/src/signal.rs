//! Raw multi-channel recordings and the preprocessing chain applied to them:
//! clip → trailing moving average → per-channel min-max → sliding windows.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One continuous recording of a single movement class.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub sample_rate_hz: f64,
    /// N × T: one row per sensor channel, one column per time point.
    pub channels: Array2<f64>,
    pub label: usize,
    pub subject_id: String,
    pub session_id: String,
    /// Free-form origin tag, usually the source file name.
    pub source: String,
}

impl RawRecording {
    pub fn new(
        sample_rate_hz: f64,
        channels: Array2<f64>,
        label: usize,
        subject_id: impl Into<String>,
        session_id: impl Into<String>,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Config(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if channels.nrows() == 0 || channels.ncols() == 0 {
            return Err(Error::EmptySignal(format!(
                "recording has shape {}x{}",
                channels.nrows(),
                channels.ncols()
            )));
        }
        Ok(Self {
            sample_rate_hz,
            channels,
            label,
            subject_id: subject_id.into(),
            session_id: session_id.into(),
            source: String::new(),
        })
    }

    pub fn channel_count(&self) -> usize {
        self.channels.nrows()
    }

    pub fn len(&self) -> usize {
        self.channels.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.ncols() == 0
    }

    /// Milliseconds to a whole number of points at this recording's rate.
    pub fn ms_to_points(&self, ms: f64) -> usize {
        ms_to_points(ms, self.sample_rate_hz)
    }

    fn with_channels(&self, channels: Array2<f64>) -> Self {
        Self { channels, ..self.clone() }
    }
}

pub fn ms_to_points(ms: f64, sample_rate_hz: f64) -> usize {
    (ms * sample_rate_hz / 1000.0).round().max(0.0) as usize
}

/// Sidecar document accompanying each recording CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingMeta {
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_name: Option<String>,
    pub subject_id: String,
    pub session_id: String,
    pub sample_rate_hz: f64,
}

/// Reads a CSV whose columns are channels and rows are time points. A first
/// row made entirely of non-numeric cells is treated as a header.
pub fn load_recording_csv(
    path: &Path,
    sample_rate_hz: f64,
    label: usize,
    subject_id: &str,
    session_id: &str,
) -> Result<RawRecording> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse { location: path.display().to_string(), message: e.to_string() })?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if idx == 0 && record.iter().all(|cell| parse_cell(cell).is_none()) {
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Parse {
                location: format!("{} row {line}", path.display()),
                message: format!("expected {expected} columns, found {}", record.len()),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                parse_cell(cell).ok_or_else(|| Error::Parse {
                    location: format!("{} row {line} column {}", path.display(), col + 1),
                    message: format!("not a finite number: {cell:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let width = width.unwrap_or(0);
    if rows.is_empty() || width == 0 {
        return Err(Error::EmptySignal(format!("{} has no data rows", path.display())));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let time_major = Array2::from_shape_vec((flat.len() / width, width), flat)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let mut rec = RawRecording::new(
        sample_rate_hz,
        time_major.t().to_owned(),
        label,
        subject_id,
        session_id,
    )?;
    rec.source = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(rec)
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Writes channels as columns with a `ch0,ch1,...` header. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_recording_csv(rec: &RawRecording, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(rec.len() * rec.channel_count() * 12);
    let header: Vec<String> = (0..rec.channel_count()).map(|c| format!("ch{c}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for col in rec.channels.columns() {
        let mut first = true;
        for v in col {
            if !first {
                out.push(b',');
            }
            first = false;
            write!(out, "{v}")?;
        }
        out.push(b'\n');
    }
    crate::io::write_atomic(path, &out)
}

/// Loads every `*.csv` in `dir` (sorted by name) together with its `*.toml`
/// sidecar of the same stem.
pub fn load_recording_dir(dir: &Path) -> Result<Vec<(RawRecording, RecordingMeta)>> {
    let mut csvs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    csvs.sort();
    csvs.into_iter()
        .map(|csv_path| {
            let meta_path = csv_path.with_extension("toml");
            let meta: RecordingMeta = toml::from_str(&std::fs::read_to_string(&meta_path).map_err(
                |e| Error::Inconsistent(format!("missing metadata {}: {e}", meta_path.display())),
            )?)?;
            let rec = load_recording_csv(
                &csv_path,
                meta.sample_rate_hz,
                meta.label,
                &meta.subject_id,
                &meta.session_id,
            )?;
            Ok((rec, meta))
        })
        .collect()
}

/// Drops `round(head_ms·φ/1000)` leading and `round(tail_ms·φ/1000)`
/// trailing points.
pub fn clip_recording(rec: &RawRecording, head_ms: f64, tail_ms: f64) -> Result<RawRecording> {
    let head = rec.ms_to_points(head_ms);
    let tail = rec.ms_to_points(tail_ms);
    if head + tail >= rec.len() {
        return Err(Error::EmptySignal(format!(
            "clipping {head} + {tail} points leaves nothing of {}",
            rec.len()
        )));
    }
    let end = rec.len() - tail;
    Ok(rec.with_channels(rec.channels.slice(s![.., head..end]).to_owned()))
}

/// Causal trailing mean over `window_points` samples. The first
/// `window_points − 1` outputs average over the points seen so far, so the
/// output has the input's length and never looks ahead.
pub fn moving_average(rec: &RawRecording, window_points: usize) -> Result<RawRecording> {
    if window_points == 0 {
        return Err(Error::Config("moving-average window must be at least 1 point".into()));
    }
    let mut out = rec.channels.clone();
    for (src, mut dst) in rec.channels.rows().into_iter().zip(out.rows_mut()) {
        let mut sum = 0.0;
        for t in 0..src.len() {
            sum += src[t];
            if t >= window_points {
                sum -= src[t - window_points];
            }
            dst[t] = sum / (t + 1).min(window_points) as f64;
        }
    }
    Ok(rec.with_channels(out))
}

/// Per-channel `(x − min)/(max − min)`. Constant channels become all zeros.
pub fn min_max_normalize(rec: &RawRecording) -> RawRecording {
    let mut out = rec.channels.clone();
    for mut row in out.rows_mut() {
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if range > 0.0 && range.is_finite() {
            row.mapv_inplace(|v| ((v - lo) / range).clamp(0.0, 1.0));
        } else {
            row.fill(0.0);
        }
    }
    rec.with_channels(out)
}

/// One labeled window: N × F features.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub features: Array2<f64>,
    pub label: usize,
    /// First time point of the window within its recording.
    pub start: usize,
}

/// Window geometry in points: (length, stride).
pub fn window_geometry(sample_rate_hz: f64, window_ms: f64, stride_ms: f64) -> (usize, usize) {
    (
        ms_to_points(window_ms, sample_rate_hz),
        ms_to_points(stride_ms, sample_rate_hz).max(1),
    )
}

/// Number of windows of `window` points advanced by `stride` over `len`
/// points: `floor((len − window)/stride) + 1`, or zero if it does not fit.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if window == 0 || window > len {
        0
    } else {
        (len - window) / stride + 1
    }
}

pub fn slide_windows(rec: &RawRecording, window_ms: f64, stride_ms: f64) -> Result<Vec<WindowSample>> {
    let (w, stride) = window_geometry(rec.sample_rate_hz, window_ms, stride_ms);
    if w == 0 {
        return Err(Error::Config(format!("window of {window_ms} ms is shorter than one point")));
    }
    if w > rec.len() {
        return Err(Error::WindowTooLong { window: w, len: rec.len() });
    }
    Ok((0..window_count(rec.len(), w, stride))
        .map(|i| {
            let start = i * stride;
            WindowSample {
                features: rec.channels.slice(s![.., start..start + w]).to_owned(),
                label: rec.label,
                start,
            }
        })
        .collect())
}

/// Preprocessing settings. Defaults: 500 ms clipped at each end, 10-point
/// smoothing, 150 ms windows, 1 ms stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub head_clip_ms: f64,
    pub tail_clip_ms: f64,
    pub smoothing_points: usize,
    pub window_ms: f64,
    pub stride_ms: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            head_clip_ms: 500.0,
            tail_clip_ms: 500.0,
            smoothing_points: 10,
            window_ms: 150.0,
            stride_ms: 1.0,
        }
    }
}

impl PipelineConfig {
    /// Clip, smooth and normalize one recording (everything except windowing).
    pub fn condition(&self, rec: &RawRecording) -> Result<RawRecording> {
        let clipped = clip_recording(rec, self.head_clip_ms, self.tail_clip_ms)?;
        let smoothed = moving_average(&clipped, self.smoothing_points)?;
        Ok(min_max_normalize(&smoothed))
    }
}

/// Mean of each channel, used by statistical checks on generated data.
pub fn channel_means(rec: &RawRecording) -> Vec<f64> {
    rec.channels
        .mean_axis(Axis(1))
        .map(|m| m.to_vec())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn rec(channels: Array2<f64>, rate: f64) -> RawRecording {
        RawRecording::new(rate, channels, 0, "s", "a").unwrap()
    }

    #[test]
    fn csv_plain_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "1,2\n3,4\n5,6\n7,8\n9,10\n").unwrap();
        let r = load_recording_csv(&p, 1000.0, 1, "s1", "x").unwrap();
        assert_eq!((r.channel_count(), r.len()), (2, 5));
        assert_eq!(r.channels.row(1).to_vec(), vec![2., 4., 6., 8., 10.]);

        std::fs::write(&p, "ch0,ch1\n1,2e-1\n3,4.5\n-5,6\n").unwrap();
        let r = load_recording_csv(&p, 1000.0, 1, "s1", "x").unwrap();
        assert_eq!((r.channel_count(), r.len()), (2, 3));
        assert_eq!(r.channels[[1, 0]], 0.2);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "1,2\n3,4,5\n").unwrap();
        let err = load_recording_csv(&p, 1000.0, 0, "s", "a").unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");

        std::fs::write(&p, "1,2\n3,abc\n").unwrap();
        let err = load_recording_csv(&p, 1000.0, 0, "s", "a").unwrap_err().to_string();
        assert!(err.contains("row 2 column 2"), "{err}");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let r = rec(array![[0.1, 1e-300, -3.25], [2.0 / 3.0, 7.0, 1e12]], 500.0);
        write_recording_csv(&r, &p).unwrap();
        let back = load_recording_csv(&p, 500.0, 0, "s", "a").unwrap();
        assert_eq!(back.channels, r.channels);
    }

    #[test]
    fn clip_examples() {
        let r = rec(Array2::zeros((2, 1000)), 1000.0);
        assert_eq!(clip_recording(&r, 100.0, 100.0).unwrap().len(), 800);
        assert_eq!(clip_recording(&r, 0.0, 0.0).unwrap(), r);
        let short = rec(Array2::zeros((1, 100)), 1000.0);
        assert!(matches!(clip_recording(&short, 60.0, 60.0), Err(Error::EmptySignal(_))));
    }

    #[test]
    fn moving_average_examples() {
        let constant = rec(Array2::from_elem((1, 30), 5.0), 1000.0);
        assert_eq!(moving_average(&constant, 10).unwrap(), constant);

        let p = 12;
        let mut impulse = Array2::zeros((1, 40));
        impulse[[0, p]] = 1.0;
        let out = moving_average(&rec(impulse.clone(), 1000.0), 10).unwrap();
        for t in 0..40 {
            let expected = if (p..p + 10).contains(&t) { 0.1 } else { 0.0 };
            assert_abs_diff_eq!(out.channels[[0, t]], expected, epsilon = 1e-15);
        }

        let r = rec(impulse, 1000.0);
        assert_eq!(moving_average(&r, 1).unwrap(), r);
        assert!(moving_average(&r, 0).is_err());
    }

    #[test]
    fn moving_average_warm_up_uses_available_points() {
        let r = rec(array![[2.0, 4.0, 6.0, 8.0]], 1000.0);
        let out = moving_average(&r, 3).unwrap();
        assert_eq!(out.channels.row(0).to_vec(), vec![2.0, 3.0, 4.0, 6.0]);
    }

    #[test]
    fn min_max_examples() {
        let out = min_max_normalize(&rec(array![[2.0, 4.0, 6.0]], 1000.0));
        assert_eq!(out.channels.row(0).to_vec(), vec![0.0, 0.5, 1.0]);
        let out = min_max_normalize(&rec(array![[7.0, 7.0, 7.0]], 1000.0));
        assert_eq!(out.channels.row(0).to_vec(), vec![0.0; 3]);
        let out = min_max_normalize(&rec(array![[0.0, 10.0], [5.0, 5.0]], 1000.0));
        assert_eq!(out.channels, array![[0.0, 1.0], [0.0, 0.0]]);
    }

    #[test]
    fn window_examples() {
        let r = rec(Array2::zeros((2, 1000)), 1000.0);
        let w = slide_windows(&r, 150.0, 1.0).unwrap();
        assert_eq!(w.len(), 851);
        assert!(w.iter().all(|s| s.features.dim() == (2, 150)));
        let exact = rec(Array2::zeros((2, 150)), 1000.0);
        assert_eq!(slide_windows(&exact, 150.0, 1.0).unwrap().len(), 1);
        let short = rec(Array2::zeros((2, 100)), 1000.0);
        assert!(matches!(
            slide_windows(&short, 150.0, 1.0),
            Err(Error::WindowTooLong { window: 150, len: 100 })
        ));
    }

    #[test]
    fn windows_copy_the_right_span() {
        let r = rec(Array2::from_shape_fn((1, 10), |(_, t)| t as f64), 1000.0);
        let w = slide_windows(&r, 4.0, 3.0).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].features.row(0).to_vec(), vec![6.0, 7.0, 8.0, 9.0]);
        assert_eq!(w[2].start, 6);
    }

    proptest! {
        #[test]
        fn window_count_matches_closed_form(len in 1usize..600, w in 1usize..200, stride in 1usize..40) {
            prop_assume!(w <= len);
            let r = rec(Array2::zeros((1, len)), 1000.0);
            let got = slide_windows(&r, w as f64, stride as f64).unwrap().len();
            prop_assert_eq!(got, (len - w) / stride + 1);
        }

        #[test]
        fn smoothing_never_amplifies(xs in proptest::collection::vec(-1e3f64..1e3, 1..200), win in 1usize..20) {
            let r = rec(Array2::from_shape_vec((1, xs.len()), xs.clone()).unwrap(), 1000.0);
            let out = moving_average(&r, win).unwrap();
            let max_in = xs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for &v in out.channels.iter() {
                prop_assert!(v.abs() <= max_in * (1.0 + 1e-12) + 1e-9);
            }
        }

        #[test]
        fn normalized_values_stay_in_unit_interval(xs in proptest::collection::vec(-1e6f64..1e6, 1..100)) {
            let r = rec(Array2::from_shape_vec((1, xs.len()), xs).unwrap(), 1000.0);
            let out = min_max_normalize(&r);
            prop_assert!(out.channels.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
