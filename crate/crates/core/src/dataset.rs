//! Windowed, labeled datasets: assembly from recordings, the binary archive
//! format, and stratified fold/holdout partitioning.

use std::path::Path;

use ndarray::{s, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::seed::rng_from;
use crate::signal::{window_count, window_geometry, PipelineConfig, RawRecording};

/// Where a sample came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub subject: String,
    pub session: String,
    /// Index into [`WindowedDataset::sources`].
    pub recording: usize,
    pub start: usize,
}

/// Samples stored contiguously as an `n × N × F` array.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub features: Array3<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub label_names: Vec<String>,
    pub sample_rate_hz: f64,
    pub provenance: Vec<Provenance>,
    pub sources: Vec<String>,
    pub pipeline: PipelineConfig,
}

impl WindowedDataset {
    /// Builds a dataset from explicit arrays, checking shapes and labels.
    pub fn from_parts(features: Array3<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.len_of(Axis(0)) != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature blocks but {} labels",
                features.len_of(Axis(0)),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Label { label: bad, classes: class_count });
        }
        let provenance = (0..labels.len())
            .map(|i| Provenance { subject: String::new(), session: String::new(), recording: 0, start: i })
            .collect();
        Ok(Self {
            features,
            labels,
            class_count,
            label_names: (0..class_count).map(|c| format!("class{c}")).collect(),
            sample_rate_hz: 0.0,
            provenance,
            sources: Vec::new(),
            pipeline: PipelineConfig::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.features.len_of(Axis(1))
    }

    pub fn feature_len(&self) -> usize {
        self.features.len_of(Axis(2))
    }

    pub fn sample(&self, i: usize) -> ArrayView2<'_, f64> {
        self.features.index_axis(Axis(0), i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Copy holding only the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: indices.iter().map(|&i| self.provenance[i].clone()).collect(),
            ..self.metadata_only()
        }
    }

    /// Copy keeping only the given sensor rows, in that order.
    pub fn select_nodes(&self, nodes: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(1), nodes),
            labels: self.labels.clone(),
            provenance: self.provenance.clone(),
            ..self.metadata_only()
        }
    }

    /// Indices of samples whose subject matches.
    pub fn indices_for_subject(&self, subject: &str) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.provenance[i].subject == subject).collect()
    }

    /// Distinct subjects in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for p in &self.provenance {
            if !seen.contains(&p.subject) {
                seen.push(p.subject.clone());
            }
        }
        seen
    }

    fn metadata_only(&self) -> Self {
        Self {
            features: Array3::zeros((0, 0, 0)),
            labels: Vec::new(),
            class_count: self.class_count,
            label_names: self.label_names.clone(),
            sample_rate_hz: self.sample_rate_hz,
            provenance: Vec::new(),
            sources: self.sources.clone(),
            pipeline: self.pipeline.clone(),
        }
    }
}

/// Runs clip → smooth → normalize → window on every recording and stacks the
/// windows in recording order, then window-start order.
pub fn assemble_dataset(
    recordings: &[RawRecording],
    cfg: &PipelineConfig,
    label_names: Option<Vec<String>>,
    exec: Exec,
) -> Result<WindowedDataset> {
    let first = recordings.first().ok_or(Error::EmptyDataset)?;
    let (n, rate) = (first.channel_count(), first.sample_rate_hz);
    for r in recordings {
        if r.channel_count() != n {
            return Err(Error::Inconsistent(format!(
                "recording {:?} has {} channels, expected {n}",
                r.source,
                r.channel_count()
            )));
        }
        if r.sample_rate_hz != rate {
            return Err(Error::Inconsistent(format!(
                "recording {:?} sampled at {} Hz, expected {rate} Hz",
                r.source, r.sample_rate_hz
            )));
        }
    }
    let (w, stride) = window_geometry(rate, cfg.window_ms, cfg.stride_ms);
    if w == 0 {
        return Err(Error::Config(format!("window of {} ms is shorter than one point", cfg.window_ms)));
    }

    let conditioned = exec.map(recordings, |r| cfg.condition(r));
    let conditioned = conditioned.into_iter().collect::<Result<Vec<_>>>()?;
    let counts: Vec<usize> = conditioned
        .iter()
        .map(|r| {
            if w > r.len() {
                Err(Error::WindowTooLong { window: w, len: r.len() })
            } else {
                Ok(window_count(r.len(), w, stride))
            }
        })
        .collect::<Result<_>>()?;
    let total: usize = counts.iter().sum();

    let mut features = Array3::zeros((total, n, w));
    let mut labels = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(total);
    let mut row = 0;
    for (ri, (r, &count)) in conditioned.iter().zip(&counts).enumerate() {
        for wi in 0..count {
            let start = wi * stride;
            features
                .index_axis_mut(Axis(0), row)
                .assign(&r.channels.slice(s![.., start..start + w]));
            labels.push(r.label);
            provenance.push(Provenance {
                subject: r.subject_id.clone(),
                session: r.session_id.clone(),
                recording: ri,
                start,
            });
            row += 1;
        }
    }
    let max_label = recordings.iter().map(|r| r.label).max().unwrap_or(0);
    let class_count = label_names.as_ref().map_or(max_label + 1, |l| l.len().max(max_label + 1));
    let label_names = label_names
        .unwrap_or_default()
        .into_iter()
        .chain((0..).map(|c| format!("class{c}")))
        .enumerate()
        .map(|(i, name)| if name.is_empty() { format!("class{i}") } else { name })
        .take(class_count)
        .collect();
    Ok(WindowedDataset {
        features,
        labels,
        class_count,
        label_names,
        sample_rate_hz: rate,
        provenance,
        sources: recordings.iter().map(|r| r.source.clone()).collect(),
        pipeline: cfg.clone(),
    })
}

const ARCHIVE_MAGIC: &[u8; 8] = b"FMGDS\0v1";

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveHeader {
    sample_count: usize,
    node_count: usize,
    feature_len: usize,
    class_count: usize,
    label_names: Vec<String>,
    sample_rate_hz: f64,
    pipeline: PipelineConfig,
    sources: Vec<String>,
    provenance: Vec<Provenance>,
}

impl WindowedDataset {
    /// Serializes to the archive layout:
    ///
    /// | bytes | content |
    /// |-------|---------|
    /// | 8 | magic `FMGDS\0v1` |
    /// | 8 | header length `h`, u64 little endian |
    /// | h | UTF-8 JSON header (shapes, labels, pipeline, provenance) |
    /// | 8·n·N·F | features, f64 little endian, sample-major then node then time |
    /// | 4·n | labels, u32 little endian |
    pub fn to_archive_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&ArchiveHeader {
            sample_count: self.len(),
            node_count: self.node_count(),
            feature_len: self.feature_len(),
            class_count: self.class_count,
            label_names: self.label_names.clone(),
            sample_rate_hz: self.sample_rate_hz,
            pipeline: self.pipeline.clone(),
            sources: self.sources.clone(),
            provenance: self.provenance.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + self.features.len() * 8 + self.len() * 4);
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.features.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_archive_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("dataset archive: {m}"));
        if bytes.len() < 16 || &bytes[..8] != ARCHIVE_MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let h: ArchiveHeader = serde_json::from_slice(&bytes[16..body_start])?;
        let count = h.sample_count * h.node_count * h.feature_len;
        let expected = body_start + count * 8 + h.sample_count * 4;
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let feat_end = body_start + count * 8;
        let values: Vec<f64> = bytes[body_start..feat_end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let labels: Vec<usize> = bytes[feat_end..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let features = Array3::from_shape_vec((h.sample_count, h.node_count, h.feature_len), values)
            .map_err(|e| bad(&e.to_string()))?;
        if h.provenance.len() != h.sample_count {
            return Err(bad("provenance length does not match sample count"));
        }
        let mut ds = Self::from_parts(features, labels, h.class_count)?;
        ds.label_names = h.label_names;
        ds.sample_rate_hz = h.sample_rate_hz;
        ds.pipeline = h.pipeline;
        ds.sources = h.sources;
        ds.provenance = h.provenance;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_archive_bytes()?;
        crate::io::write_atomic(path, &bytes)?;
        Ok(crate::io::fingerprint(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the archive encoding.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(crate::io::fingerprint(&self.to_archive_bytes()?))
    }
}

/// Assignment of every sample to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_assignments: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldPlan {
    /// (training indices, test indices) for fold `fold`.
    pub fn partition(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..self.fold_assignments.len()).partition(|&i| self.fold_assignments[i] == fold);
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified k-fold plan. Each class is shuffled with the seeded generator;
/// the shuffled classes are concatenated and dealt round-robin, so fold sizes
/// and per-class fold counts each differ by at most one.
pub fn split_folds(ds: &WindowedDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if ds.len() < k {
        return Err(Error::TooFewSamples { samples: ds.len(), folds: k });
    }
    let mut assignments = vec![0; ds.len()];
    let mut slot = 0;
    for (class, members) in by_class(ds).into_iter().enumerate() {
        let mut members = members;
        members.shuffle(&mut rng_from(seed, &[0xF01D, class as u64]));
        for i in members {
            assignments[i] = slot % k;
            slot += 1;
        }
    }
    Ok(FoldPlan { fold_assignments: assignments, k, seed })
}

fn by_class(ds: &WindowedDataset) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); ds.class_count];
    for (i, &l) in ds.labels.iter().enumerate() {
        groups[l].push(i);
    }
    groups
}

/// Stratified seeded split. The overall training size is
/// `round(fraction·n)`, apportioned across classes by largest remainder and
/// kept within `[1, n_c − 1]` per class. Returns sorted index lists.
pub fn holdout_indices(ds: &WindowedDataset, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let groups = by_class(ds);
    for (class, g) in groups.iter().enumerate() {
        if !g.is_empty() && g.len() < 2 {
            return Err(Error::Stratification { class, count: g.len() });
        }
    }
    let target = (train_fraction * ds.len() as f64).round() as usize;
    let exact: Vec<f64> = groups.iter().map(|g| train_fraction * g.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).filter(|&c| !groups[c].is_empty()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = quota.iter().sum();
    for &c in order.iter().cycle().take(order.len() * 2) {
        if assigned >= target {
            break;
        }
        if quota[c] < groups[c].len() - 1 {
            quota[c] += 1;
            assigned += 1;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, g) in groups.into_iter().enumerate() {
        if g.is_empty() {
            continue;
        }
        let q = quota[class].clamp(1, g.len() - 1);
        let mut g = g;
        g.shuffle(&mut rng_from(seed, &[0x5711, class as u64]));
        train.extend_from_slice(&g[..q]);
        test.extend_from_slice(&g[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn holdout_split(ds: &WindowedDataset, train_fraction: f64, seed: u64) -> Result<(WindowedDataset, WindowedDataset)> {
    let (train, test) = holdout_indices(ds, train_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}
