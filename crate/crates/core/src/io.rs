//! File formats (datasets, labels, trained models), and deterministic
//! synthetic data generators for the change-point experiments.
//!
//! Datasets are plain text tables: a header row naming the columns, then one
//! whitespace-separated row of numbers per item. Labels and models are JSON.
//! All floats are written in shortest round-trip form, so files are
//! byte-identical across runs and models reload to bit-identical values.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dp::SequentialConstraints;
use crate::error::{Error, Result};
use crate::hermite::HermiteConfig;
use crate::metric::{KMode, Metric, MetricModel, Task};
use crate::partition::Partition;

pub fn write_dataset(path: impl AsRef<Path>, x: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for p in 0..x.ncols() {
        if p > 0 {
            out.push(' ');
        }
        out.push_str(&format!("f{p}"));
    }
    out.push('\n');
    for i in 0..x.nrows() {
        for p in 0..x.ncols() {
            if p > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{}", x[(i, p)]));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(&path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))?;
    let cols = header.split_whitespace().count();
    if cols == 0 {
        return Err(Error::Parse("dataset header names no columns".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != cols {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {cols}",
                lineno + 2,
                fields.len()
            )));
        }
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::Parse(format!("bad number '{f}' on row {}", lineno + 2)))?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("non-finite value on row {}", lineno + 2)));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse("dataset has no data rows".into()));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

#[derive(Serialize, Deserialize)]
struct ConstraintsJson {
    forced_breaks: Vec<usize>,
    forbidden_intervals: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct LabelsJson {
    #[serde(rename = "type")]
    kind: String,
    labels: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    constraints: Option<ConstraintsJson>,
}

pub fn write_labels(
    path: impl AsRef<Path>,
    p: &Partition,
    constraints: Option<&SequentialConstraints>,
) -> Result<()> {
    let json = LabelsJson {
        kind: if p.is_sequential() {
            "sequential".into()
        } else {
            "cluster".into()
        },
        labels: p.labels().to_vec(),
        constraints: constraints.map(|c| ConstraintsJson {
            forced_breaks: c.forced_breaks.clone(),
            forbidden_intervals: c.forbidden_intervals.clone(),
        }),
    };
    let text = serde_json::to_string_pretty(&json)
        .map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_labels(
    path: impl AsRef<Path>,
) -> Result<(Partition, Option<SequentialConstraints>)> {
    let text = std::fs::read_to_string(&path)?;
    let json: LabelsJson =
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let sequential = match json.kind.as_str() {
        "sequential" => true,
        "cluster" => false,
        other => {
            return Err(Error::Parse(format!(
                "unknown label type '{other}' (expected 'sequential' or 'cluster')"
            )))
        }
    };
    let partition = Partition::new(json.labels, sequential)
        .map_err(|e| Error::Parse(format!("invalid labels: {e}")))?;
    let constraints = json.constraints.map(|c| SequentialConstraints {
        forced_breaks: c.forced_breaks,
        forbidden_intervals: c.forbidden_intervals,
        min_segment_len: 0,
    });
    Ok((partition, constraints))
}

/// Training provenance stored alongside a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub iterations: usize,
    pub final_objective: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct HermiteJson {
    order: usize,
    sigma: f64,
    standardize: bool,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    kind: String,
    task: String,
    k_mode: String,
    dim: usize,
    /// Row-major entries of the full matrix, or the diagonal.
    values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hermite: Option<HermiteJson>,
    metadata: ModelMetadata,
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Changepoint => "changepoint",
        Task::Cluster => "cluster",
        Task::Ncuts => "ncuts",
    }
}

fn parse_task(s: &str) -> Result<Task> {
    match s {
        "changepoint" => Ok(Task::Changepoint),
        "cluster" => Ok(Task::Cluster),
        "ncuts" => Ok(Task::Ncuts),
        other => Err(Error::Parse(format!("unknown task '{other}'"))),
    }
}

fn k_mode_name(mode: KMode) -> String {
    match mode {
        KMode::Known(k) => format!("known:{k}"),
        KMode::Penalized => "penalized".into(),
    }
}

pub fn parse_k_mode(s: &str) -> Result<KMode> {
    if s == "penalized" {
        return Ok(KMode::Penalized);
    }
    if let Some(k) = s.strip_prefix("known:") {
        let k: usize = k
            .parse()
            .map_err(|_| Error::Parse(format!("bad cluster count in mode '{s}'")))?;
        if k == 0 {
            return Err(Error::Parse("cluster count must be positive".into()));
        }
        return Ok(KMode::Known(k));
    }
    Err(Error::Parse(format!(
        "unknown mode '{s}' (expected 'penalized' or 'known:K')"
    )))
}

pub fn save_model(
    path: impl AsRef<Path>,
    model: &MetricModel,
    metadata: &ModelMetadata,
) -> Result<()> {
    let (kind, values) = match &model.metric {
        Metric::Full(b) => (
            "full".to_string(),
            b.row_iter()
                .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
                .collect(),
        ),
        Metric::Diagonal(b) => ("diagonal".to_string(), b.iter().copied().collect()),
    };
    let json = ModelJson {
        kind,
        task: task_name(model.task).to_string(),
        k_mode: k_mode_name(model.k_mode),
        dim: model.metric.dim(),
        values,
        hermite: model.hermite.map(|h| HermiteJson {
            order: h.order,
            sigma: h.sigma,
            standardize: h.standardize,
        }),
        metadata: metadata.clone(),
    };
    let text =
        serde_json::to_string_pretty(&json).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(MetricModel, ModelMetadata)> {
    let text = std::fs::read_to_string(&path)?;
    let json: ModelJson =
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let metric = match json.kind.as_str() {
        "full" => {
            if json.values.len() != json.dim * json.dim {
                return Err(Error::Parse("matrix entry count does not match dim".into()));
            }
            Metric::Full(DMatrix::from_row_slice(json.dim, json.dim, &json.values))
        }
        "diagonal" => {
            if json.values.len() != json.dim {
                return Err(Error::Parse("diagonal entry count does not match dim".into()));
            }
            Metric::Diagonal(DVector::from_vec(json.values))
        }
        other => return Err(Error::Parse(format!("unknown metric kind '{other}'"))),
    };
    let mut model = MetricModel::new(metric, parse_task(&json.task)?, parse_k_mode(&json.k_mode)?);
    if let Some(h) = json.hermite {
        model.hermite = Some(HermiteConfig {
            order: h.order,
            sigma: h.sigma,
            standardize: h.standardize,
        });
        if h.order == 0 || !(h.sigma > 0.0) {
            return Err(Error::Parse("invalid hermite configuration".into()));
        }
    }
    Ok((model, json.metadata))
}

/// Settings of the multivariate change-point generator.
#[derive(Debug, Clone)]
pub struct SynthChangepointConfig {
    pub dims: usize,
    pub length: usize,
    /// Leading dimensions that share the ground-truth segmentation; the
    /// remaining dimensions get independent distractor segmentations.
    pub relevant: usize,
    /// Inclusive range the segment count is drawn from.
    pub k_range: (usize, usize),
    /// Standard deviation of the additive observation noise.
    pub noise: f64,
    pub min_segment_len: usize,
}

impl Default for SynthChangepointConfig {
    fn default() -> Self {
        SynthChangepointConfig {
            dims: 30,
            length: 200,
            relevant: 3,
            k_range: (3, 6),
            noise: 0.5,
            min_segment_len: 5,
        }
    }
}

fn random_segmentation(
    length: usize,
    k_range: (usize, usize),
    min_seg: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let (lo, hi) = k_range;
    if lo == 0 || lo > hi || hi * min_seg.max(1) > length {
        return Err(Error::infeasible(format!(
            "cannot place {hi} segments of length >= {min_seg} in {length} items"
        )));
    }
    let k = rng.gen_range(lo..=hi);
    // rejection sampling keeps breakpoints uniform given the length floor
    loop {
        let mut cuts: Vec<usize> = (0..k - 1)
            .map(|_| rng.gen_range(1..length))
            .collect();
        cuts.sort_unstable();
        cuts.dedup();
        if cuts.len() != k - 1 {
            continue;
        }
        let mut bounds = vec![0];
        bounds.extend(&cuts);
        bounds.push(length);
        if bounds.windows(2).all(|w| w[1] - w[0] >= min_seg.max(1)) {
            return Ok(bounds.windows(2).map(|w| w[1] - w[0]).collect());
        }
    }
}

/// Multivariate series whose leading `relevant` dimensions share one
/// piecewise-constant mean structure; every other dimension carries its own
/// independent distractor segmentation. Deterministic for a given seed.
pub fn synth_changepoint(
    cfg: &SynthChangepointConfig,
    seed: u64,
) -> Result<(DMatrix<f64>, Partition)> {
    if cfg.relevant > cfg.dims {
        return Err(Error::invalid("relevant dimensions exceed total dimensions"));
    }
    if cfg.relevant == 0 || cfg.length == 0 {
        return Err(Error::invalid("need at least one relevant dimension and one item"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared = random_segmentation(cfg.length, cfg.k_range, cfg.min_segment_len, &mut rng)?;
    let truth = Partition::from_segment_lengths(&shared)?;
    let mut x = DMatrix::zeros(cfg.length, cfg.dims);
    for d in 0..cfg.dims {
        let lengths = if d < cfg.relevant {
            shared.clone()
        } else {
            random_segmentation(cfg.length, cfg.k_range, cfg.min_segment_len, &mut rng)?
        };
        let mut row = 0usize;
        for len in lengths {
            let mean: f64 = StandardNormal.sample(&mut rng);
            for _ in 0..len {
                let noise: f64 = StandardNormal.sample(&mut rng);
                x[(row, d)] = mean + cfg.noise * noise;
                row += 1;
            }
        }
    }
    Ok((x, truth))
}

/// Zero-mean univariate series with piecewise-constant standard deviation,
/// one segment per entry of `stds`. Breakpoints are drawn uniformly with a
/// minimum segment length of `length / (2 * segments)`, so every segment is
/// long enough for its variance to be estimable.
pub fn synth_varchange(
    length: usize,
    stds: &[f64],
    seed: u64,
) -> Result<(Vec<f64>, Partition)> {
    let segments = stds.len();
    if segments == 0 || length < 2 * segments {
        return Err(Error::invalid("series too short for the requested segments"));
    }
    if stds.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("standard deviations must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_seg = (length / (2 * segments)).max(1);
    let lengths = random_segmentation(length, (segments, segments), min_seg, &mut rng)?;
    let truth = Partition::from_segment_lengths(&lengths)?;
    let mut series = Vec::with_capacity(length);
    for (seg, &len) in lengths.iter().enumerate() {
        for _ in 0..len {
            let v: f64 = StandardNormal.sample(&mut rng);
            series.push(stds[seg] * v);
        }
    }
    Ok((series, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{brute_force_segment, SegmentMode};
    use crate::metric::MetricKind;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("partmetric-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn dataset_round_trip() {
        let x = DMatrix::from_row_slice(3, 2, &[1.5, -0.25, 1e-17, 3.0, 0.1 + 0.2, 7.0]);
        let path = tmp("ds.txt");
        write_dataset(&path, &x).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(x, back);

        std::fs::write(&path, "f0 f1\n1.0\n").unwrap();
        assert!(read_dataset(&path).is_err());
        std::fs::write(&path, "f0\nnan\n").unwrap();
        assert!(read_dataset(&path).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let p = Partition::from_segment_lengths(&[3, 2]).unwrap();
        let cons = SequentialConstraints {
            forced_breaks: vec![3],
            forbidden_intervals: vec![(1, 2)],
            min_segment_len: 0,
        };
        let path = tmp("labels.json");
        write_labels(&path, &p, Some(&cons)).unwrap();
        let (q, c) = read_labels(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(c.unwrap(), cons);

        std::fs::write(&path, r#"{"type":"spiral","labels":[0]}"#).unwrap();
        assert!(read_labels(&path).is_err());
        std::fs::write(&path, r#"{"type":"sequential","labels":[0,2]}"#).unwrap();
        assert!(read_labels(&path).is_err());
    }

    #[test]
    fn model_round_trip_is_bit_identical() {
        let metric = Metric::Full(DMatrix::from_row_slice(
            2,
            2,
            &[0.1 + 0.2, -1.0 / 3.0, -1.0 / 3.0, 1e-300],
        ));
        let model = MetricModel::new(metric, Task::Cluster, KMode::Known(3))
            .with_hermite(HermiteConfig::new(5).unwrap());
        let meta = ModelMetadata {
            iterations: 17,
            final_objective: 0.123456789012345678,
            seed: 99,
        };
        let path = tmp("model.json");
        save_model(&path, &model, &meta).unwrap();
        let (back, meta2) = load_model(&path).unwrap();
        assert_eq!(model, back);
        assert_eq!(meta, meta2);

        // saving the reloaded model reproduces the file byte for byte
        let path2 = tmp("model2.json");
        save_model(&path2, &back, &meta2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn parse_k_mode_forms() {
        assert_eq!(parse_k_mode("penalized").unwrap(), KMode::Penalized);
        assert_eq!(parse_k_mode("known:4").unwrap(), KMode::Known(4));
        assert!(parse_k_mode("known:0").is_err());
        assert!(parse_k_mode("fixed").is_err());
    }

    #[test]
    fn synth_changepoint_is_deterministic_and_shares_structure() {
        let cfg = SynthChangepointConfig {
            dims: 4,
            length: 60,
            relevant: 4,
            k_range: (3, 3),
            noise: 0.0,
            min_segment_len: 5,
        };
        let (x1, p1) = synth_changepoint(&cfg, 7).unwrap();
        let (x2, p2) = synth_changepoint(&cfg, 7).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(p1, p2);

        // with zero noise and all dims relevant, every dimension is
        // piecewise constant on the shared segmentation
        for d in 0..4 {
            for (i, w) in p1.labels().windows(2).enumerate() {
                if w[0] == w[1] {
                    assert!((x1[(i, d)] - x1[(i + 1, d)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn noiseless_single_dim_break_is_exactly_recoverable() {
        let cfg = SynthChangepointConfig {
            dims: 1,
            length: 12,
            relevant: 1,
            k_range: (2, 2),
            noise: 0.0,
            min_segment_len: 3,
        };
        let (x, truth) = synth_changepoint(&cfg, 3).unwrap();
        let gram = Metric::identity(MetricKind::Diagonal, 1).gram(&x).unwrap();
        let bf = brute_force_segment(&gram, SegmentMode::FixedK(2)).unwrap();
        assert_eq!(bf.partition, truth);
    }

    #[test]
    fn synth_varchange_properties() {
        let (x1, p1) = synth_varchange(400, &[1.0, 3.0], 5).unwrap();
        let (x2, p2) = synth_varchange(400, &[1.0, 3.0], 5).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(p1, p2);
        assert_eq!(p1.num_clusters(), 2);
        assert!(p1.cluster_sizes().iter().all(|&s| s >= 100));

        assert!(synth_varchange(3, &[1.0, 2.0], 0).is_err());
        assert!(synth_varchange(100, &[1.0, 0.0], 0).is_err());
    }

    #[test]
    fn infeasible_k_range_is_rejected() {
        let cfg = SynthChangepointConfig {
            dims: 1,
            length: 20,
            relevant: 1,
            k_range: (5, 5),
            noise: 0.1,
            min_segment_len: 5,
        };
        assert!(synth_changepoint(&cfg, 0).is_err());
    }
}
