//! Synthetic sequence data and clip segmentation.
//!
//! Each class is a helix in `frame_dim` dimensions; a sequence is a run of
//! equally spaced points along its class helix plus Gaussian noise. Clips are
//! overlapping fixed-length windows flattened frame by frame.

use std::fs::File;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::SeedStreams;

/// One labelled sequence of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub id: usize,
    pub label: usize,
    /// T × d_frame, in temporal order.
    pub frames: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub seqs_per_class: usize,
    /// Frames per sequence.
    pub frames: usize,
    pub frame_dim: usize,
    pub noise_std: f64,
    /// Scale of the class centres.
    pub separation: f64,
    /// Curve-parameter increment between consecutive frames.
    pub step: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 5,
            seqs_per_class: 40,
            frames: 48,
            frame_dim: 4,
            noise_std: 0.3,
            separation: 1.0,
            step: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.seqs_per_class == 0 || self.frames == 0 || self.frame_dim == 0
        {
            return Err(Error::Config("data counts must all be at least 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("data.noise_std must be finite and >= 0".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config("data.separation must be finite and >= 0".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config("data.step must be positive".into()));
        }
        Ok(())
    }
}

/// `c + r·cos(ωt)·a₀ + r·sin(ωt)·a₁ + p·t·a₂` with orthonormal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCurve {
    pub center: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
    pub radius: f64,
    pub frequency: f64,
    pub pitch: f64,
}

impl ClassCurve {
    fn random<R: Rng>(dim: usize, separation: f64, rng: &mut R) -> Self {
        let center = (0..dim)
            .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut axes: Vec<Vec<f64>> = Vec::new();
        while axes.len() < dim.min(3) {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            for a in &axes {
                let p = dot(&v, a);
                for (x, y) in v.iter_mut().zip(a) {
                    *x -= p * y;
                }
            }
            let n = dot(&v, &v).sqrt();
            if n > 1e-6 {
                axes.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        Self {
            center,
            axes,
            radius: rng.random_range(1.0..2.0),
            frequency: rng.random_range(0.7..1.3),
            pitch: rng.random_range(0.2..0.5),
        }
    }

    pub fn point(&self, t: f64) -> Vec<f64> {
        let coeffs = [
            self.radius * (self.frequency * t).cos(),
            self.radius * (self.frequency * t).sin(),
            self.pitch * t,
        ];
        let mut p = self.center.clone();
        for (axis, c) in self.axes.iter().zip(coeffs) {
            for (x, a) in p.iter_mut().zip(axis) {
                *x += c * a;
            }
        }
        p
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticManifold {
    pub curves: Vec<ClassCurve>,
    pub sequences: Vec<SequenceSample>,
    /// Curve parameter of each sequence's first frame.
    pub start_params: Vec<f64>,
    pub step: f64,
}

/// Generates `num_classes × seqs_per_class` sequences, class-major, ids in order.
pub fn gen_synthetic_manifold(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticManifold> {
    spec.validate()?;
    let streams = SeedStreams::new(seed);
    let mut curve_rng = streams.stream("curves");
    let curves: Vec<ClassCurve> = (0..spec.num_classes)
        .map(|_| ClassCurve::random(spec.frame_dim, spec.separation, &mut curve_rng))
        .collect();

    let mut rng = streams.stream("sequences");
    let mut sequences = Vec::with_capacity(spec.num_classes * spec.seqs_per_class);
    let mut start_params = Vec::with_capacity(sequences.capacity());
    for (label, curve) in curves.iter().enumerate() {
        for _ in 0..spec.seqs_per_class {
            let t0 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut data = Vec::with_capacity(spec.frames * spec.frame_dim);
            for j in 0..spec.frames {
                let p = curve.point(t0 + j as f64 * spec.step);
                for x in p {
                    let e: f64 = rng.sample(StandardNormal);
                    data.push(x + spec.noise_std * e);
                }
            }
            sequences.push(SequenceSample {
                id: sequences.len(),
                label,
                frames: Matrix::new(spec.frames, spec.frame_dim, data)?,
            });
            start_params.push(t0);
        }
    }
    Ok(SyntheticManifold {
        curves,
        sequences,
        start_params,
        step: spec.step,
    })
}

/// Start frames of all full windows: `0, s, 2s, …` with `s = clip_len − overlap`.
pub fn clip_starts(frames: usize, clip_len: usize, overlap: usize) -> Result<Vec<usize>> {
    if clip_len == 0 || overlap >= clip_len {
        return Err(Error::input(format!(
            "need clip_len > overlap >= 0, got clip_len {clip_len}, overlap {overlap}"
        )));
    }
    if frames < clip_len {
        return Err(Error::input(format!(
            "sequence has {frames} frames, shorter than a {clip_len}-frame clip"
        )));
    }
    let stride = clip_len - overlap;
    Ok((0..=frames - clip_len).step_by(stride).collect())
}

/// Overlapping windows of a sequence, each flattened row-major to `clip_len·d_frame` values.
pub fn clip_sequence(seq: &SequenceSample, clip_len: usize, overlap: usize) -> Result<Vec<Vec<f64>>> {
    let d = seq.frames.cols();
    Ok(clip_starts(seq.frames.rows(), clip_len, overlap)?
        .into_iter()
        .map(|s| seq.frames.data()[s * d..(s + clip_len) * d].to_vec())
        .collect())
}

/// Clips from many sequences with their bookkeeping, rows aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipBatch {
    pub clips: Matrix,
    pub labels: Vec<usize>,
    pub source_ids: Vec<usize>,
    pub clip_index: Vec<usize>,
}

impl ClipBatch {
    pub fn from_sequences(seqs: &[SequenceSample], clip_len: usize, overlap: usize) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        let mut source_ids = Vec::new();
        let mut clip_index = Vec::new();
        for seq in seqs {
            for (i, clip) in clip_sequence(seq, clip_len, overlap)?.into_iter().enumerate() {
                rows.push(clip);
                labels.push(seq.label);
                source_ids.push(seq.id);
                clip_index.push(i);
            }
        }
        if rows.is_empty() {
            return Ok(Self {
                clips: Matrix::zeros(0, 0),
                labels,
                source_ids,
                clip_index,
            });
        }
        Ok(Self {
            clips: Matrix::from_rows(&rows)?,
            labels,
            source_ids,
            clip_index,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            clips: self.clips.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            source_ids: rows.iter().map(|&r| self.source_ids[r]).collect(),
            clip_index: rows.iter().map(|&r| self.clip_index[r]).collect(),
        }
    }
}

/// Writes sequences as CSV: `id,label,frame_index,v0,…` one row per frame.
pub fn write_sequences_csv(path: &Path, seqs: &[SequenceSample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let d = seqs.first().map_or(0, |s| s.frames.cols());
    let mut header = vec!["id".to_string(), "label".into(), "frame_index".into()];
    header.extend((0..d).map(|k| format!("v{k}")));
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for s in seqs {
        for (t, frame) in s.frames.iter_rows().enumerate() {
            let mut rec = vec![s.id.to_string(), s.label.to_string(), t.to_string()];
            rec.extend(frame.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the format written by [`write_sequences_csv`]. Rows of one sequence
/// may appear in any order; frames are sorted by `frame_index`.
pub fn read_sequences_csv(path: &Path) -> Result<Vec<SequenceSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let fmt = |line: usize, msg: String| Error::Format(format!("{}:{line}: {msg}", path.display()));
    let header = r
        .headers()
        .map_err(|e| fmt(1, e.to_string()))?
        .clone();
    if header.len() < 4 || &header[0] != "id" || &header[1] != "label" || &header[2] != "frame_index" {
        return Err(fmt(1, "header must start with id,label,frame_index and have value columns".into()));
    }
    let d = header.len() - 3;
    let mut seqs: Vec<(usize, usize, Vec<(usize, Vec<f64>)>)> = Vec::new();
    let mut index_of = std::collections::HashMap::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| fmt(line, e.to_string()))?;
        let parse_usize = |k: usize| {
            rec[k]
                .trim()
                .parse::<usize>()
                .map_err(|e| fmt(line, format!("column {}: {e}", &header[k])))
        };
        let id = parse_usize(0)?;
        let label = parse_usize(1)?;
        let frame = parse_usize(2)?;
        let values = (3..3 + d)
            .map(|k| {
                rec[k]
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| fmt(line, format!("column {} is not a finite number", &header[k])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let slot = *index_of.entry(id).or_insert_with(|| {
            seqs.push((id, label, Vec::new()));
            seqs.len() - 1
        });
        if seqs[slot].1 != label {
            return Err(fmt(line, format!("sequence {id} changes label")));
        }
        seqs[slot].2.push((frame, values));
    }
    seqs.into_iter()
        .map(|(id, label, mut frames)| {
            frames.sort_by_key(|f| f.0);
            for (expect, (got, _)) in frames.iter().enumerate() {
                if *got != expect {
                    return Err(Error::Format(format!(
                        "{}: sequence {id} is missing frame {expect}",
                        path.display()
                    )));
                }
            }
            let rows: Vec<Vec<f64>> = frames.into_iter().map(|f| f.1).collect();
            Ok(SequenceSample {
                id,
                label,
                frames: Matrix::from_rows(&rows)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: usize, d: usize) -> SequenceSample {
        SequenceSample {
            id: 0,
            label: 0,
            frames: Matrix::from_fn(frames, d, |t, k| (t * 10 + k) as f64),
        }
    }

    #[test]
    fn overlapping_clips() {
        assert_eq!(clip_starts(32, 16, 8).unwrap(), vec![0, 8, 16]);
        assert_eq!(clip_starts(16, 16, 8).unwrap(), vec![0]);
        assert_eq!(clip_starts(32, 16, 0).unwrap(), vec![0, 16]);
        assert!(clip_starts(15, 16, 8).is_err());
        assert!(clip_starts(32, 8, 8).is_err());
    }

    #[test]
    fn clips_are_flattened_frame_major() {
        let s = seq(32, 2);
        let clips = clip_sequence(&s, 16, 8).unwrap();
        assert_eq!(clips.len(), 3);
        assert_eq!(clips[1].len(), 32);
        assert_eq!(&clips[1][..4], &[80.0, 81.0, 90.0, 91.0]);
        assert_eq!(*clips[2].last().unwrap(), 311.0);
    }

    #[test]
    fn clip_coverage_never_reads_past_end() {
        for frames in 16..60 {
            let starts = clip_starts(frames, 16, 8).unwrap();
            let last = *starts.last().unwrap();
            assert!(last + 16 <= frames);
            // a further window would not fit
            assert!(last + 8 + 16 > frames);
        }
    }

    #[test]
    fn noiseless_sequences_lie_on_their_curve() {
        let spec = SyntheticSpec {
            noise_std: 0.0,
            num_classes: 3,
            seqs_per_class: 4,
            frames: 20,
            frame_dim: 5,
            ..SyntheticSpec::default()
        };
        let m = gen_synthetic_manifold(&spec, 7).unwrap();
        for (s, &t0) in m.sequences.iter().zip(&m.start_params) {
            let curve = &m.curves[s.label];
            for (j, frame) in s.frames.iter_rows().enumerate() {
                let p = curve.point(t0 + j as f64 * m.step);
                let r: f64 = frame.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(r.sqrt() < 1e-9);
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = SyntheticSpec::default();
        let a = gen_synthetic_manifold(&spec, 3).unwrap();
        let b = gen_synthetic_manifold(&spec, 3).unwrap();
        assert_eq!(a.sequences, b.sequences);
        let c = gen_synthetic_manifold(&spec, 4).unwrap();
        assert_ne!(a.sequences, c.sequences);
    }

    #[test]
    fn low_dimensional_frames() {
        let spec = SyntheticSpec {
            frame_dim: 1,
            ..SyntheticSpec::default()
        };
        let m = gen_synthetic_manifold(&spec, 1).unwrap();
        assert_eq!(m.curves[0].axes.len(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let spec = SyntheticSpec {
            num_classes: 2,
            seqs_per_class: 2,
            frames: 17,
            frame_dim: 3,
            ..SyntheticSpec::default()
        };
        let m = gen_synthetic_manifold(&spec, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_sequences_csv(&path, &m.sequences).unwrap();
        assert_eq!(read_sequences_csv(&path).unwrap(), m.sequences);
    }

    #[test]
    fn csv_reports_line_of_bad_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "id,label,frame_index,v0\n0,0,0,1.5\n0,0,1,abc\n").unwrap();
        let err = read_sequences_csv(&path).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
    }

    #[test]
    fn clip_batch_alignment() {
        let mut a = seq(24, 2);
        a.id = 5;
        a.label = 1;
        let b = seq(16, 2);
        let batch = ClipBatch::from_sequences(&[a, b], 16, 8).unwrap();
        assert_eq!(batch.len(), 3);
        assert_eq!(batch.source_ids, vec![5, 5, 0]);
        assert_eq!(batch.clip_index, vec![0, 1, 0]);
        assert_eq!(batch.labels, vec![1, 1, 0]);
        assert_eq!(batch.num_classes(), 2);
    }
}
