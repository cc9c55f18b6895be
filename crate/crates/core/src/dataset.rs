//! Segment CSV ingestion, label binarization, seeded splitting and the
//! synthetic surrogate used when the real recordings are unavailable.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::SEGMENT_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Real,
    Synthetic,
}

/// EEG segments (one row per one-second window) with binary labels.
///
/// `raw_labels` keeps the original 1..=5 class so a subset can be written
/// back out in the input format.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub raw_labels: Vec<u8>,
    pub source: Source,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            raw_labels: idx.iter().map(|&i| self.raw_labels[i]).collect(),
            source: self.source,
        }
    }

    /// Write in the distributed layout: header, id column, features, label.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let width = self.features.first().map_or(SEGMENT_LEN, Vec::len);
        let mut line = String::from("id");
        for j in 1..=width {
            line.push_str(&format!(",X{j}"));
        }
        line.push_str(",y\n");
        w.write_all(line.as_bytes())?;
        for (i, (row, y)) in self.features.iter().zip(&self.raw_labels).enumerate() {
            line.clear();
            line.push_str(&format!("S{i}"));
            for x in row {
                line.push_str(&format!(",{x}"));
            }
            line.push_str(&format!(",{y}\n"));
            w.write_all(line.as_bytes())?;
        }
        w.flush()
    }
}

/// Seizure (class 1) maps to 1, every other class to 0.
pub fn binarize_label(raw: i64) -> Result<u8> {
    match raw {
        1 => Ok(1),
        2..=5 => Ok(0),
        _ => Err(Error::Label(raw)),
    }
}

fn parse_label(field: &str) -> Option<i64> {
    let field = field.trim();
    field.parse::<i64>().ok().or_else(|| {
        field
            .parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && v.abs() < 1e9)
            .map(|v| v as i64)
    })
}

/// Load a segment CSV: 178 numeric features plus a trailing 1..=5 label per
/// row. A header row and a leading id column are detected and skipped.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if i == 0 && rec.iter().next_back().and_then(parse_label).is_none() {
            continue;
        }
        let skip = match rec.len() {
            n if n == SEGMENT_LEN + 1 => 0,
            n if n == SEGMENT_LEN + 2 => 1,
            n => {
                return Err(Error::Row {
                    row,
                    message: format!(
                        "expected {} features plus a label, found {} fields",
                        SEGMENT_LEN, n
                    ),
                })
            }
        };
        let mut values = Vec::with_capacity(SEGMENT_LEN);
        for (j, field) in rec.iter().skip(skip).take(SEGMENT_LEN).enumerate() {
            let v = field
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Row {
                    row,
                    message: format!("feature {} is not a finite number: `{}`", j + 1, field),
                })?;
            values.push(v);
        }
        let last = rec.iter().next_back().unwrap_or_default();
        let raw = parse_label(last).ok_or_else(|| Error::Row {
            row,
            message: format!("label `{last}` is not an integer"),
        })?;
        binarize_label(raw).map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        features.push(values);
        raw_labels.push(raw as u8);
    }
    if features.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    let labels = raw_labels.iter().map(|&r| u8::from(r == 1)).collect();
    Ok(Dataset {
        features,
        labels,
        raw_labels,
        source: Source::Real,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 42,
            stratified: true,
        }
    }
}

fn round_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Seeded partition into (train, test). Rows keep their original relative
/// order inside each partition.
pub fn split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::config(
            "train_fraction",
            format!("must lie strictly between 0 and 1, got {}", spec.train_fraction),
        ));
    }
    if d.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_train = round_count(spec.train_fraction, d.len());

    let mut train_idx = if spec.stratified {
        let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
            (0..d.len()).partition(|&i| d.labels[i] == 1);
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::Data(
                "stratified split needs both classes present".into(),
            ));
        }
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let pos_train = round_count(spec.train_fraction, pos.len());
        let neg_train = n_train.saturating_sub(pos_train).min(neg.len());
        let mut idx = pos[..pos_train].to_vec();
        idx.extend_from_slice(&neg[..neg_train]);
        idx
    } else {
        let mut all: Vec<usize> = (0..d.len()).collect();
        all.shuffle(&mut rng);
        all.truncate(n_train);
        all
    };
    train_idx.sort_unstable();

    let mut in_train = vec![false; d.len()];
    for &i in &train_idx {
        in_train[i] = true;
    }
    let test_idx: Vec<usize> = (0..d.len()).filter(|&i| !in_train[i]).collect();
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Data(format!(
            "split of {} rows at fraction {} leaves an empty partition",
            d.len(),
            spec.train_fraction
        )));
    }
    Ok((d.subset(&train_idx), d.subset(&test_idx)))
}

const SAMPLE_RATE: f64 = 178.0;

fn background(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(1.0..40.0),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    let norm = (comps.iter().map(|c| c.2 * c.2).sum::<f64>() / 2.0).sqrt();
    (0..SEGMENT_LEN)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE;
            let tone: f64 = comps
                .iter()
                .map(|&(f, ph, a)| a * (2.0 * PI * f * t + ph).sin())
                .sum();
            tone / norm + rng.gen_range(-0.3..0.3)
        })
        .collect()
}

/// Spike-and-wave discharge: a slow wave of amplitude ~10 with a sharp spike
/// of height ~20 once per cycle.
fn spike_train(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let freq = rng.gen_range(2.5..4.0);
    let phase = rng.gen_range(0.0..1.0);
    let wave_amp = rng.gen_range(10.0..14.0);
    let spike_amp = rng.gen_range(18.0..26.0);
    let period = SAMPLE_RATE / freq;
    (0..SEGMENT_LEN)
        .map(|i| {
            let cycle = i as f64 / period + phase;
            let slow = -wave_amp * (2.0 * PI * cycle).cos();
            let offset = (cycle - cycle.round()) * period;
            let spike = spike_amp * (-0.5 * (offset / 1.5).powi(2)).exp();
            slow + spike
        })
        .collect()
}

/// Separable surrogate: `n_per_class` background-only rows and as many rows
/// with a superimposed spike train, interleaved.
pub fn synthesize(n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::config("synthetic_per_class", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(2 * n_per_class);
    let mut raw_labels = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        features.push(background(&mut rng));
        raw_labels.push(5);

        let mut row = background(&mut rng);
        for (x, s) in row.iter_mut().zip(spike_train(&mut rng)) {
            *x += s;
        }
        features.push(row);
        raw_labels.push(1);
    }
    let labels = raw_labels.iter().map(|&r| u8::from(r == 1)).collect();
    Ok(Dataset {
        features,
        labels,
        raw_labels,
        source: Source::Synthetic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_line(id: Option<&str>, value: f64, n: usize, label: &str) -> String {
        let mut s = id.map(|i| format!("{i},")).unwrap_or_default();
        for _ in 0..n {
            s.push_str(&format!("{value},"));
        }
        s.push_str(label);
        s
    }

    #[test]
    fn binarize() {
        assert_eq!(binarize_label(1).unwrap(), 1);
        assert_eq!(binarize_label(2).unwrap(), 0);
        assert_eq!(binarize_label(5).unwrap(), 0);
        assert!(binarize_label(0).is_err());
        assert!(binarize_label(6).is_err());
    }

    #[test]
    fn csv_with_header_and_ids() {
        let mut text = String::from(",");
        text.push_str(&(1..=178).map(|j| format!("X{j}")).collect::<Vec<_>>().join(","));
        text.push_str(",y\r\n");
        text.push_str(&row_line(Some("X21.V1.791"), 3.0, 178, "1"));
        text.push_str("\r\n");
        text.push_str(&row_line(Some("X15.V1.924"), -7.0, 178, "3"));
        text.push('\n');
        let d = read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.raw_labels, vec![1, 3]);
        assert!(d.features.iter().all(|r| r.len() == 178));
        assert_eq!(d.features[1][0], -7.0);
    }

    #[test]
    fn csv_bare_rows() {
        let text = format!("{}\n{}\n", row_line(None, 1.5, 178, "5"), row_line(None, 2.0, 178, "1"));
        let d = read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.labels, vec![0, 1]);
        assert_eq!(d.source, Source::Real);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let text = format!("{}\n{}\n", row_line(None, 1.0, 178, "1"), row_line(None, 1.0, 177, "1"));
        match read_csv(text.as_bytes()) {
            Err(Error::Row { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{}\n{}\n", row_line(None, 1.0, 178, "1"), row_line(None, 1.0, 178, "7"));
        assert!(matches!(read_csv(text.as_bytes()), Err(Error::Row { row: 2, .. })));
        let mut bad = row_line(None, 1.0, 178, "2");
        bad = bad.replacen("1,", "abc,", 1);
        let text = format!("{}\n{}\n", row_line(None, 1.0, 178, "1"), bad);
        assert!(matches!(read_csv(text.as_bytes()), Err(Error::Row { row: 2, .. })));
        assert!(matches!(load_csv("/nonexistent/x.csv"), Err(Error::Io { .. })));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = synthesize(5, 1).unwrap();
        let spec = SplitSpec {
            train_fraction: 0.8,
            seed: 9,
            stratified: false,
        };
        let (a_tr, a_te) = split(&d, &spec).unwrap();
        let (b_tr, b_te) = split(&d, &spec).unwrap();
        assert_eq!(a_tr.len(), 8);
        assert_eq!(a_te.len(), 2);
        assert_eq!(a_tr, b_tr);
        assert_eq!(a_te, b_te);
    }

    #[test]
    fn split_rejects_bad_input() {
        let d = synthesize(5, 1).unwrap();
        for f in [0.0, 1.0, 1.5, -0.1] {
            let spec = SplitSpec {
                train_fraction: f,
                ..SplitSpec::default()
            };
            assert!(matches!(split(&d, &spec), Err(Error::Config { .. })));
        }
        let one_class = d.subset(&[0, 2, 4, 6]);
        assert!(split(&one_class, &SplitSpec::default()).is_err());
    }

    #[test]
    fn synthesize_counts_and_determinism() {
        let a = synthesize(100, 7).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a.n_positive(), 100);
        assert_eq!(a.source, Source::Synthetic);
        let b = synthesize(100, 7).unwrap();
        assert_eq!(a, b);
        assert!(synthesize(0, 7).is_err());
    }

    #[test]
    fn write_then_read_preserves_rows() {
        let d = synthesize(3, 2).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = read_csv(&buf[..]).unwrap();
        assert_eq!(back.features, d.features);
        assert_eq!(back.labels, d.labels);
    }
}
