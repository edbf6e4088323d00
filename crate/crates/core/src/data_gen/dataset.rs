use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Error, Result};

/// Dense row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("feature dimension must be at least 1"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(invalid("features contain NaN or infinite values"));
        }
        Ok(Self {
            dim,
            classes,
            features,
            labels,
        })
    }

    pub fn empty(dim: usize, classes: usize) -> Self {
        Self {
            dim,
            classes,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_rows(classes: usize, rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyInput)?;
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: r.len(),
            });
        }
        Self::new(dim, classes, rows.concat(), labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Rows at `indices`, in the given order. Repeated indices are allowed.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            dim: self.dim,
            classes: self.classes,
            features,
            labels,
        }
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(Error::EmptyInput)?;
        let mut out = Dataset::empty(first.dim, first.classes);
        for p in parts {
            if p.dim != first.dim {
                return Err(Error::DimensionMismatch {
                    expected: first.dim,
                    actual: p.dim,
                });
            }
            out.classes = out.classes.max(p.classes);
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }

    /// Indices of samples with label `class`, ascending.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == class)
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Random split into (train, test). The test part gets `round(n * fraction)`
    /// samples, capped so that train keeps at least one sample when n >= 2.
    pub fn split_train_test<R: Rng + ?Sized>(
        &self,
        test_fraction: f64,
        rng: &mut R,
    ) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(invalid("test fraction must be in [0, 1)"));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut n_test = (n as f64 * test_fraction).round() as usize;
        if n >= 2 {
            n_test = n_test.clamp(usize::from(test_fraction > 0.0), n - 1);
        } else {
            n_test = 0;
        }
        let (test, train) = idx.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }

    /// Writes `f0,...,f{d-1},label` CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.dim + 1);
        for (row, y) in self.rows().zip(&self.labels) {
            record.clear();
            record.extend(row.iter().map(|v| format!("{v:.16e}")));
            record.push(y.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`Dataset::write_csv`]. When `classes` is `None`
    /// the class count is `max(label) + 1`.
    pub fn read_csv<R: Read>(reader: R, classes: Option<usize>) -> Result<Dataset> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() < 2 || headers.get(headers.len() - 1) != Some("label") {
            return Err(invalid("CSV header must be f0,...,f{d-1},label"));
        }
        let dim = headers.len() - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for j in 0..dim {
                let v: f64 = rec[j]
                    .trim()
                    .parse()
                    .map_err(|_| invalid(format!("bad feature value {:?}", &rec[j])))?;
                features.push(v);
            }
            let y: usize = rec[dim]
                .trim()
                .parse()
                .map_err(|_| invalid(format!("bad label {:?}", &rec[dim])))?;
            labels.push(y);
        }
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        Dataset::new(dim, classes, features, labels)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
        let file = std::fs::File::open(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Dataset::read_csv(std::io::BufReader::new(file), classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_labels_and_non_finite() {
        assert!(Dataset::new(1, 2, vec![0.0], vec![2]).is_err());
        assert!(Dataset::new(1, 2, vec![f64::NAN], vec![0]).is_err());
        assert!(Dataset::new(2, 2, vec![0.0], vec![0]).is_err());
    }

    #[test]
    fn csv_header_and_precision() {
        let d = Dataset::new(2, 3, vec![0.1, -2.5, 1.0 / 3.0, 7.0], vec![2, 0]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("f0,f1,label\n"));
        assert!(text.contains("3.3333333333333331e-1"));
        let back = Dataset::read_csv(buf.as_slice(), Some(3)).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn split_keeps_every_row_once() {
        let d = Dataset::new(
            1,
            2,
            (0..10).map(f64::from).collect(),
            vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1],
        )
        .unwrap();
        let (train, test) = d.split_train_test(0.3, &mut seeded(1)).unwrap();
        assert_eq!(train.len(), 7);
        assert_eq!(test.len(), 3);
        let mut all: Vec<f64> = train
            .features()
            .iter()
            .chain(test.features())
            .copied()
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, d.features());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(rows in prop::collection::vec((prop::collection::vec(-1e6f64..1e6, 3), 0usize..4), 1..20)) {
            let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
            let feats: Vec<Vec<f64>> = rows.into_iter().map(|r| r.0).collect();
            let d = Dataset::from_rows(4, &feats, labels).unwrap();
            let mut buf = Vec::new();
            d.write_csv(&mut buf).unwrap();
            prop_assert_eq!(Dataset::read_csv(buf.as_slice(), Some(4)).unwrap(), d);
        }
    }
}
