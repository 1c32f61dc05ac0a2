use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::evaluation::{DataError, Dataset};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: the file has no header or no data rows")]
    Empty { path: PathBuf },
    #[error("{path}: label column {column:?} is not in the header")]
    MissingLabelColumn { path: PathBuf, column: String },
    #[error("{path}: there are no feature columns besides the label")]
    NoFeatures { path: PathBuf },
    #[error("{path}: line {line}, column {column:?}: missing value")]
    MissingValue { path: PathBuf, line: u64, column: String },
    #[error("{path}: line {line}, column {column:?}: {value:?} is not a finite number")]
    NonNumeric { path: PathBuf, line: u64, column: String, value: String },
    #[error("{path}: line {line}: class {label:?} is not one of the known classes")]
    UnknownClass { path: PathBuf, line: u64, label: String },
    #[error("{path}: only one class ({class:?}) is present")]
    SingleClass { path: PathBuf, class: String },
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: DataError },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("holdout fraction must lie in (0, 0.5], got {0}")]
    Fraction(f64),
    #[error("class {class:?} has {size} samples, too few to appear in both splits")]
    ClassTooSmall { class: String, size: usize },
}

/// Reads a CSV file with a header row. Every column except the label is a
/// numeric feature. Class ids follow the order in which labels first
/// appear. `label_column = None` selects the last column.
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<Dataset, LoadError> {
    read(path, label_column, None)
}

/// Like [`load_csv`], but labels are mapped onto `classes` and any other
/// label is an error. A single present class is allowed.
pub fn load_csv_with_classes(path: &Path, label_column: Option<&str>, classes: &[String]) -> Result<Dataset, LoadError> {
    read(path, label_column, Some(classes))
}

fn read(path: &Path, label_column: Option<&str>, known: Option<&[String]>) -> Result<Dataset, LoadError> {
    let csv_err = |source| LoadError::Csv { path: path.into(), source };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(LoadError::Empty { path: path.into() });
    }
    let label_idx = match label_column {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LoadError::MissingLabelColumn { path: path.into(), column: name.into() })?,
        None => header.len() - 1,
    };
    if header.len() < 2 {
        return Err(LoadError::NoFeatures { path: path.into() });
    }
    let feature_names: Vec<String> =
        header.iter().enumerate().filter(|&(j, _)| j != label_idx).map(|(_, h)| h.clone()).collect();

    let mut class_names: Vec<String> = known.map(<[String]>::to_vec).unwrap_or_default();
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        for (j, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(LoadError::MissingValue { path: path.into(), line, column: header[j].clone() });
            }
            if j == label_idx {
                let id = match class_names.iter().position(|c| c == cell) {
                    Some(id) => id,
                    None if known.is_some() => {
                        return Err(LoadError::UnknownClass { path: path.into(), line, label: cell.into() })
                    }
                    None => {
                        class_names.push(cell.into());
                        class_names.len() - 1
                    }
                };
                labels.push(id);
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => {
                        return Err(LoadError::NonNumeric {
                            path: path.into(),
                            line,
                            column: header[j].clone(),
                            value: cell.into(),
                        })
                    }
                }
            }
        }
    }
    if labels.is_empty() {
        return Err(LoadError::Empty { path: path.into() });
    }
    if known.is_none() && class_names.len() == 1 {
        return Err(LoadError::SingleClass { path: path.into(), class: class_names.remove(0) });
    }
    let features = Array2::from_shape_vec((labels.len(), feature_names.len()), values)
        .expect("every record has one value per feature column");
    Dataset::new(features, labels, class_names, feature_names).map_err(|source| LoadError::Data { path: path.into(), source })
}

/// Writes the features followed by a label column holding class names.
/// Values are written in their shortest exact decimal form.
pub fn write_csv(d: &Dataset, path: &Path, label_column: &str) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = d.feature_names.iter().map(String::as_str).collect();
    header.push(label_column);
    w.write_record(&header)?;
    for (row, &label) in d.features.rows().into_iter().zip(&d.labels) {
        let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        record.push(d.class_names[label].clone());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Row indices of a stratified split, each set ascending.
///
/// The test set holds `round(n * fraction)` rows, shared among the classes
/// in proportion to their sizes by largest remainder (ties to the lower
/// class id). Which rows go to the test set is drawn from `rng`.
pub fn holdout_indices<R: Rng + ?Sized>(
    d: &Dataset,
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>), SplitError> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(SplitError::Fraction(fraction));
    }
    let n = d.n_samples();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); d.n_classes()];
    for (i, &c) in d.labels.iter().enumerate() {
        members[c].push(i);
    }

    let total = (n as f64 * fraction).round() as usize;
    let quotas: Vec<f64> = members.iter().map(|m| m.len() as f64 * fraction).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..members.len()).filter(|&c| !members[c].is_empty()).collect();
    by_remainder.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let assigned: usize = counts.iter().sum();
    for &c in by_remainder.iter().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }

    let mut train = Vec::with_capacity(n - total);
    let mut test = Vec::with_capacity(total);
    for (c, m) in members.iter_mut().enumerate() {
        if m.is_empty() {
            continue;
        }
        if counts[c] == 0 || counts[c] >= m.len() {
            return Err(SplitError::ClassTooSmall { class: d.class_names[c].clone(), size: m.len() });
        }
        m.shuffle(rng);
        test.extend_from_slice(&m[..counts[c]]);
        train.extend_from_slice(&m[counts[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified train/test split; see [`holdout_indices`].
pub fn holdout_split<R: Rng + ?Sized>(d: &Dataset, fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset), SplitError> {
    let (train, test) = holdout_indices(d, fraction, rng)?;
    Ok((d.subset(&train), d.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::fs;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("d.csv");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn four_rows_two_classes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "f1,f2,label\n1,2,a\n3,4,b\n5,6,a\n7,8,b\n");
        let d = load_csv(&p, Some("label")).unwrap();
        assert_eq!(d.class_names, vec!["a", "b"]);
        assert_eq!(d.labels, vec![0, 1, 0, 1]);
        assert_eq!(d.features.dim(), (4, 2));
        assert_eq!(d.features[[2, 1]], 6.0);
        assert_eq!(load_csv(&p, None).unwrap(), d);
    }

    #[test]
    fn label_column_may_be_anywhere() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "y,f1\nb,1.5\na,2.5\n");
        let d = load_csv(&p, Some("y")).unwrap();
        assert_eq!(d.class_names, vec!["b", "a"]);
        assert_eq!(d.feature_names, vec!["f1"]);
    }

    #[test]
    fn blank_cell_names_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "f1,f2,label\n1,2,a\n3,,b\n");
        let err = load_csv(&p, Some("label")).unwrap_err();
        match &err {
            LoadError::MissingValue { line, column, .. } => assert_eq!((*line, column.as_str()), (3, "f2")),
            e => panic!("{e}"),
        }
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn other_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "f1,label\n1,a\nx,b\n");
        assert!(matches!(load_csv(&p, Some("label")), Err(LoadError::NonNumeric { line: 3, .. })));
        let p = write(dir.path(), "f1,label\n1,a\nNaN,b\n");
        assert!(matches!(load_csv(&p, Some("label")), Err(LoadError::NonNumeric { .. })));
        let p = write(dir.path(), "f1,label\n1,a\n2,a\n");
        assert!(matches!(load_csv(&p, Some("label")), Err(LoadError::SingleClass { .. })));
        assert!(matches!(load_csv(&p, Some("class")), Err(LoadError::MissingLabelColumn { .. })));
        let p = write(dir.path(), "");
        assert!(matches!(load_csv(&p, None), Err(LoadError::Empty { .. })));
        let p = write(dir.path(), "f1,label\n");
        assert!(matches!(load_csv(&p, None), Err(LoadError::Empty { .. })));
        let p = write(dir.path(), "f1,label\n1,a\n2,c\n");
        let known = ["a".to_string(), "b".to_string()];
        assert!(matches!(load_csv_with_classes(&p, None, &known), Err(LoadError::UnknownClass { line: 3, .. })));
    }

    #[test]
    fn stratified_counts() {
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let d = Dataset::new(
            Array2::zeros((300, 1)),
            labels,
            vec!["a".into(), "b".into(), "c".into()],
            vec!["f".into()],
        )
        .unwrap();
        let (train, test) = holdout_split(&d, 1.0 / 3.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(test.n_samples(), 100);
        assert_eq!(train.n_samples(), 200);
        let per: Vec<usize> = (0..3).map(|c| test.labels.iter().filter(|&&l| l == c).count()).collect();
        assert_eq!(per, vec![34, 33, 33]);
    }

    #[test]
    fn class_too_small_and_bad_fraction() {
        let d = Dataset::new(
            Array2::zeros((5, 1)),
            vec![0, 0, 0, 0, 1],
            vec!["a".into(), "b".into()],
            vec!["f".into()],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(holdout_split(&d, 0.5, &mut rng), Err(SplitError::ClassTooSmall { .. })));
        assert_eq!(holdout_split(&d, 0.7, &mut rng).unwrap_err(), SplitError::Fraction(0.7));
    }
}
