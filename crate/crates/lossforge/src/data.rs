//! Synthetic datasets, CSV ingestion and the train/validation/test split.

use std::path::Path;
use std::sync::Arc;

use lossforge_core::linalg::Matrix;
use lossforge_core::trainer::Dataset;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{DatasetConfig, Normalize, SyntheticSpec};
use crate::error::{data_err, HarnessError, Result};

#[derive(Clone, Debug)]
pub struct SplitData {
    pub train: Arc<Dataset>,
    pub validation: Dataset,
    pub test: Dataset,
    /// Row indices of the source data in each split, in split order.
    pub indices: [Vec<usize>; 3],
}

/// `(train, validation, test)`: a quarter each for validation and test,
/// training gets the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let quarter = n / 4;
    (n - 2 * quarter, quarter, quarter)
}

fn split(x: &Matrix, y: &[usize], classes: usize, order: &[usize]) -> Result<SplitData> {
    let (nt, nv, _) = split_sizes(order.len());
    let parts = [order[..nt].to_vec(), order[nt..nt + nv].to_vec(), order[nt + nv..].to_vec()];
    let take = |idx: &[usize]| -> Result<Dataset> {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| x.row(i).to_vec()).collect();
        let labels = idx.iter().map(|&i| y[i]).collect();
        Ok(Dataset::new(Matrix::from_rows(&rows, x.cols())?, labels, classes)?)
    };
    let train = take(&parts[0])?;
    let validation = take(&parts[1])?;
    let test = take(&parts[2])?;
    Ok(SplitData { train: Arc::new(train), validation, test, indices: parts })
}

/// Gaussian class-conditional data. Example `i` belongs to class `i mod C`
/// before label noise, so every split is close to balanced; with
/// probability `label_noise` the label is replaced by a uniformly drawn class.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SplitData> {
    if spec.num_examples < 4 || spec.dim == 0 || spec.classes < 2 {
        return Err(data_err("synthetic data needs num_examples >= 4, dim >= 1, classes >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, c) = (spec.num_examples, spec.dim, spec.classes);
    let scale = spec.separation / (d as f64).sqrt();
    let means: Vec<Vec<f64>> = (0..c).map(|_| (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let mut x = Matrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % c;
        for (v, m) in x.row_mut(i).iter_mut().zip(&means[class]) {
            *v = m + rng.sample::<f64, _>(StandardNormal);
        }
        let noisy = rng.random::<f64>() < spec.label_noise;
        y.push(if noisy { rng.random_range(0..c) } else { class });
    }
    let order: Vec<usize> = (0..n).collect();
    split(&x, &y, c, &order)
}

/// Reads a CSV with a header row whose last column is an integer label.
/// Returns the features, labels and number of classes (`max label + 1`).
pub fn read_csv(path: &Path) -> Result<(Matrix, Vec<usize>, usize)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let width = reader.headers().map_err(|e| csv_err(path, e))?.len();
    if width < 2 {
        return Err(data_err(format!("{}: need at least one feature column and a label column", path.display())));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row = line + 2;
        for field in record.iter().take(width - 1) {
            let v: f64 = field.trim().parse().map_err(|_| data_err(format!("{}:{row}: bad number {field:?}", path.display())))?;
            if !v.is_finite() {
                return Err(data_err(format!("{}:{row}: non-finite value", path.display())));
            }
            data.push(v);
        }
        let label = &record[width - 1];
        labels.push(label.trim().parse::<usize>().map_err(|_| data_err(format!("{}:{row}: bad label {label:?}", path.display())))?);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let x = Matrix::from_row_major(labels.len(), width - 1, data)?;
    Ok((x, labels, classes))
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => data_err(format!("{}: {other:?}", path.display())),
    }
}

/// Per-column mean and standard deviation over `rows`; zero deviations are
/// replaced by 1.
pub fn column_stats(x: &Matrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = x.cols();
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for &i in rows {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for &i in rows {
        for ((s, v), m) in sd.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut sd {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    (mean, sd)
}

fn standardize(x: &mut Matrix, mean: &[f64], sd: &[f64]) {
    for i in 0..x.rows() {
        for ((v, m), s) in x.row_mut(i).iter_mut().zip(mean).zip(sd) {
            *v = (*v - m) / s;
        }
    }
}

/// Shuffles rows with `seed`, splits 50/25/25 and, with z-scoring,
/// standardizes every split with the training split's statistics.
pub fn split_table(mut x: Matrix, y: Vec<usize>, classes: usize, normalize: Normalize, seed: u64) -> Result<SplitData> {
    if y.len() < 4 {
        return Err(data_err("need at least 4 examples to split"));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if normalize == Normalize::Zscore {
        let (nt, _, _) = split_sizes(order.len());
        let (mean, sd) = column_stats(&x, &order[..nt]);
        standardize(&mut x, &mean, &sd);
    }
    split(&x, &y, classes, &order)
}

pub fn load_dataset(config: &DatasetConfig, seed: u64) -> Result<SplitData> {
    match config {
        DatasetConfig::Synthetic(spec) => make_synthetic(spec, seed),
        DatasetConfig::Csv { path, normalize } => {
            let (x, y, classes) = read_csv(path)?;
            split_table(x, y, classes, *normalize, seed)
        }
    }
}

/// A table aligned row for row with the main dataset, split with the same
/// permutation and normalized with the main training statistics.
pub fn aligned_training_split(path: &Path, main: &DatasetConfig, indices: &[usize]) -> Result<Dataset> {
    let (mut x, y, classes) = read_csv(path)?;
    if let DatasetConfig::Csv { path: main_path, normalize: Normalize::Zscore } = main {
        let (mx, _, _) = read_csv(main_path)?;
        if mx.cols() != x.cols() {
            return Err(data_err(format!("{} has {} feature columns, the main dataset {}", path.display(), x.cols(), mx.cols())));
        }
        let (mean, sd) = column_stats(&mx, indices);
        standardize(&mut x, &mean, &sd);
    }
    if indices.iter().any(|&i| i >= y.len()) {
        return Err(data_err(format!("{} has fewer rows than the main dataset", path.display())));
    }
    let rows: Vec<Vec<f64>> = indices.iter().map(|&i| x.row(i).to_vec()).collect();
    Ok(Dataset::new(Matrix::from_rows(&rows, x.cols())?, indices.iter().map(|&i| y[i]).collect(), classes)?)
}

/// The training split with `N(0, noise²)` added to every input.
pub fn noisy_copy(train: &Dataset, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = train.features().clone();
    for v in x.as_mut_slice() {
        *v += noise * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(Dataset::new(x, train.labels().to_vec(), train.num_classes())?)
}
