use serde::{Deserialize, Serialize};

use crate::dsp::FeatureVector;
use crate::edf::{Epoch, Label};
use crate::error::{Error, Result};
use crate::nn::{LossKind, Tensor};

/// Samples stored contiguously as `f64`, one row of `sample_len()` values per item.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sample_shape: Vec<usize>,
    pub data: Vec<f64>,
    pub labels: Vec<Label>,
    pub subjects: Vec<u32>,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, data: Vec<f64>, labels: Vec<Label>, subjects: Vec<u32>) -> Result<Self> {
        let row: usize = sample_shape.iter().product();
        if row == 0 || data.len() != row * labels.len() || subjects.len() != labels.len() {
            return Err(Error::Shape(format!(
                "dataset of {} labels, {} subjects and {} values does not fit samples of {sample_shape:?}",
                labels.len(),
                subjects.len(),
                data.len()
            )));
        }
        Ok(Dataset { sample_shape, data, labels, subjects })
    }

    /// Epochs become `[1, channels, samples]` images.
    pub fn from_epochs(epochs: &[Epoch]) -> Result<Self> {
        let first = epochs
            .first()
            .ok_or_else(|| Error::EmptyDataset("no epochs".into()))?;
        let mut data = Vec::with_capacity(epochs.len() * first.data.len());
        for e in epochs {
            if (e.channels, e.len) != (first.channels, first.len) {
                return Err(Error::Shape(format!(
                    "epoch S{:03}R{:02}@{} is {}x{}, expected {}x{}",
                    e.subject_id, e.run_id, e.onset_sample, e.channels, e.len, first.channels, first.len
                )));
            }
            data.extend(e.data.iter().map(|&v| v as f64));
        }
        Dataset::new(
            vec![1, first.channels, first.len],
            data,
            epochs.iter().map(|e| e.label).collect(),
            epochs.iter().map(|e| e.subject_id).collect(),
        )
    }

    pub fn from_features(features: &[FeatureVector], subjects: &[u32]) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| Error::EmptyDataset("no feature vectors".into()))?;
        let width = first.values.len();
        let mut data = Vec::with_capacity(features.len() * width);
        for f in features {
            if f.values.len() != width {
                return Err(Error::Shape(format!("feature vector of {} values, expected {width}", f.values.len())));
            }
            data.extend_from_slice(&f.values);
        }
        Dataset::new(vec![width], data, features.iter().map(|f| f.label).collect(), subjects.to_vec())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(idx.len() * self.sample_len());
        for &i in idx {
            data.extend_from_slice(self.sample(i));
        }
        Dataset {
            sample_shape: self.sample_shape.clone(),
            data,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i]).collect(),
        }
    }

    /// `[idx.len(), ..sample_shape]` input tensor and the matching labels.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<Label>) {
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.sample_shape);
        let mut data = Vec::with_capacity(idx.len() * self.sample_len());
        for &i in idx {
            data.extend_from_slice(self.sample(i));
        }
        let t = Tensor::new(shape, data).expect("batch shape matches data");
        (t, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// `(+1, -1)` for Left, `(-1, +1)` for Right.
pub fn pm_one_targets(labels: &[Label]) -> Tensor {
    let data = labels
        .iter()
        .flat_map(|l| match l {
            Label::Left => [1.0, -1.0],
            Label::Right => [-1.0, 1.0],
        })
        .collect();
    Tensor::new(vec![labels.len(), 2], data).expect("two targets per label")
}

pub fn batch_loss(kind: LossKind, output: &Tensor, labels: &[Label]) -> Result<(f64, Tensor)> {
    match kind {
        LossKind::CrossEntropy => {
            let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
            crate::nn::loss::softmax_cross_entropy(output, &idx)
        }
        LossKind::Mse => crate::nn::loss::mse_loss(output, &pm_one_targets(labels)),
    }
}

/// Per-dimension z-score fitted on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-12;

impl Standardizer {
    /// Population statistics; standard deviations below [`STD_FLOOR`] are raised to it.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset("cannot fit a standardizer on no samples".into()));
        }
        let d = train.sample_len();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for i in 0..train.len() {
            for (m, v) in mean.iter_mut().zip(train.sample(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..train.len() {
            for ((s, v), m) in var.iter_mut().zip(train.sample(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, ds: &mut Dataset) -> Result<()> {
        if ds.sample_len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer of width {} applied to samples of {}",
                self.mean.len(),
                ds.sample_len()
            )));
        }
        let d = self.mean.len();
        for (j, v) in ds.data.iter_mut().enumerate() {
            let k = j % d;
            *v = (*v - self.mean[k]) / self.std[k];
        }
        Ok(())
    }
}

/// Fits on `train`, then transforms `train` and every set in `others` with
/// those statistics.
pub fn standardize_features(train: &mut Dataset, others: &mut [&mut Dataset]) -> Result<Standardizer> {
    let s = Standardizer::fit(train)?;
    s.apply(train)?;
    for o in others.iter_mut() {
        s.apply(o)?;
    }
    Ok(s)
}
