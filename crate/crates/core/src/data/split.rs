use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::numeric::Tensor;

use super::window::WindowSpec;
use super::Dataset;

/// Chronological train/val/test ratios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    /// 6:2:2, used for the ETT family.
    pub const ETT: SplitSpec = SplitSpec {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    };
    /// 7:1:2, used for the other benchmarks.
    pub const STANDARD: SplitSpec = SplitSpec {
        train: 0.7,
        val: 0.1,
        test: 0.2,
    };

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || self.train <= 0.0 {
            return Err(config(format!("invalid split ratios {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(config(format!("split ratios {parts:?} do not sum to 1")));
        }
        Ok(())
    }

    /// Boundaries `(⌊r_train·len⌋, ⌊(r_train + r_val)·len⌋)`.
    pub fn boundaries(&self, len: usize) -> (usize, usize) {
        let f = |r: f64| ((r * len as f64) + 1e-9).floor() as usize;
        let b1 = f(self.train).min(len);
        let b2 = f(self.train + self.val).clamp(b1, len);
        (b1, b2)
    }
}

/// A contiguous slice of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// Row offset in the parent dataset.
    pub start: usize,
    /// `len × C`; `None` for an empty segment.
    pub values: Option<Tensor>,
    pub channels: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.values.as_ref().map_or(0, Tensor::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cut(ds: &Dataset, start: usize, end: usize) -> Result<Self> {
        let c = ds.channels();
        let values = if end > start {
            Some(Tensor::matrix(
                end - start,
                c,
                ds.values.data()[start * c..end * c].to_vec(),
            )?)
        } else {
            None
        };
        Ok(Self {
            start,
            values,
            channels: c,
        })
    }

    /// Apply a per-channel map in place.
    pub fn map_values(&self, f: impl Fn(&Tensor) -> Tensor) -> Self {
        Self {
            start: self.start,
            values: self.values.as_ref().map(f),
            channels: self.channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Segment,
    pub val: Segment,
    pub test: Segment,
    /// Segments too short for a single window.
    pub warnings: Vec<String>,
}

impl Split {
    /// Cut `ds` chronologically. When `window` is given, segments shorter
    /// than `L + T` are reported in `warnings`.
    pub fn new(ds: &Dataset, spec: &SplitSpec, window: Option<&WindowSpec>) -> Result<Self> {
        spec.validate()?;
        let len = ds.len();
        let (b1, b2) = spec.boundaries(len);
        let split = Self {
            train: Segment::cut(ds, 0, b1)?,
            val: Segment::cut(ds, b1, b2)?,
            test: Segment::cut(ds, b2, len)?,
            warnings: Vec::new(),
        };
        let mut warnings = Vec::new();
        if let Some(w) = window {
            for (name, seg) in split.segments() {
                if seg.len() < w.lookback + w.horizon {
                    warnings.push(format!(
                        "{name} segment has {} rows, fewer than L+T = {}; it yields no windows",
                        seg.len(),
                        w.lookback + w.horizon
                    ));
                }
            }
        }
        Ok(Self { warnings, ..split })
    }

    pub fn segments(&self) -> [(&'static str, &Segment); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    pub fn lengths(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn by_name(&self, name: &str) -> Option<&Segment> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Per-channel z-score statistics, fit on the training segment only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at [`NormStats::STD_FLOOR`].
    pub std: Vec<f64>,
}

impl NormStats {
    pub const STD_FLOOR: f64 = 1e-8;

    pub fn fit(train: &Segment) -> Result<Self> {
        let v = train
            .values
            .as_ref()
            .ok_or_else(|| config("cannot fit normalization on an empty training segment"))?;
        let (n, c) = (v.rows() as f64, v.cols());
        let mut mean = vec![0.0; c];
        for r in 0..v.rows() {
            for (m, x) in mean.iter_mut().zip(v.row(r)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for r in 0..v.rows() {
            for ((s, x), m) in var.iter_mut().zip(v.row(r)).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / n).sqrt().max(Self::STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let c = self.mean.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % c]) / self.std[i % c];
        }
        out
    }

    pub fn invert(&self, x: &Tensor) -> Tensor {
        let c = self.mean.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[i % c] + self.mean[i % c];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(len: usize, c: usize) -> Dataset {
        let data = (0..len * c).map(|i| i as f64).collect();
        Dataset::new(
            "ramp",
            Tensor::matrix(len, c, data).unwrap(),
            (0..c).map(|i| format!("c{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ett_lengths_match_ratio_arithmetic() {
        let ds = ramp(17420, 1);
        let s = Split::new(&ds, &SplitSpec::ETT, None).unwrap();
        assert_eq!(s.lengths(), (10452, 3484, 3484));
    }

    #[test]
    fn seven_one_two_on_ten_rows() {
        let s = Split::new(&ramp(10, 2), &SplitSpec::STANDARD, None).unwrap();
        assert_eq!(s.lengths(), (7, 1, 2));
        assert_eq!(s.val.start, 7);
        assert_eq!(s.test.values.as_ref().unwrap().row(0), &[16.0, 17.0]);
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let bad = SplitSpec {
            train: 0.6,
            val: 0.3,
            test: 0.2,
        };
        assert!(Split::new(&ramp(10, 1), &bad, None).is_err());
    }

    #[test]
    fn short_segments_carry_a_warning() {
        let w = WindowSpec::new(4, 4);
        let s = Split::new(&ramp(20, 1), &SplitSpec::ETT, Some(&w)).unwrap();
        // (12, 4, 4): val and test are shorter than 8.
        assert_eq!(s.warnings.len(), 2);
    }

    #[test]
    fn population_std_and_round_trip() {
        let ds = Dataset::new(
            "t",
            Tensor::matrix(2, 1, vec![0.0, 2.0]).unwrap(),
            vec!["a".into()],
        )
        .unwrap();
        let s = Split::new(&ds, &SplitSpec { train: 1.0, val: 0.0, test: 0.0 }, None).unwrap();
        let st = NormStats::fit(&s.train).unwrap();
        assert_eq!((st.mean[0], st.std[0]), (1.0, 1.0));

        let x = Tensor::matrix(3, 1, vec![-4.0, 0.5, 9.25]).unwrap();
        assert!(st.invert(&st.apply(&x)).max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn constant_channel_engages_the_floor() {
        let ds = Dataset::new(
            "t",
            Tensor::matrix(4, 1, vec![3.0; 4]).unwrap(),
            vec!["a".into()],
        )
        .unwrap();
        let s = Split::new(&ds, &SplitSpec { train: 1.0, val: 0.0, test: 0.0 }, None).unwrap();
        let st = NormStats::fit(&s.train).unwrap();
        assert_eq!(st.std[0], NormStats::STD_FLOOR);
        assert!(st.apply(s.train.values.as_ref().unwrap()).data().iter().all(|&v| v == 0.0));
    }
}
