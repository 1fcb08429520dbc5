use serde::{Deserialize, Serialize};

use crate::numeric::Tensor;

use super::split::Segment;

/// Sliding-window geometry. Stride is always 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
}

impl WindowSpec {
    pub fn new(lookback: usize, horizon: usize) -> Self {
        Self { lookback, horizon }
    }

    /// `len − L − T + 1`, or 0 when the segment is too short.
    pub fn count(&self, len: usize) -> usize {
        (len + 1).saturating_sub(self.lookback + self.horizon)
    }
}

/// One `(x, y)` training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// Offset of `x[0]` inside the segment.
    pub offset: usize,
    /// `L × C` lookback.
    pub x: Tensor,
    /// `T × C` target.
    pub y: Tensor,
}

/// Iterator over the windows of a single segment.
pub struct Windows<'a> {
    segment: &'a Segment,
    spec: WindowSpec,
    next: usize,
    count: usize,
    pub warning: Option<String>,
}

impl Iterator for Windows<'_> {
    type Item = Window;

    fn next(&mut self) -> Option<Window> {
        if self.next >= self.count {
            return None;
        }
        let v = self.segment.values.as_ref()?;
        let c = v.cols();
        let (l, t, i) = (self.spec.lookback, self.spec.horizon, self.next);
        self.next += 1;
        let data = v.data();
        Some(Window {
            offset: i,
            x: Tensor::matrix(l, c, data[i * c..(i + l) * c].to_vec()).ok()?,
            y: Tensor::matrix(t, c, data[(i + l) * c..(i + l + t) * c].to_vec()).ok()?,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.count - self.next;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Windows<'_> {}

/// Windows fully contained in `segment`.
pub fn windows(segment: &Segment, spec: WindowSpec) -> Windows<'_> {
    let count = spec.count(segment.len());
    let warning = (count == 0).then(|| {
        format!(
            "segment of {} rows is shorter than L+T = {}",
            segment.len(),
            spec.lookback + spec.horizon
        )
    });
    Windows {
        segment,
        spec,
        next: 0,
        count,
        warning,
    }
}

pub fn collect_windows(segment: &Segment, spec: WindowSpec) -> Vec<Window> {
    windows(segment, spec).collect()
}
