//! Flat parameter storage.
//!
//! All trainable tensors of a model live in one contiguous `Vec<f64>`,
//! addressed through named segments registered at construction time. This
//! keeps the optimizer, checkpointing, finite-difference probing, and
//! per-head isolation checks trivial: they all operate on the flat vector.

use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

/// Handle to one named segment of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegId(usize);

#[derive(Debug, Clone)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Registration-ordered segment table.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn register(&mut self, name: impl Into<String>, shape: Vec<usize>) -> SegId {
        let name = name.into();
        debug_assert!(
            self.segments.iter().all(|s| s.name != name),
            "duplicate parameter name '{name}'"
        );
        let seg = Segment {
            name,
            offset: self.total,
            shape,
        };
        self.total += seg.len();
        self.segments.push(seg);
        SegId(self.segments.len() - 1)
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, id: SegId) -> &Segment {
        &self.segments[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<SegId> {
        self.segments
            .iter()
            .position(|s| s.name == name)
            .map(SegId)
    }

    pub fn range(&self, id: SegId) -> std::ops::Range<usize> {
        let seg = &self.segments[id.0];
        seg.offset..seg.offset + seg.len()
    }
}

/// Parameter values plus their layout.
#[derive(Debug, Clone)]
pub struct ParamStore {
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn zeros(layout: ParamLayout) -> Self {
        let data = vec![0.0; layout.total_len()];
        ParamStore { layout, data }
    }

    pub fn slice(&self, id: SegId) -> &[f64] {
        &self.data[self.layout.range(id)]
    }

    pub fn slice_mut(&mut self, id: SegId) -> &mut [f64] {
        let r = self.layout.range(id);
        &mut self.data[r]
    }

    /// 2-D view of a segment whose shape has exactly two axes, or of a
    /// flattened kernel `[k0*k1*..., last]`.
    pub fn view2(&self, id: SegId) -> ArrayView2<'_, f64> {
        view2(&self.data, &self.layout, id)
    }

    pub fn set_from(&mut self, other: &[f64]) -> Result<()> {
        if other.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector length {} != {}",
                other.len(),
                self.data.len()
            )));
        }
        self.data.copy_from_slice(other);
        Ok(())
    }
}

fn two_axis_dims(seg: &Segment) -> (usize, usize) {
    match seg.shape.len() {
        0 => (1, 1),
        1 => (1, seg.shape[0]),
        n => (seg.shape[..n - 1].iter().product(), seg.shape[n - 1]),
    }
}

/// Immutable 2-D view over a segment of any flat buffer sharing `layout`.
pub fn view2<'a>(data: &'a [f64], layout: &ParamLayout, id: SegId) -> ArrayView2<'a, f64> {
    let seg = layout.segment(id);
    let (r, c) = two_axis_dims(seg);
    ArrayView2::from_shape((r, c), &data[layout.range(id)]).expect("segment length matches shape")
}

/// Mutable 2-D view over a segment of any flat buffer sharing `layout`.
pub fn view2_mut<'a>(
    data: &'a mut [f64],
    layout: &ParamLayout,
    id: SegId,
) -> ArrayViewMut2<'a, f64> {
    let seg = layout.segment(id);
    let (r, c) = two_axis_dims(seg);
    let range = layout.range(id);
    ArrayViewMut2::from_shape((r, c), &mut data[range]).expect("segment length matches shape")
}

pub fn seg_slice<'a>(data: &'a [f64], layout: &ParamLayout, id: SegId) -> &'a [f64] {
    &data[layout.range(id)]
}

pub fn seg_slice_mut<'a>(data: &'a mut [f64], layout: &ParamLayout, id: SegId) -> &'a mut [f64] {
    let range = layout.range(id);
    &mut data[range]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_assigns_disjoint_ranges() {
        let mut layout = ParamLayout::default();
        let a = layout.register("a", vec![2, 3]);
        let b = layout.register("b", vec![4]);
        assert_eq!(layout.range(a), 0..6);
        assert_eq!(layout.range(b), 6..10);
        assert_eq!(layout.total_len(), 10);
        assert_eq!(layout.by_name("b"), Some(b));
        assert_eq!(layout.by_name("missing"), None);
    }

    #[test]
    fn views_have_expected_dims() {
        let mut layout = ParamLayout::default();
        let w = layout.register("w", vec![3, 3, 2, 4]);
        let store = ParamStore::zeros(layout);
        assert_eq!(store.view2(w).dim(), (18, 4));
    }
}
