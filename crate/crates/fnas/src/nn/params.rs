//! Flat parameter storage with named segments.
//!
//! All networks in the crate keep their weights in one `Params` value: a flat
//! `Vec<f64>` plus a layout mapping segment names to (offset, shape). The tape,
//! the optimizer, and the checkpoint format all address parameters through the
//! layout, so the three never disagree on which number is which.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    /// Row-major shape; `[n]` for vectors, `[rows, cols]` for matrices.
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

/// Ordered segment table; total length is the sum of segment lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
    total: usize,
}

impl Layout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder { segments: Vec::new(), cursor: 0 }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Result<&Segment> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Dimension {
                segment: name.to_string(),
                expected: 0,
                got: 0,
            })
    }

    /// Name of the segment containing flat index `idx`.
    pub fn segment_of(&self, idx: usize) -> &str {
        for s in &self.segments {
            if idx >= s.offset && idx < s.offset + s.len() {
                return &s.name;
            }
        }
        "<out of range>"
    }
}

pub struct LayoutBuilder {
    segments: Vec<Segment>,
    cursor: usize,
}

impl LayoutBuilder {
    pub fn vector(mut self, name: &str, len: usize) -> Self {
        self.segments.push(Segment {
            name: name.to_string(),
            offset: self.cursor,
            shape: vec![len],
        });
        self.cursor += len;
        self
    }

    pub fn matrix(mut self, name: &str, rows: usize, cols: usize) -> Self {
        self.segments.push(Segment {
            name: name.to_string(),
            offset: self.cursor,
            shape: vec![rows, cols],
        });
        self.cursor += rows * cols;
        self
    }

    pub fn scalar(self, name: &str) -> Self {
        self.vector(name, 1)
    }

    pub fn build(self) -> Layout {
        Layout { segments: self.segments, total: self.cursor }
    }
}

/// A parameter vector: flat values plus the layout that names them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl Params {
    /// All-zero parameters for a layout.
    pub fn zeros(layout: Layout) -> Self {
        let data = vec![0.0; layout.total_len()];
        Params { layout, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segment(&self, name: &str) -> Result<&[f64]> {
        let seg = self.layout.find(name)?;
        Ok(&self.data[seg.offset..seg.offset + seg.len()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let seg = self.layout.find(name)?.clone();
        Ok(&mut self.data[seg.offset..seg.offset + seg.len()])
    }

    /// Errors with the offending segment name if any value is non-finite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric {
                    context: format!("{context}:{}", self.layout.segment_of(i)),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets_accumulate() {
        let layout = Layout::builder()
            .matrix("w", 2, 3)
            .vector("b", 2)
            .scalar("a")
            .build();
        assert_eq!(layout.total_len(), 9);
        assert_eq!(layout.find("b").unwrap().offset, 6);
        assert_eq!(layout.segment_of(8), "a");
    }

    #[test]
    fn segment_views_are_disjoint_and_exact() {
        let layout = Layout::builder().vector("x", 3).vector("y", 2).build();
        let mut p = Params::zeros(layout);
        p.segment_mut("y").unwrap().copy_from_slice(&[1.0, 2.0]);
        assert_eq!(p.segment("x").unwrap(), &[0.0, 0.0, 0.0]);
        assert_eq!(p.segment("y").unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn finite_check_names_segment() {
        let layout = Layout::builder().vector("good", 2).vector("bad", 2).build();
        let mut p = Params::zeros(layout);
        p.segment_mut("bad").unwrap()[1] = f64::NAN;
        let err = p.check_finite("update").unwrap_err();
        assert!(err.to_string().contains("bad"), "{err}");
    }

    #[test]
    fn missing_segment_is_an_error() {
        let p = Params::zeros(Layout::builder().vector("x", 1).build());
        assert!(p.segment("nope").is_err());
    }
}
