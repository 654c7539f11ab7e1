use crate::error::{contract, Result};

/// Label value marking unannotated pixels. Excluded from loss and metrics.
pub const VOID: u8 = 255;

/// Per-pixel class ids (`0..C`) or [`VOID`], row-major `h × w`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        contract!(data.len() == h * w, "label data length {} != {h}x{w}", data.len());
        Ok(LabelMap { h, w, data })
    }

    pub fn filled(h: usize, w: usize, label: u8) -> Self {
        LabelMap { h, w, data: vec![label; h * w] }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.w + x] = v;
    }

    /// Checks every value is a class below `classes` or `void`.
    pub fn validate(&self, classes: usize, void: u8) -> Result<()> {
        if let Some(&bad) = self.data.iter().find(|&&v| v != void && v as usize >= classes) {
            return Err(crate::Error::Contract(format!(
                "label {bad} outside alphabet 0..{classes} ∪ {{{void}}}"
            )));
        }
        Ok(())
    }

    pub fn histogram(&self) -> [usize; 256] {
        let mut h = [0usize; 256];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }
}
