/// Fixed-length tapped delay line, most recent sample first.
///
/// Backed by a mirrored ring of twice the length so the current window is
/// always one contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine {
    buf: Vec<f64>,
    len: usize,
    head: usize,
}

impl DelayLine {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "delay line needs at least one slot");
        Self {
            buf: vec![0.0; 2 * len],
            len,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn push(&mut self, x: f64) {
        self.head = if self.head == 0 { self.len - 1 } else { self.head - 1 };
        self.buf[self.head] = x;
        self.buf[self.head + self.len] = x;
    }

    /// `as_slice()[i]` is the sample pushed `i` steps ago.
    pub fn as_slice(&self) -> &[f64] {
        &self.buf[self.head..self.head + self.len]
    }

    pub fn get(&self, lag: usize) -> f64 {
        self.as_slice()[lag]
    }

    pub fn clear(&mut self) {
        self.buf.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn dot(&self, coefficients: &[f64]) -> f64 {
        dot(coefficients, self.as_slice())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
