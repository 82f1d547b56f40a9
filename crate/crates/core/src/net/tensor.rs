/// A batch of channel-last feature maps with shape (N, X, Y, Z, C).
///
/// Planar (2D) maps use Z = 1, so one layout serves both the volumetric and
/// the planar stages. Because the layout is channel-last, folding the
/// spectral axis into channels is a pure relabeling of the shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 5],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[4]
    }

    /// Spatial positions per sample (X * Y * Z).
    pub fn positions(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    /// Per-sample shape (X, Y, Z, C).
    pub fn sample_shape(&self) -> [usize; 4] {
        [self.shape[1], self.shape[2], self.shape[3], self.shape[4]]
    }

    #[inline]
    pub fn at(&self, n: usize, x: usize, y: usize, z: usize, c: usize) -> f64 {
        let [_, sx, sy, sz, sc] = self.shape;
        self.data[(((n * sx + x) * sy + y) * sz + z) * sc + c]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub(crate) fn with_batch(n: usize, s: [usize; 4]) -> [usize; 5] {
    [n, s[0], s[1], s[2], s[3]]
}
