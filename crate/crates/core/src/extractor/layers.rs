use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Relu,
    None,
}

/// Dense `y = W x + b`, `W` row-major `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Affine {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Affine {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| rng.uniform_range(-limit, limit)).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weight[j * self.in_dim..(j + 1) * self.in_dim]
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.bias[j] + dot(self.row(j), x);
        }
    }

    /// Accumulates parameter gradients for one input and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Affine, dx: &mut [f64]) {
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (j, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[j] += g;
            let range = j * self.in_dim..(j + 1) * self.in_dim;
            axpy(g, x, &mut grad.weight[range.clone()]);
            axpy(g, &self.weight[range], dx);
        }
    }
}

pub(crate) fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| {
        if *x < 0.0 {
            *x = 0.0
        }
    });
}

/// Dot product with a fixed four-way accumulation order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
