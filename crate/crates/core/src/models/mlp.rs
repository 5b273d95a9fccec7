//! One-hidden-layer network: dense -> ReLU -> dense -> sigmoid, trained on
//! summed per-class binary cross-entropy.

use ndarray::{Array1, Array2, ArrayView2, Axis, NdFloat};
use num_traits::NumCast;
use rand::Rng;

fn cast<F: NumCast>(x: f64) -> F {
    F::from(x).expect("representable constant")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    /// hidden x input
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    /// classes x hidden
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

/// Numerically stable `log(1 + e^z)`.
fn softplus<F: NdFloat>(z: F) -> F {
    if z > F::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid<F: NdFloat>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

impl<F: NdFloat> Mlp<F> {
    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        Mlp {
            w1: Array2::zeros((hidden, input)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((classes, hidden)),
            b2: Array1::zeros(classes),
        }
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(input, hidden, classes);
        let a1 = 1.0 / (input as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        m.w1.mapv_inplace(|_| cast(rng.random_range(-a1..=a1)));
        m.b1.mapv_inplace(|_| cast(rng.random_range(-a1..=a1)));
        m.w2.mapv_inplace(|_| cast(rng.random_range(-a2..=a2)));
        m.b2.mapv_inplace(|_| cast(rng.random_range(-a2..=a2)));
        m
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w2.nrows()
    }

    /// Pre-activations, hidden activations and logits for a batch (rows).
    fn forward_parts(&self, x: ArrayView2<F>) -> (Array2<F>, Array2<F>, Array2<F>) {
        let pre = x.dot(&self.w1.t()) + &self.b1;
        let h = pre.mapv(|v| v.max(F::zero()));
        let z = h.dot(&self.w2.t()) + &self.b2;
        (pre, h, z)
    }

    /// Sigmoid scores, one row per input row.
    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        self.forward_parts(x).2.mapv(sigmoid)
    }

    /// Mean over the batch of the summed per-class cross-entropy.
    pub fn loss(&self, x: ArrayView2<F>, y: ArrayView2<F>) -> F {
        let z = self.forward_parts(x).2;
        let b: F = cast(x.nrows() as f64);
        let total = z
            .iter()
            .zip(y.iter())
            .fold(F::zero(), |acc, (&z, &t)| acc + softplus(z) - t * z);
        total / b
    }

    pub fn loss_and_gradients(&self, x: ArrayView2<F>, y: ArrayView2<F>) -> (F, Gradients<F>) {
        let (pre, h, z) = self.forward_parts(x);
        let b: F = cast(x.nrows() as f64);
        let loss = z
            .iter()
            .zip(y.iter())
            .fold(F::zero(), |acc, (&z, &t)| acc + softplus(z) - t * z)
            / b;
        // d loss / d z = (sigmoid(z) - y) / B
        let mut dz = z.mapv(sigmoid);
        dz -= &y;
        dz.mapv_inplace(|v| v / b);
        let gw2 = dz.t().dot(&h);
        let gb2 = dz.sum_axis(Axis(0));
        let mut dpre = dz.dot(&self.w2);
        ndarray::Zip::from(&mut dpre).and(&pre).for_each(|d, &p| {
            if p <= F::zero() {
                *d = F::zero();
            }
        });
        let gw1 = dpre.t().dot(&x);
        let gb1 = dpre.sum_axis(Axis(0));
        (loss, Gradients { w1: gw1, b1: gb1, w2: gw2, b2: gb2 })
    }

    pub fn sgd_step(&mut self, g: &Gradients<F>, lr: F) {
        self.w1.scaled_add(-lr, &g.w1);
        self.b1.scaled_add(-lr, &g.b1);
        self.w2.scaled_add(-lr, &g.w2);
        self.b2.scaled_add(-lr, &g.b2);
    }

    /// All parameters flattened in a fixed order (w1, b1, w2, b2).
    pub fn parameters(&self) -> Vec<F> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }

    pub fn parameter_mut(&mut self, k: usize) -> &mut F {
        let sizes = [self.w1.len(), self.b1.len(), self.w2.len()];
        if k < sizes[0] {
            return self.w1.iter_mut().nth(k).unwrap();
        }
        let k = k - sizes[0];
        if k < sizes[1] {
            return &mut self.b1[k];
        }
        let k = k - sizes[1];
        if k < sizes[2] {
            return self.w2.iter_mut().nth(k).unwrap();
        }
        &mut self.b2[k - sizes[2]]
    }
}

impl<F: NdFloat> Gradients<F> {
    pub fn flatten(&self) -> Vec<F> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }
}
