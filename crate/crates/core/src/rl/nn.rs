//! Dense ReLU networks on flat parameter vectors, batched through GEMM.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Floating-point type the networks are generic over.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static
{
    /// `C = A·B + beta·C` on row-major buffers.
    ///
    /// `A` is `m×k` (stored `k×m` when `a_t`), `B` is `k×n` (stored `n×k`
    /// when `b_t`), `C` is `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // Logical rows×cols; stored cols×rows when transposed.
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_t: bool,
                b: &[Self],
                b_t: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(
                    a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
                    "gemm buffer too small"
                );
                let (rsa, csa) = strides(m, k, a_t);
                let (rsb, csb) = strides(k, n, b_t);
                // SAFETY: buffer lengths checked above; strides describe
                // dense row-major storage of exactly those extents.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Fully connected network: ReLU on hidden layers, linear output.
///
/// Parameters are laid out layer by layer as the `in×out` row-major weight
/// matrix followed by the `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    pub params: Vec<T>,
}

/// Layer inputs retained for the backward pass; `acts[0]` is the network
/// input and `acts[l]` the output of layer `l`.
#[derive(Debug, Clone, Default)]
pub struct Cache<T> {
    pub acts: Vec<Vec<T>>,
    batch: usize,
}

impl<T> Cache<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Real> Mlp<T> {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(
            sizes.len() >= 2 && sizes.iter().all(|&s| s > 0),
            "invalid layer sizes"
        );
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(T::lit(rng.random_range(-bound..bound)));
            }
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<T>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == param_count(sizes)).then(|| Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn convert<U: Real>(&self) -> Mlp<U> {
        Mlp {
            sizes: self.sizes.clone(),
            params: self
                .params
                .iter()
                .map(|p| U::lit(p.to_f64().expect("finite parameter")))
                .collect(),
        }
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, fan_in, fan_out)
        self.sizes.windows(2).scan(0, |off, w| {
            let start = *off;
            *off += w[0] * w[1] + w[1];
            Some((start, w[0], w[1]))
        })
    }

    /// Batched forward pass over `batch` row-major inputs.
    pub fn forward(&self, input: &[T], batch: usize, cache: &mut Cache<T>) {
        assert_eq!(input.len(), batch * self.input_dim(), "input shape");
        let n_layers = self.sizes.len() - 1;
        cache.acts.resize_with(n_layers + 1, Vec::new);
        cache.batch = batch;
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        for (l, (off, fan_in, fan_out)) in self.layers().enumerate() {
            let (w, b) =
                self.params[off..off + fan_in * fan_out + fan_out].split_at(fan_in * fan_out);
            let (prev, rest) = cache.acts.split_at_mut(l + 1);
            let out = &mut rest[0];
            out.clear();
            for _ in 0..batch {
                out.extend_from_slice(b);
            }
            T::gemm(
                batch,
                fan_in,
                fan_out,
                &prev[l],
                false,
                w,
                false,
                T::one(),
                out,
            );
            if l + 1 < n_layers {
                for v in out.iter_mut() {
                    *v = v.max(T::zero());
                }
            }
        }
    }

    /// Convenience forward returning a fresh output buffer.
    pub fn predict(&self, input: &[T], batch: usize) -> Vec<T> {
        let mut cache = Cache::default();
        self.forward(input, batch, &mut cache);
        cache.acts.pop().unwrap_or_default()
    }

    /// Backpropagates `grad_out` (d loss / d output) through the cached pass.
    ///
    /// Parameter gradients are accumulated into `param_grad` when given;
    /// the input gradient is written to `input_grad` when given.
    pub fn backward(
        &self,
        cache: &Cache<T>,
        grad_out: &[T],
        mut param_grad: Option<&mut [T]>,
        input_grad: Option<&mut Vec<T>>,
    ) {
        let batch = cache.batch;
        assert_eq!(grad_out.len(), batch * self.output_dim(), "grad_out shape");
        if let Some(g) = param_grad.as_deref() {
            assert_eq!(g.len(), self.params.len(), "param_grad shape");
        }
        let layers: Vec<_> = self.layers().collect();
        let n_layers = layers.len();
        let mut delta = grad_out.to_vec();
        let mut next = Vec::new();
        for (l, &(off, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            if l + 1 < n_layers {
                for (d, &a) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            if let Some(g) = param_grad.as_deref_mut() {
                let (gw, gb) =
                    g[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                T::gemm(
                    fan_in,
                    batch,
                    fan_out,
                    &cache.acts[l],
                    true,
                    &delta,
                    false,
                    T::one(),
                    gw,
                );
                for row in delta.chunks_exact(fan_out) {
                    for (b, &d) in gb.iter_mut().zip(row) {
                        *b = *b + d;
                    }
                }
            }
            if l == 0 && input_grad.is_none() {
                break;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            next.clear();
            next.resize(batch * fan_in, T::zero());
            T::gemm(
                batch,
                fan_out,
                fan_in,
                &delta,
                false,
                w,
                true,
                T::zero(),
                &mut next,
            );
            std::mem::swap(&mut delta, &mut next);
        }
        if let Some(out) = input_grad {
            *out = delta;
        }
    }

    /// `self ← tau·source + (1 − tau)·self`.
    pub fn soft_update_from(&mut self, source: &Self, tau: T) {
        assert_eq!(
            self.sizes, source.sizes,
            "soft update between different shapes"
        );
        let keep = T::one() - tau;
        for (t, &s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * s + keep * *t;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.params
            .iter()
            .zip(&other.params)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}
