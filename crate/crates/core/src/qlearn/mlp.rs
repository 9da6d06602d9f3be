use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::seed;
use crate::{Error, Result};

/// One affine layer. `w` is `(fan_in, fan_out)` so a batch multiplies as `x · w`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub(crate) w: Array2<f64>,
    pub(crate) b: Array1<f64>,
}

/// Feed-forward Q-network: rectifier on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Dense>,
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) layers: Vec<Dense>,
}

impl Gradients {
    /// Flattened in the same order as [`Mlp::params`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct Cache {
    /// `acts[i]` is the input to layer `i`; the last entry is the output.
    acts: Vec<Array2<f64>>,
}

impl Cache {
    pub(crate) fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("forward pass stores the output")
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::config(
            "dims",
            "need at least input and output sizes",
        ));
    }
    if dims.contains(&0) {
        return Err(Error::config("dims", "layer sizes must be positive"));
    }
    Ok(())
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
pub fn mlp_init(dims: &[usize], seed: u64) -> Result<Mlp> {
    check_dims(dims)?;
    let mut rng = seed::rng(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            Dense {
                w: Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    rng.random_range(-scale..=scale)
                }),
                b: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(Mlp {
        dims: dims.to_vec(),
        layers,
    })
}

impl Mlp {
    /// Builds a network from explicit parameters. `weights[i]` is row-major
    /// `(dims[i], dims[i + 1])`.
    pub fn from_params(
        dims: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_dims(dims)?;
        if weights.len() != dims.len() - 1 || biases.len() != dims.len() - 1 {
            return Err(Error::config(
                "dims",
                "one weight matrix and bias per layer",
            ));
        }
        let layers = dims
            .windows(2)
            .zip(weights.into_iter().zip(biases))
            .map(|(d, (w, b))| {
                if w.len() != d[0] * d[1] {
                    return Err(Error::Dimension {
                        expected: d[0] * d[1],
                        actual: w.len(),
                    });
                }
                if b.len() != d[1] {
                    return Err(Error::Dimension {
                        expected: d[1],
                        actual: b.len(),
                    });
                }
                Ok(Dense {
                    w: Array2::from_shape_vec((d[0], d[1]), w).expect("length checked"),
                    b: Array1::from(b),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Mlp {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("checked non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Row-major weights then bias, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }

    pub(crate) fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.w.len() {
                return l.w.iter_mut().nth(index).expect("in range");
            }
            index -= l.w.len();
            if index < l.b.len() {
                return &mut l.b[index];
            }
            index -= l.b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn weights(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .map(|l| l.w.iter().copied().collect())
            .collect()
    }

    pub fn biases(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| l.b.to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// Adds `c` to every output bias, shifting all Q-values by the same constant.
    pub fn shift_output(&mut self, c: f64) {
        if let Some(last) = self.layers.last_mut() {
            last.b.mapv_inplace(|v| v + c);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let row = ArrayView2::from_shape((1, x.len()), x).expect("shape matches");
        Ok(self.forward_batch(row).into_raw_vec_and_offset().0)
    }

    /// Forward pass over a `(batch, input_dim)` matrix.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b;
            if i < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    pub(crate) fn forward_cached(&self, x: Array2<f64>) -> Cache {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.w) + &l.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        Cache { acts }
    }

    /// Backpropagates `d_out`, the loss gradient w.r.t. the network output.
    pub(crate) fn backward(&self, cache: &Cache, d_out: Array2<f64>) -> Gradients {
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut delta = d_out;
        for i in (0..n).rev() {
            let input = &cache.acts[i];
            let w = input.t().dot(&delta);
            let b = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut d_in = delta.dot(&self.layers[i].w.t());
                // rectifier gate: the stored activation is positive iff the unit was active
                d_in.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = d_in;
            }
            grads.push(Dense { w, b });
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    pub(crate) fn sgd(&mut self, grads: &Gradients, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.w.scaled_add(-lr, &g.w);
            l.b.scaled_add(-lr, &g.b);
        }
    }

    /// Gradient of `(Q(x)[action] - target)^2` w.r.t. every parameter.
    pub fn squared_error_gradient(
        &self,
        x: &[f64],
        action: usize,
        target: f64,
    ) -> Result<Gradients> {
        let q = self.forward(x)?;
        if action >= q.len() {
            return Err(Error::Argument(format!("action {action} out of range")));
        }
        let cache = self.forward_cached(
            Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape matches"),
        );
        let mut d_out = Array2::zeros((1, self.output_dim()));
        d_out[[0, action]] = 2.0 * (q[action] - target);
        Ok(self.backward(&cache, d_out))
    }
}

/// Below this magnitude a gradient component counts as zero.
pub const GRAD_FLOOR: f64 = 1e-8;

/// Max relative error between backprop and central finite differences of
/// `(Q(x)[action] - target)^2` over every parameter.
pub fn grad_check(mlp: &Mlp, x: &[f64], action: usize, target: f64, eps: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Argument(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let analytic = mlp.squared_error_gradient(x, action, target)?.flat();
    let loss = |net: &Mlp| -> f64 {
        let q = net.forward(x).expect("dims checked")[action];
        (q - target) * (q - target)
    };
    let mut probe = mlp.clone();
    let mut worst: f64 = 0.0;
    for (i, &g) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + eps;
        let plus = loss(&probe);
        *probe.param_mut(i) = orig - eps;
        let minus = loss(&probe);
        *probe.param_mut(i) = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let scale = g.abs().max(numeric.abs());
        if scale >= GRAD_FLOOR {
            worst = worst.max((g - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count() {
        let m = mlp_init(&[4, 8, 8, 3], 0).unwrap();
        assert_eq!(m.param_count(), 4 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(m.param_count(), 139);
        assert_eq!(m.params().len(), 139);
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = mlp_init(&[5, 7, 2], 9).unwrap();
        assert_eq!(a, mlp_init(&[5, 7, 2], 9).unwrap());
        assert_ne!(a, mlp_init(&[5, 7, 2], 10).unwrap());
        assert!(a.biases().iter().flatten().all(|&b| b == 0.0));
        let bound = 1.0 / 5f64.sqrt();
        assert!(a.weights()[0].iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn bad_dims() {
        assert!(mlp_init(&[], 0).is_err());
        assert!(mlp_init(&[3], 0).is_err());
        assert!(mlp_init(&[3, 0, 2], 0).is_err());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let m = Mlp::from_params(
            &[3, 4, 2],
            vec![vec![0.0; 12], vec![0.0; 8]],
            vec![vec![0.0; 4], vec![0.0; 2]],
        )
        .unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let m = Mlp::from_params(
            &[3, 3],
            vec![vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]],
            vec![vec![0.0; 3]],
        )
        .unwrap();
        let x = [0.5, -1.25, 3.0];
        assert_eq!(m.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn hand_computed_two_layer() {
        // W1 = [[1, -1], [2, 0.5]] (rows = inputs), b1 = [0.5, -3]
        // W2 = [[1, 2], [-1, 0.25]], b2 = [0.1, -0.2]
        let m = Mlp::from_params(
            &[2, 2, 2],
            vec![vec![1.0, -1.0, 2.0, 0.5], vec![1.0, 2.0, -1.0, 0.25]],
            vec![vec![0.5, -3.0], vec![0.1, -0.2]],
        )
        .unwrap();
        // x = [1, 2]: z1 = [1 + 4 + 0.5, -1 + 1 - 3] = [5.5, -3] -> h = [5.5, 0]
        // out = [5.5 + 0.1, 11 - 0.2] = [5.6, 10.8]
        let q = m.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(q, vec![5.5 + 0.1, 11.0 - 0.2]);
    }

    #[test]
    fn dimension_mismatch() {
        let m = mlp_init(&[3, 2], 0).unwrap();
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::Dimension {
                expected: 3,
                actual: 1
            })
        ));
    }

    #[test]
    fn random_net_gradients_match_finite_differences() {
        let m = mlp_init(&[3, 4, 2], 5).unwrap();
        let err = grad_check(&m, &[0.3, -0.7, 1.1], 1, 0.25, 1e-6).unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn zero_gradient_point_reports_zero() {
        let m = mlp_init(&[3, 4, 2], 5).unwrap();
        let x = [0.3, -0.7, 1.1];
        let y = m.forward(&x).unwrap()[0];
        assert_eq!(grad_check(&m, &x, 0, y, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn eps_sweep_is_stable() {
        let m = mlp_init(&[4, 6, 3], 17).unwrap();
        let x = [0.2, 0.9, -0.4, 0.6];
        let errs: Vec<f64> = [1e-4, 1e-5, 1e-6]
            .iter()
            .map(|&e| grad_check(&m, &x, 2, -0.5, e).unwrap())
            .collect();
        assert!(errs.iter().all(|&e| e <= 1e-4), "{errs:?}");
    }

    #[test]
    fn eps_out_of_range() {
        let m = mlp_init(&[2, 1], 0).unwrap();
        assert!(grad_check(&m, &[0.0, 0.0], 0, 0.0, 1e-2).is_err());
    }
}
