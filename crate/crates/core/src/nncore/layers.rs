//! Affine layers, the two-headed Gaussian encoder and the affine decoder, each
//! with an explicit backward pass.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::gaussian::{DiagonalGaussian, GaussianBatch, STD_FLOOR};
use super::params::{ParamVisitor, ParamVisitorMut, Parameterized};
use crate::datamodel::FeatureVector;
use crate::error::{Error, Result};

/// Log-variance clamp. The lower bound realizes the std floor.
pub fn log_var_bounds() -> (f64, f64) {
    (2.0 * STD_FLOOR.ln(), 20.0)
}

/// `y = x Wᵀ + b` with `W` of shape (output, input).
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let a = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        Self {
            weight: Array2::from_shape_fn((output, input), |_| dist.sample(rng)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

impl Parameterized for Linear {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor) {
        let w = self.weight.as_slice().expect("standard layout");
        f(&format!("{prefix}.weight"), &[self.weight.nrows(), self.weight.ncols()], w);
        let b = self.bias.as_slice().expect("standard layout");
        f(&format!("{prefix}.bias"), &[self.bias.len()], b);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut) {
        f(&format!("{prefix}.weight"), self.weight.as_slice_mut().expect("standard layout"));
        f(&format!("{prefix}.bias"), self.bias.as_slice_mut().expect("standard layout"));
    }
}

/// `F → d` affine, tanh, dropout, then separate affine heads `d → d` for the
/// mean and the log-variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianEncoder {
    pub hidden: Linear,
    pub mean_head: Linear,
    pub log_var_head: Linear,
    pub dropout: f64,
}

/// Intermediate values of an encoder forward pass, kept for backward.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    input: Array2<f64>,
    activation: Array2<f64>,
    dropped: Array2<f64>,
    mask: Option<Array2<f64>>,
    std: Array2<f64>,
    unclamped: Array2<f64>,
}

impl GaussianEncoder {
    pub fn zeros(input: usize, latent: usize, dropout: f64) -> Self {
        Self {
            hidden: Linear::zeros(input, latent),
            mean_head: Linear::zeros(latent, latent),
            log_var_head: Linear::zeros(latent, latent),
            dropout,
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, latent: usize, dropout: f64, rng: &mut R) -> Self {
        Self {
            hidden: Linear::xavier(input, latent, rng),
            mean_head: Linear::xavier(latent, latent, rng),
            log_var_head: Linear::xavier(latent, latent, rng),
            dropout,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_head.output_dim()
    }

    /// Encodes a batch. Dropout is applied only when `dropout_rng` is given.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        dropout_rng: Option<&mut (dyn rand::RngCore + '_)>,
    ) -> Result<(GaussianBatch, EncoderTrace)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim("encoder input", self.input_dim(), x.ncols()));
        }
        let activation = self.hidden.forward(x).mapv(f64::tanh);
        let (dropped, mask) = match dropout_rng {
            Some(rng) if self.dropout > 0.0 => {
                let keep = 1.0 - self.dropout;
                let mask = Array2::from_shape_fn(activation.dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                (&activation * &mask, Some(mask))
            }
            _ => (activation.clone(), None),
        };
        let mean = self.mean_head.forward(&dropped);
        let raw = self.log_var_head.forward(&dropped);
        let (lo, hi) = log_var_bounds();
        let unclamped = raw.mapv(|v| if (lo..=hi).contains(&v) { 1.0 } else { 0.0 });
        let std = raw.mapv(|v| (0.5 * v.clamp(lo, hi)).exp());
        let out = GaussianBatch {
            mean,
            std: std.clone(),
        };
        let trace = EncoderTrace {
            input: x.clone(),
            activation,
            dropped,
            mask,
            std,
            unclamped,
        };
        Ok((out, trace))
    }

    /// Back-propagates gradients on the posterior parameters; returns `dL/dx`.
    pub fn backward(
        &self,
        trace: &EncoderTrace,
        d_mean: &Array2<f64>,
        d_std: &Array2<f64>,
        grad: &mut GaussianEncoder,
    ) -> Array2<f64> {
        // std = exp(v / 2)  =>  dstd/dv = std / 2
        let d_log_var = d_std * &trace.std * 0.5 * &trace.unclamped;
        let mut d_dropped = self.mean_head.backward(&trace.dropped, d_mean, &mut grad.mean_head);
        d_dropped += &self
            .log_var_head
            .backward(&trace.dropped, &d_log_var, &mut grad.log_var_head);
        let d_act = match &trace.mask {
            Some(mask) => d_dropped * mask,
            None => d_dropped,
        };
        let d_pre = d_act * &trace.activation.mapv(|a| 1.0 - a * a);
        self.hidden.backward(&trace.input, &d_pre, &mut grad.hidden)
    }
}

impl Parameterized for GaussianEncoder {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor) {
        self.hidden.visit_params(&format!("{prefix}.hidden"), f);
        self.mean_head.visit_params(&format!("{prefix}.mean_head"), f);
        self.log_var_head.visit_params(&format!("{prefix}.log_var_head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut) {
        self.hidden.visit_params_mut(&format!("{prefix}.hidden"), f);
        self.mean_head.visit_params_mut(&format!("{prefix}.mean_head"), f);
        self.log_var_head.visit_params_mut(&format!("{prefix}.log_var_head"), f);
    }
}

/// Posterior `q(z | x)` of a single feature vector, without dropout.
pub fn encode(enc: &GaussianEncoder, x: &FeatureVector) -> Result<DiagonalGaussian> {
    let row = Array2::from_shape_vec((1, x.dim()), x.as_slice().to_vec())
        .expect("row shape matches length");
    let (g, _) = enc.forward(&row, None)?;
    Ok(g.row(0))
}

/// Affine map from a latent to feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub layer: Linear,
}

impl Decoder {
    pub fn zeros(latent: usize, output: usize) -> Self {
        Self {
            layer: Linear::zeros(latent, output),
        }
    }

    pub fn init<R: Rng + ?Sized>(latent: usize, output: usize, rng: &mut R) -> Self {
        Self {
            layer: Linear::xavier(latent, output, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layer.output_dim()
    }

    pub fn forward(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.input_dim() {
            return Err(Error::dim("decoder input", self.input_dim(), z.ncols()));
        }
        Ok(self.layer.forward(z))
    }

    pub fn backward(&self, z: &Array2<f64>, dy: &Array2<f64>, grad: &mut Decoder) -> Array2<f64> {
        self.layer.backward(z, dy, &mut grad.layer)
    }

    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        let row = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row shape");
        Ok(self.forward(&row)?.row(0).to_vec())
    }
}

impl Parameterized for Decoder {
    fn visit_params(&self, prefix: &str, f: &mut ParamVisitor) {
        self.layer.visit_params(prefix, f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut) {
        self.layer.visit_params_mut(prefix, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_encoder_is_standard_normal() {
        let enc = GaussianEncoder::zeros(3, 2, 0.2);
        let g = encode(&enc, &fv(&[0.4, -1.0, 2.0])).unwrap();
        assert_eq!(g, DiagonalGaussian::standard(2));
    }

    #[test]
    fn encode_is_deterministic_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = GaussianEncoder::init(4, 3, 0.5, &mut rng);
        let x = fv(&[1.0, 2.0, -3.0, 0.5]);
        let a = encode(&enc, &x).unwrap();
        assert_eq!(a, encode(&enc, &x).unwrap());
        assert!(a.std().iter().all(|s| *s > 0.0));
        assert!(matches!(encode(&enc, &fv(&[1.0])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn std_never_below_floor() {
        let mut enc = GaussianEncoder::zeros(1, 1, 0.0);
        enc.log_var_head.bias[0] = -500.0;
        let g = encode(&enc, &fv(&[0.0])).unwrap();
        assert!((g.std()[0] - STD_FLOOR).abs() < 1e-18);
    }

    #[test]
    fn decoder_rejects_wrong_latent() {
        let dec = Decoder::zeros(2, 3);
        assert!(dec.reconstruct(&[1.0, 2.0, 3.0]).is_err());
        assert_eq!(dec.reconstruct(&[1.0, 2.0]).unwrap(), vec![0.0; 3]);
    }
}
