use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hash_grid::{HashCache, HashGrid, HashGridConfig, SparseGrad};
use super::mlp::{Mlp, MlpCache, MlpGrads};
use crate::error::Result;

/// How the raw output of the last layer is mapped into the value range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    /// `(tanh(z) + 1) / 2`, range `[0,1]`.
    UnitTanh,
    /// `tanh(z)`, range `[-1,1]`.
    Tanh,
    /// `ln(1 + e^z)`, range `(0, inf)`.
    Softplus,
}

impl OutputActivation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::UnitTanh => 0.5 * (z.tanh() + 1.0),
            OutputActivation::Tanh => z.tanh(),
            OutputActivation::Softplus => softplus(z),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            OutputActivation::UnitTanh => {
                let t = z.tanh();
                0.5 * (1.0 - t * t)
            }
            OutputActivation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            OutputActivation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// A coordinate network: optional hash encoding, ReLU MLP, output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldNet {
    pub encoding: Option<HashGrid>,
    pub mlp: Mlp,
    pub activation: OutputActivation,
    input_dims: usize,
}

pub struct FieldCache {
    hash: Option<HashCache>,
    mlp: MlpCache,
    z: Array2<f64>,
}

/// Gradient buffers matching one [`FieldNet`].
#[derive(Debug, Clone)]
pub struct FieldGrads {
    pub mlp: MlpGrads,
    pub hash: Option<SparseGrad>,
}

impl FieldGrads {
    pub fn zero(&mut self) {
        self.mlp.zero();
        if let Some(h) = &mut self.hash {
            h.clear();
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.mlp.sum_squares() + self.hash.as_ref().map_or(0.0, |h| h.sum_squares())
    }

    pub fn scale(&mut self, k: f64) {
        self.mlp.scale(k);
        if let Some(h) = &mut self.hash {
            h.scale(k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.mlp.all_finite()
            && self
                .hash
                .as_ref()
                .is_none_or(|h| h.touched.iter().all(|&e| {
                    let b = e as usize * h.features();
                    h.values[b..b + h.features()].iter().all(|v| v.is_finite())
                }))
    }

    /// Dense copy in [`FieldNet::flat_params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.mlp.flatten_into(&mut out);
        if let Some(h) = &self.hash {
            out.extend_from_slice(h.as_dense());
        }
        out
    }
}

impl FieldNet {
    pub fn new(
        input_dims: usize,
        hash: Option<HashGridConfig>,
        width: usize,
        n_layers: usize,
        output_dims: usize,
        activation: OutputActivation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let encoding = match hash {
            Some(cfg) => Some(HashGrid::new(cfg, input_dims, rng)?),
            None => None,
        };
        let mlp_in = encoding.as_ref().map_or(input_dims, |e| e.output_dims());
        let mlp = Mlp::new(mlp_in, width, output_dims, n_layers, rng);
        Ok(Self {
            encoding,
            mlp,
            activation,
            input_dims,
        })
    }

    pub fn input_dims(&self) -> usize {
        self.input_dims
    }

    pub fn output_dims(&self) -> usize {
        self.mlp.output_dims()
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count() + self.encoding.as_ref().map_or(0, |e| e.params().len())
    }

    pub fn new_grads(&self) -> FieldGrads {
        FieldGrads {
            mlp: self.mlp.new_grads(),
            hash: self.encoding.as_ref().map(|e| e.new_grad()),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, FieldCache) {
        let (hash, mlp_in) = match &self.encoding {
            Some(enc) => {
                let (feat, cache) = enc.forward(x);
                (Some(cache), feat)
            }
            None => (None, x.to_owned()),
        };
        let (z, mlp) = self.mlp.forward(mlp_in.view());
        let act = self.activation;
        let out = z.mapv(|v| act.apply(v));
        (out, FieldCache { hash, mlp, z })
    }

    /// Evaluation without a cache.
    pub fn infer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let act = self.activation;
        let z = match &self.encoding {
            Some(enc) => self.mlp.infer(enc.forward(x).0.view()),
            None => self.mlp.infer(x),
        };
        z.mapv(|v| act.apply(v))
    }

    /// Backpropagates `d_out` (gradient w.r.t. the activated output). Parameter
    /// gradients accumulate into `grads` when given; the input gradient is
    /// returned when `want_input` is set.
    pub fn backward(
        &self,
        cache: &FieldCache,
        d_out: ArrayView2<f64>,
        grads: Option<&mut FieldGrads>,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let act = self.activation;
        let mut dz = d_out.to_owned();
        Zip::from(&mut dz)
            .and(&cache.z)
            .for_each(|d, &z| *d *= act.derivative(z));
        let (mlp_grads, hash_grads) = match grads {
            Some(g) => (Some(&mut g.mlp), g.hash.as_mut()),
            None => (None, None),
        };
        match (&self.encoding, &cache.hash) {
            (Some(enc), Some(hc)) => {
                let need_features = hash_grads.is_some() || want_input;
                let d_feat = self.mlp.backward(&cache.mlp, dz.view(), mlp_grads, need_features)?;
                enc.backward(hc, d_feat.view(), hash_grads, want_input)
            }
            _ => self.mlp.backward(&cache.mlp, dz.view(), mlp_grads, want_input),
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.mlp.flatten_into(&mut out);
        if let Some(e) = &self.encoding {
            out.extend_from_slice(e.params());
        }
        out
    }

    pub fn set_flat_params(&mut self, src: &[f64]) {
        let k = self.mlp.assign_from(src);
        if let Some(e) = &mut self.encoding {
            let p = e.params_mut();
            let n = p.len();
            p.copy_from_slice(&src[k..k + n]);
        }
    }
}
