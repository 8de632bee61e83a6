use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

/// Fully connected layer, `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn kaiming(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// ReLU network with a linear output layer. The output activation is applied
/// by the owning field network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl MlpGrads {
    pub fn zero(&mut self) {
        for (w, b) in &mut self.layers {
            w.fill(0.0);
            b.fill(0.0);
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.layers
            .iter()
            .map(|(w, b)| w.iter().map(|v| v * v).sum::<f64>() + b.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, k: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|v| v * k);
            b.mapv_inplace(|v| v * k);
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// `n_layers` linear layers: `n_layers - 1` hidden ReLU layers of `width`
    /// units and a zero-initialized output layer.
    pub fn new(input: usize, width: usize, output: usize, n_layers: usize, rng: &mut impl Rng) -> Self {
        assert!(n_layers >= 1, "an MLP needs at least its output layer");
        let mut layers = Vec::with_capacity(n_layers);
        let mut fan_in = input;
        for _ in 0..n_layers - 1 {
            layers.push(Linear::kaiming(fan_in, width, rng));
            fan_in = width;
        }
        layers.push(Linear::zeros(fan_in, output));
        Self { layers }
    }

    pub fn input_dims(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dims(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn new_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.raw_dim())))
                .collect(),
        }
    }

    /// Pre-activation output of the last layer, plus the cache for `backward`.
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            inputs.push(h);
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        (h, MlpCache { inputs })
    }

    /// Forward pass without keeping intermediate activations.
    pub fn infer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        h
    }

    pub fn backward(
        &self,
        cache: &MlpCache,
        d_out: ArrayView2<f64>,
        mut grads: Option<&mut MlpGrads>,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let mut dz = d_out.to_owned();
        for k in (0..self.layers.len()).rev() {
            let input = &cache.inputs[k];
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = &mut g.layers[k];
                ndarray::linalg::general_mat_mul(1.0, &input.t(), &dz, 1.0, gw);
                *gb += &dz.sum_axis(Axis(0));
            }
            if k == 0 && !want_input {
                return None;
            }
            let mut da = dz.dot(&self.layers[k].weight.t());
            if k == 0 {
                return Some(da);
            }
            ndarray::Zip::from(&mut da)
                .and(input)
                .for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            dz = da;
        }
        unreachable!()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
    }

    /// Reads parameters in [`flatten_into`](Self::flatten_into) order, returns how many were consumed.
    pub fn assign_from(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = src[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = src[k];
                k += 1;
            }
        }
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_output_layer_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(3, 8, 2, 4, &mut rng);
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f64 * 0.1);
        assert!(mlp.infer(x.view()).iter().all(|&v| v == 0.0));
        assert_eq!(mlp.param_count(), 3 * 8 + 8 + 2 * (8 * 8 + 8) + 8 * 2 + 2);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mlp = Mlp::new(3, 5, 2, 3, &mut rng);
        for l in &mut mlp.layers {
            l.weight.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64).sin());
        let w = Array2::from_shape_fn((4, 2), |(i, j)| ((i + 2 * j) as f64).cos());
        let loss = |m: &Mlp, x: ArrayView2<f64>| (&m.infer(x) * &w).sum();
        let (_, cache) = mlp.forward(x.view());
        let mut grads = mlp.new_grads();
        let dx = mlp.backward(&cache, w.view(), Some(&mut grads), true).unwrap();
        let mut flat = Vec::new();
        grads.flatten_into(&mut flat);
        let mut params = Vec::new();
        mlp.flatten_into(&mut params);
        let h = 1e-6;
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += h;
            mlp.assign_from(&p);
            let lp = loss(&mlp, x.view());
            p[k] -= 2.0 * h;
            mlp.assign_from(&p);
            let lm = loss(&mlp, x.view());
            assert!(((lp - lm) / (2.0 * h) - flat[k]).abs() < 1e-6);
        }
        mlp.assign_from(&params);
        for i in 0..4 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let lp = loss(&mlp, xp.view());
                xp[[i, j]] -= 2.0 * h;
                let lm = loss(&mlp, xp.view());
                assert!(((lp - lm) / (2.0 * h) - dx[[i, j]]).abs() < 1e-6);
            }
        }
    }
}
