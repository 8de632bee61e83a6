use ndarray::{Array1, Array2};

use crate::atlas_net::{AtlasGrads, AtlasNetworks, FieldGrads, FieldNet, NetworkId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr_mlp: f64,
    pub lr_hash: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr_mlp: f64, lr_hash: f64) -> Self {
        Self {
            lr_mlp,
            lr_hash,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct NetState {
    mlp: Vec<(Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>)>,
    hash_m: Vec<f64>,
    hash_v: Vec<f64>,
}

impl NetState {
    fn new(net: &FieldNet) -> Self {
        let mlp = net
            .mlp
            .layers
            .iter()
            .map(|l| {
                (
                    Array2::zeros(l.weight.raw_dim()),
                    Array1::zeros(l.bias.raw_dim()),
                    Array2::zeros(l.weight.raw_dim()),
                    Array1::zeros(l.bias.raw_dim()),
                )
            })
            .collect();
        let n_hash = net.encoding.as_ref().map_or(0, |e| e.params().len());
        Self {
            mlp,
            hash_m: vec![0.0; n_hash],
            hash_v: vec![0.0; n_hash],
        }
    }
}

/// Adam over the four networks. Hash tables are updated sparsely: only
/// entries touched by the current gradient move, with the global step count
/// used for bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    lr_scale: f64,
    states: Vec<NetState>,
}

#[inline]
fn update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, c: &AdamConfig, bc1: f64, bc2: f64) {
    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
    let mh = *m / bc1;
    let vh = *v / bc2;
    *p -= lr * mh / (vh.sqrt() + c.eps);
}

impl Adam {
    pub fn new(nets: &AtlasNetworks, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            lr_scale: 1.0,
            states: NetworkId::ALL.iter().map(|&id| NetState::new(nets.get(id))).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Multiplies both learning rates of the following steps by `k`.
    pub fn set_lr_scale(&mut self, k: f64) {
        self.lr_scale = k;
    }

    /// One update of the listed networks from `grads`.
    pub fn step(&mut self, nets: &mut AtlasNetworks, grads: &AtlasGrads, which: &[NetworkId]) {
        self.step += 1;
        let c = self.cfg;
        let (lr_mlp, lr_hash) = (c.lr_mlp * self.lr_scale, c.lr_hash * self.lr_scale);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for &id in which {
            let idx = NetworkId::ALL.iter().position(|&x| x == id).unwrap();
            let state = &mut self.states[idx];
            let net = nets.get_mut(id);
            let g: &FieldGrads = grads.get(id);
            for (layer, ((mw, mb, vw, vb), (gw, gb))) in net
                .mlp
                .layers
                .iter_mut()
                .zip(state.mlp.iter_mut().zip(g.mlp.layers.iter()))
            {
                for (((p, &gv), m), v) in layer.weight.iter_mut().zip(gw.iter()).zip(mw.iter_mut()).zip(vw.iter_mut()) {
                    update(p, gv, m, v, lr_mlp, &c, bc1, bc2);
                }
                for (((p, &gv), m), v) in layer.bias.iter_mut().zip(gb.iter()).zip(mb.iter_mut()).zip(vb.iter_mut()) {
                    update(p, gv, m, v, lr_mlp, &c, bc1, bc2);
                }
            }
            if let (Some(enc), Some(hg)) = (net.encoding.as_mut(), g.hash.as_ref()) {
                let f = hg.features();
                let params = enc.params_mut();
                let dense = hg.as_dense();
                for &e in hg.touched() {
                    let base = e as usize * f;
                    for k in base..base + f {
                        update(
                            &mut params[k],
                            dense[k],
                            &mut state.hash_m[k],
                            &mut state.hash_v[k],
                            lr_hash,
                            &c,
                            bc1,
                            bc2,
                        );
                    }
                }
            }
        }
    }
}

/// Rescales each listed network's gradient so its L2 norm is at most
/// `max_norm`. Returns the largest norm before clipping.
pub fn clip_per_network(grads: &mut AtlasGrads, which: &[NetworkId], max_norm: f64) -> f64 {
    let mut largest = 0.0f64;
    for &id in which {
        let norm = grads.get(id).sum_squares().sqrt();
        if norm > max_norm && norm.is_finite() {
            grads.get_mut(id).scale(max_norm / norm);
        }
        largest = largest.max(norm);
    }
    largest
}
