use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::batch::SampleBatch;
use super::losses::{self, Jacobian, LOG_CLAMP};
use super::LossWeights;
use crate::atlas_net::{compose_recon, jacobian_from_samples, AtlasGrads, AtlasNetworks};
use crate::error::{Result, RnaError};

/// Finite-difference offset of the Jacobian, in pixels.
pub const JACOBIAN_DELTA_PX: f64 = 1.0;

/// Weighted value of every term of the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub recon: f64,
    pub rigid: f64,
    pub pos: f64,
    pub corr: f64,
    pub mask: f64,
    pub illum: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.recon + self.rigid + self.pos + self.corr + self.mask + self.illum
    }

    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("recon", self.recon),
            ("rigid", self.rigid),
            ("pos", self.pos),
            ("corr", self.corr),
            ("mask", self.mask),
            ("illum", self.illum),
        ]
    }

    /// Errors with the name of the first non-finite term.
    pub fn check_finite(&self, iter: usize) -> Result<()> {
        match self.named().iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(RnaError::NonFinite { term: name.to_string(), iter }),
            None => Ok(()),
        }
    }

    pub fn add_scaled(&mut self, other: &LossTerms, k: f64) {
        self.recon += k * other.recon;
        self.rigid += k * other.rigid;
        self.pos += k * other.pos;
        self.corr += k * other.corr;
        self.mask += k * other.mask;
        self.illum += k * other.illum;
    }
}

fn rows2(a: &Array2<f64>, r: std::ops::Range<usize>) -> Vec<[f64; 2]> {
    r.map(|i| [a[[i, 0]], a[[i, 1]]]).collect()
}

fn rows3(a: &Array2<f64>, r: std::ops::Range<usize>) -> Vec<[f64; 3]> {
    r.map(|i| [a[[i, 0]], a[[i, 1]], a[[i, 2]]]).collect()
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> ([f64; 2], f64) {
    let d = [a[0] - b[0], a[1] - b[1]];
    (d, (d[0] * d[0] + d[1] * d[1]).sqrt())
}

/// Evaluates the full objective on `batch`. When `grads` is given, the
/// gradient of the weighted total is accumulated into it.
///
/// The illumination regularizer sees `T` as a constant, so `L`'s input
/// gradient carries only the reconstruction term.
pub fn evaluate(
    nets: &AtlasNetworks,
    batch: &SampleBatch,
    w: &LossWeights,
    grads: Option<&mut AtlasGrads>,
) -> Result<LossTerms> {
    let n = batch.len();
    let a = batch.ref_pairs.len();
    let b = batch.adj_pairs.len();
    if batch.colors.len() != n {
        return Err(RnaError::contract("batch colors and points differ in length"));
    }
    if n == 0 {
        return Ok(LossTerms::default());
    }
    let (px, py) = nets.offset_points(&batch.points, JACOBIAN_DELTA_PX);

    // mapping queries: P, P+dx, P+dy, ref src, ref dst, adj src, adj dst
    let n_t = 3 * n + 2 * a + 2 * b;
    let mut t_in = Array2::<f64>::zeros((n_t, 3));
    // mask queries: P, ref src, ref dst, adj src, adj dst
    let n_m = n + 2 * a + 2 * b;
    let mut m_in = Array2::<f64>::zeros((n_m, 3));
    {
        let put = |arr: &mut Array2<f64>, row: usize, p: &[f64; 3]| {
            for k in 0..3 {
                arr[[row, k]] = p[k];
            }
        };
        for i in 0..n {
            put(&mut t_in, i, &batch.points[i]);
            put(&mut t_in, n + i, &px[i]);
            put(&mut t_in, 2 * n + i, &py[i]);
            put(&mut m_in, i, &batch.points[i]);
        }
        for (k, (s, d)) in batch.ref_pairs.iter().enumerate() {
            put(&mut t_in, 3 * n + k, s);
            put(&mut t_in, 3 * n + a + k, d);
            put(&mut m_in, n + k, s);
            put(&mut m_in, n + a + k, d);
        }
        for (k, (s, d)) in batch.adj_pairs.iter().enumerate() {
            put(&mut t_in, 3 * n + 2 * a + k, s);
            put(&mut t_in, 3 * n + 2 * a + b + k, d);
            put(&mut m_in, n + 2 * a + k, s);
            put(&mut m_in, n + 2 * a + b + k, d);
        }
    }
    if t_in.iter().any(|v| !v.is_finite()) {
        return Err(RnaError::contract("non-finite sample coordinates"));
    }

    let (t_out, t_cache) = nets.mapping.forward(t_in.view());
    let (m_out, m_cache) = nets.mask.forward(m_in.view());
    let uv_p = t_out.slice(ndarray::s![0..n, ..]).to_owned();
    let (a_out, a_cache) = nets.atlas.forward(uv_p.view());
    let mut l_in = Array2::<f64>::zeros((n, 3));
    for i in 0..n {
        l_in[[i, 0]] = uv_p[[i, 0]];
        l_in[[i, 1]] = uv_p[[i, 1]];
        l_in[[i, 2]] = batch.points[i][2];
    }
    let (l_out, l_cache) = nets.illum.forward(l_in.view());

    let mask: Vec<f64> = m_out.column(0).to_vec();
    let atlas = rows3(&a_out, 0..n);
    let illum = rows3(&l_out, 0..n);
    let recon: Vec<[f64; 3]> = (0..n)
        .map(|i| compose_recon(mask[i], illum[i], atlas[i], batch.colors[i]))
        .collect();
    let uv0 = rows2(&t_out, 0..n);
    let uvx = rows2(&t_out, n..2 * n);
    let uvy = rows2(&t_out, 2 * n..3 * n);
    let geom = nets.geometry;
    let jac: Vec<Jacobian> = (0..n)
        .map(|i| jacobian_from_samples(uv0[i], uvx[i], uvy[i], &geom, JACOBIAN_DELTA_PX))
        .collect();
    let uv_rs = rows2(&t_out, 3 * n..3 * n + a);
    let uv_rd = rows2(&t_out, 3 * n + a..3 * n + 2 * a);
    let uv_as = rows2(&t_out, 3 * n + 2 * a..3 * n + 2 * a + b);
    let uv_ad = rows2(&t_out, 3 * n + 2 * a + b..n_t);
    let m_rs = &mask_rows(&m_out, n, a)[..];
    let m_rd = &mask_rows(&m_out, n + a, a)[..];
    let m_as = &mask_rows(&m_out, n + 2 * a, b)[..];
    let m_ad = &mask_rows(&m_out, n + 2 * a + b, b)[..];
    let roi_uv = uv0[batch.roi.clone()].to_vec();
    let roi_xy: Vec<[f64; 2]> = batch.points[batch.roi.clone()].iter().map(|p| [p[0], p[1]]).collect();

    let sh = batch.shares;
    let terms = LossTerms {
        recon: losses::recon_loss(&recon, &batch.colors),
        rigid: w.rigid * losses::rigidity_mean(&jac),
        pos: w.pos * sh.roi * losses::pos_mean(&roi_uv, &roi_xy),
        corr: w.corr_ref * sh.ref_pairs * losses::corr_mean(m_rs, &uv_rs, &uv_rd)
            + w.corr_adj * sh.adj_pairs * losses::corr_mean(m_as, &uv_as, &uv_ad),
        mask: w.mask_bce * sh.roi * losses::bce_pair(&mask[batch.roi.clone()], &[])
            + w.mask_bce * sh.non_roi * losses::bce_pair(&[], &mask[batch.non_roi.clone()])
            + w.mask_ref * sh.ref_pairs * losses::propagation_mean(m_rs, m_rd)
            + w.mask_adj * sh.adj_pairs * losses::propagation_mean(m_as, m_ad),
        illum: w.illum * losses::illum_mean(&illum),
    };

    let Some(grads) = grads else { return Ok(terms) };

    let nf = n as f64;
    let mut d_t = Array2::<f64>::zeros((n_t, 2));
    let mut d_m = Array2::<f64>::zeros((n_m, 1));
    let mut d_a = Array2::<f64>::zeros((n, 3));
    let mut d_l_recon = Array2::<f64>::zeros((n, 3));
    let mut d_l_total = Array2::<f64>::zeros((n, 3));

    let g_rec = losses::recon_grad(&recon, &batch.colors);
    for i in 0..n {
        for k in 0..3 {
            let g = g_rec[i][k];
            d_m[[i, 0]] += g * (illum[i][k] * atlas[i][k] - batch.colors[i][k]);
            d_a[[i, k]] = g * mask[i] * illum[i][k];
            d_l_recon[[i, k]] = g * mask[i] * atlas[i][k];
            d_l_total[[i, k]] = d_l_recon[[i, k]] + w.illum * 2.0 * (illum[i][k] - 1.0) / nf;
        }
    }

    let (sx, sy) = geom.pixel_step();
    let r = [1.0 / (sx * JACOBIAN_DELTA_PX), 1.0 / (sy * JACOBIAN_DELTA_PX)];
    for i in 0..n {
        let (_, gj) = losses::rigidity_point_grad(&jac[i]);
        for c in 0..2 {
            // row c of J is the (u, v)[c] component
            let g0 = w.rigid / nf * gj[c][0] * r[c];
            let g1 = w.rigid / nf * gj[c][1] * r[c];
            d_t[[n + i, c]] += g0;
            d_t[[2 * n + i, c]] += g1;
            d_t[[i, c]] -= g0 + g1;
        }
    }

    let n_roi = batch.roi.len();
    for (k, i) in batch.roi.clone().enumerate() {
        let (d, dist) = dist2(roi_uv[k], roi_xy[k]);
        if dist > 0.0 {
            for c in 0..2 {
                d_t[[i, c]] += w.pos * sh.roi / n_roi as f64 * d[c] / dist;
            }
        }
    }

    let mut pair_grads = |lam_corr: f64, lam_prop: f64, count: usize, src_t: usize, dst_t: usize, src_m: usize, dst_m: usize, us: &[[f64; 2]], ud: &[[f64; 2]], ms: &[f64], md: &[f64]| {
        if count == 0 {
            return;
        }
        let kc = lam_corr / count as f64;
        let kp = lam_prop / count as f64;
        for j in 0..count {
            let (d, dist) = dist2(us[j], ud[j]);
            d_m[[src_m + j, 0]] += kc * dist;
            if dist > 0.0 {
                for c in 0..2 {
                    let g = kc * ms[j] * d[c] / dist;
                    d_t[[src_t + j, c]] += g;
                    d_t[[dst_t + j, c]] -= g;
                }
            }
            let s = sign(ms[j] - md[j]);
            d_m[[src_m + j, 0]] += kp * s;
            d_m[[dst_m + j, 0]] -= kp * s;
        }
    };
    pair_grads(w.corr_ref * sh.ref_pairs, w.mask_ref * sh.ref_pairs, a, 3 * n, 3 * n + a, n, n + a, &uv_rs, &uv_rd, m_rs, m_rd);
    pair_grads(
        w.corr_adj * sh.adj_pairs,
        w.mask_adj * sh.adj_pairs,
        b,
        3 * n + 2 * a,
        3 * n + 2 * a + b,
        n + 2 * a,
        n + 2 * a + b,
        &uv_as,
        &uv_ad,
        m_as,
        m_ad,
    );

    let n_in = batch.roi.len();
    let n_out = batch.non_roi.len();
    for i in batch.roi.clone() {
        if mask[i] > LOG_CLAMP {
            d_m[[i, 0]] -= w.mask_bce * sh.roi / n_in as f64 / mask[i];
        }
    }
    for i in batch.non_roi.clone() {
        if 1.0 - mask[i] > LOG_CLAMP {
            d_m[[i, 0]] += w.mask_bce * sh.non_roi / n_out as f64 / (1.0 - mask[i]);
        }
    }

    let d_uv_a = nets
        .atlas
        .backward(&a_cache, d_a.view(), Some(&mut grads.atlas), true)
        .expect("input gradient requested");
    nets.illum.backward(&l_cache, d_l_total.view(), Some(&mut grads.illum), false);
    let d_uv_l = nets
        .illum
        .backward(&l_cache, d_l_recon.view(), None, true)
        .expect("input gradient requested");
    for i in 0..n {
        for c in 0..2 {
            d_t[[i, c]] += d_uv_a[[i, c]] + d_uv_l[[i, c]];
        }
    }
    nets.mapping.backward(&t_cache, d_t.view(), Some(&mut grads.mapping), false);
    nets.mask.backward(&m_cache, d_m.view(), Some(&mut grads.mask), false);
    Ok(terms)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mask_rows(m: &Array2<f64>, start: usize, len: usize) -> Vec<f64> {
    (start..start + len).map(|i| m[[i, 0]]).collect()
}

/// Mean binary cross-entropy of `M` against per-point targets in `{0, 1}`,
/// accumulating mask gradients when `grads` is given.
pub fn bootstrap_bce(
    nets: &AtlasNetworks,
    points: &[[f64; 3]],
    targets: &[f64],
    grads: Option<&mut AtlasGrads>,
) -> Result<f64> {
    let n = points.len();
    if targets.len() != n {
        return Err(RnaError::contract("bootstrap targets and points differ in length"));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let input = crate::atlas_net::to_array(points);
    let (out, cache) = nets.mask.forward(input.view());
    let nf = n as f64;
    let mut loss = 0.0;
    let mut d = Array2::<f64>::zeros((n, 1));
    for i in 0..n {
        let m = out[[i, 0]];
        let y = targets[i];
        loss -= y * m.max(LOG_CLAMP).ln() + (1.0 - y) * (1.0 - m).max(LOG_CLAMP).ln();
        let mut g = 0.0;
        if m > LOG_CLAMP {
            g -= y / m;
        }
        if 1.0 - m > LOG_CLAMP {
            g += (1.0 - y) / (1.0 - m);
        }
        d[[i, 0]] = g / nf;
    }
    if let Some(grads) = grads {
        nets.mask.backward(&cache, d.view(), Some(&mut grads.mask), false);
    }
    Ok(loss / nf)
}

/// Mean squared distance between `T` and the identity map on `(x, y)`.
/// Pulls the mapping off its degenerate zero start before joint training.
pub fn bootstrap_identity(nets: &AtlasNetworks, points: &[[f64; 3]], grads: Option<&mut AtlasGrads>) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let input = crate::atlas_net::to_array(points);
    let (out, cache) = nets.mapping.forward(input.view());
    let nf = n as f64;
    let mut loss = 0.0;
    let mut d = Array2::<f64>::zeros((n, 2));
    for (i, p) in points.iter().enumerate() {
        for c in 0..2 {
            let e = out[[i, c]] - p[c];
            loss += e * e;
            d[[i, c]] = 2.0 * e / nf;
        }
    }
    if let Some(grads) = grads {
        nets.mapping.backward(&cache, d.view(), Some(&mut grads.mapping), false);
    }
    loss / nf
}
