use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::atlas_net::{HashGridConfig, NetworkConfig};
use crate::flow_graph::CorrPair;
use crate::media_io::{Frame, VideoGeometry};

fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        hash: HashGridConfig {
            n_levels: 1,
            features_per_level: 2,
            log2_table_size: 4,
            base_resolution: 3,
            per_level_scale: 2.0,
        },
        n_layers: 2,
        mask_width: 4,
        atlas_width: 4,
        mapping_width: 4,
        illum_width: 4,
    }
}

fn randomized(nets: &mut AtlasNetworks, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in NetworkId::ALL {
        let net = nets.get_mut(id);
        let p: Vec<f64> = net.flat_params().iter().map(|_| rng.random_range(-scale..scale)).collect();
        net.set_flat_params(&p);
    }
}

fn random_batch(g: &VideoGeometry, seed: u64) -> SampleBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pt = |rng: &mut ChaCha8Rng| [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9), rng.random_range(-1.0..1.0)];
    let mut b = SampleBatch::default();
    for _ in 0..12 {
        b.points.push(pt(&mut rng));
        b.colors.push([rng.random(), rng.random(), rng.random()]);
    }
    b.roi = 6..9;
    b.non_roi = 9..12;
    let _ = g;
    for _ in 0..4 {
        b.ref_pairs.push((pt(&mut rng), pt(&mut rng)));
        b.adj_pairs.push((pt(&mut rng), pt(&mut rng)));
    }
    b
}

#[test]
fn total_gradient_matches_central_differences() {
    let g = VideoGeometry::new(9, 9, 5);
    let mut nets = AtlasNetworks::new(tiny_config(), g, 2).unwrap();
    randomized(&mut nets, 11, 0.6);
    assert!(nets.param_count() <= 200, "{} parameters", nets.param_count());
    let batch = random_batch(&g, 4);
    let w = LossWeights::default();
    let mut grads = nets.new_grads();
    evaluate(&nets, &batch, &w, Some(&mut grads)).unwrap();
    let (mut total, mut good) = (0, 0);
    for id in NetworkId::ALL {
        let analytic = grads.get(id).flatten();
        let base = nets.get(id).flat_params();
        for k in 0..base.len() {
            let h = 1e-6;
            let mut probe = nets.clone();
            let mut p = base.clone();
            p[k] = base[k] + h;
            probe.get_mut(id).set_flat_params(&p);
            let fp = evaluate(&probe, &batch, &w, None).unwrap().total();
            p[k] = base[k] - h;
            probe.get_mut(id).set_flat_params(&p);
            let fm = evaluate(&probe, &batch, &w, None).unwrap().total();
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - analytic[k]).abs() / (fd.abs().max(analytic[k].abs()) + 1e-7);
            total += 1;
            if rel <= 1e-3 {
                good += 1;
            }
        }
    }
    assert!(good as f64 >= 0.99 * total as f64, "{good}/{total} parameters within tolerance");
}

#[test]
fn constant_fields_have_no_pair_losses() {
    // fresh networks: T = 0 and M = 0.5 everywhere
    let g = VideoGeometry::new(9, 9, 5);
    let nets = AtlasNetworks::new(tiny_config(), g, 1).unwrap();
    let mut batch = random_batch(&g, 2);
    batch.roi = 0..0;
    batch.non_roi = 0..0;
    let t = evaluate(&nets, &batch, &LossWeights::default(), None).unwrap();
    assert_eq!(t.corr, 0.0);
    assert_eq!(t.mask, 0.0);
}

#[test]
fn fresh_network_mask_and_illum_terms() {
    let g = VideoGeometry::new(9, 9, 5);
    let nets = AtlasNetworks::new(tiny_config(), g, 1).unwrap();
    let batch = random_batch(&g, 3);
    let w = LossWeights::default();
    let t = evaluate(&nets, &batch, &w, None).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((t.mask - w.mask_bce * 2.0 * ln2).abs() < 1e-12);
    assert!((t.illum - w.illum * 3.0 * (1.0 - ln2).powi(2)).abs() < 1e-12);
    assert_eq!(t.pos, 0.0 + w.pos * losses::pos_mean(
        &vec![[0.0, 0.0]; 3],
        &batch.points[6..9].iter().map(|p| [p[0], p[1]]).collect::<Vec<_>>(),
    ));
}

#[test]
fn terms_scale_linearly_with_weights() {
    let g = VideoGeometry::new(9, 9, 5);
    let mut nets = AtlasNetworks::new(tiny_config(), g, 2).unwrap();
    randomized(&mut nets, 5, 0.5);
    let batch = random_batch(&g, 6);
    let w = LossWeights::default();
    let base = evaluate(&nets, &batch, &w, None).unwrap();
    let k = 3.0;
    let scaled = LossWeights {
        rigid: w.rigid * k,
        pos: w.pos * k,
        corr_ref: w.corr_ref * k,
        corr_adj: w.corr_adj * k,
        mask_bce: w.mask_bce * k,
        mask_ref: w.mask_ref * k,
        mask_adj: w.mask_adj * k,
        illum: w.illum * k,
    };
    let s = evaluate(&nets, &batch, &scaled, None).unwrap();
    for ((_, a), (_, b)) in base.named().iter().zip(s.named().iter()).skip(1) {
        assert!((b - k * a).abs() <= 1e-12 * b.abs().max(1.0));
    }
    assert_eq!(base.recon, s.recon);
}

fn static_clip(w: usize, h: usize, n: usize) -> VideoClip {
    let f = Frame::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64, y as f64);
        [
            0.5 + 0.3 * (0.4 * x).sin(),
            0.5 + 0.3 * (0.3 * y + 0.2 * x).cos(),
            0.4 + 0.2 * (0.25 * (x - y)).sin(),
        ]
    });
    VideoClip::new(vec![f; n]).unwrap()
}

#[test]
fn bootstrap_fits_constant_targets() {
    let g = VideoGeometry::new(16, 12, 3);
    let schedule = TrainSchedule {
        bootstrap_iters: 150,
        batch_size: 128,
        ..TrainSchedule::default()
    };
    for (value, ok) in [(true, Box::new(|m: f64| m > 0.9) as Box<dyn Fn(f64) -> bool>), (false, Box::new(|m: f64| m < 0.1))] {
        let mut nets = AtlasNetworks::new(NetworkConfig::desk(), g, 3).unwrap();
        let before = nets.clone();
        let masks = vec![BinaryMask::filled(16, 12, value); 3];
        bootstrap(&mut nets, &masks, &schedule).unwrap();
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|i| g.normalize_subpixel((i % 16) as f64, ((i / 16) % 12) as f64, i % 3))
            .map(|c| [c.x, c.y, c.t])
            .collect();
        let m = nets.eval_mask(&pts).unwrap();
        let frac = m.iter().filter(|&&v| ok(v)).count() as f64 / m.len() as f64;
        assert!(frac >= 0.99, "target {value}: {frac}");
        assert_eq!(nets.atlas, before.atlas);
        assert_eq!(nets.illum, before.illum);
        let e0 = bootstrap_identity(&before, &pts, None);
        let e1 = bootstrap_identity(&nets, &pts, None);
        assert!(e1 < 0.1 * e0, "identity error {e0} -> {e1}");
    }
}

#[test]
fn bootstrap_needs_every_frame() {
    let g = VideoGeometry::new(8, 8, 3);
    let mut nets = AtlasNetworks::new(tiny_config(), g, 3).unwrap();
    let r = bootstrap(&mut nets, &vec![BinaryMask::new(8, 8); 2], &TrainSchedule::desk());
    assert!(matches!(r, Err(RnaError::Contract(_))));
}

fn full_roi_setup(n: usize) -> (VideoClip, RoiSpec, CorrespondenceSets) {
    let clip = static_clip(24, 20, n);
    let g = clip.geometry();
    let roi = RoiSpec::new(0, BinaryMask::filled(24, 20, true), &g).unwrap();
    let mut corr = CorrespondenceSets::default();
    for t in 1..n as u32 {
        for y in 0..20 {
            for x in 0..24 {
                corr.reference.push(CorrPair { src_x: x, src_y: y, src_t: t, dst_x: x as f32, dst_y: y as f32, dst_t: 0 });
                corr.adjacent.push(CorrPair { src_x: x, src_y: y, src_t: t, dst_x: x as f32, dst_y: y as f32, dst_t: t - 1 });
            }
        }
    }
    (clip, roi, corr)
}

#[test]
fn zero_iterations_leave_networks_unchanged() {
    let (clip, roi, corr) = full_roi_setup(2);
    let mut nets = AtlasNetworks::new(tiny_config(), clip.geometry(), 9).unwrap();
    let before = nets.clone();
    let schedule = TrainSchedule { main_iters: 0, ..TrainSchedule::desk() };
    let recs = train(&mut nets, &clip, &roi, &corr, &LossWeights::default(), &schedule, &mut NullSink).unwrap();
    assert!(recs.is_empty());
    assert_eq!(nets, before);
}

#[test]
fn seeded_runs_are_identical() {
    let (clip, roi, corr) = full_roi_setup(2);
    let schedule = TrainSchedule { main_iters: 30, batch_size: 64, log_every: 10, ..TrainSchedule::desk() };
    let run = || {
        let mut nets = AtlasNetworks::new(tiny_config(), clip.geometry(), 9).unwrap();
        let recs = train(&mut nets, &clip, &roi, &corr, &LossWeights::default(), &schedule, &mut NullSink).unwrap();
        (nets, recs)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra.len(), 3);
    assert_eq!(ra, rb);
    assert_eq!(a, b);
}

#[test]
fn non_finite_inputs_are_reported() {
    let g = VideoGeometry::new(9, 9, 5);
    let nets = AtlasNetworks::new(tiny_config(), g, 1).unwrap();
    let mut batch = random_batch(&g, 3);
    batch.colors[0][1] = f64::NAN;
    let t = evaluate(&nets, &batch, &LossWeights::default(), None).unwrap();
    match t.check_finite(7) {
        Err(RnaError::NonFinite { term, iter }) => {
            assert_eq!(term, "recon");
            assert_eq!(iter, 7);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn static_video_reaches_high_psnr() {
    let (clip, roi, corr) = full_roi_setup(4);
    let mut nets = AtlasNetworks::new(NetworkConfig::desk(), clip.geometry(), 4).unwrap();
    let masks = vec![BinaryMask::filled(24, 20, true); 4];
    let schedule = TrainSchedule {
        bootstrap_iters: 300,
        main_iters: 3000,
        batch_size: 256,
        ..TrainSchedule::desk()
    };
    bootstrap(&mut nets, &masks, &schedule).unwrap();
    let recs = train(&mut nets, &clip, &roi, &corr, &LossWeights::default(), &schedule, &mut NullSink).unwrap();
    let psnr = recs.last().unwrap().psnr_roi;
    assert!(psnr >= 40.0, "roi psnr {psnr}");
}

#[test]
fn lr_decay_runs_from_one_to_the_final_ratio() {
    assert_eq!(lr_decay(0.1, 1, 500), 1.0);
    assert!((lr_decay(0.1, 500, 500) - 0.1).abs() < 1e-12);
    assert!((lr_decay(0.01, 251, 501) - 0.1).abs() < 1e-12);
    assert_eq!(lr_decay(1.0, 300, 500), 1.0);
    assert_eq!(lr_decay(0.1, 1, 1), 1.0);
    let bad = TrainSchedule { lr_final_ratio: 0.0, ..TrainSchedule::desk() };
    assert!(bad.validate().is_err());
}
