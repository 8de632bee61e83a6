use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rna_core::atlas_net::{load_checkpoint, AtlasNetworks};
use rna_core::config::RunConfig;
use rna_core::flow_graph::{CorrespondenceSets, FileFlowProvider};
use rna_core::media_io::{load_atlas, load_frames, save_atlas, save_frames, write_flo, BinaryMask, FlowField, Frame};
use rna_core::pipeline::WorkDir;
use rna_core::soft_recon::SoftMaskStack;
use rna_core::synthetic::SyntheticScene;

fn rna(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rna"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rna(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn value(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in {stdout}"))
        .parse()
        .unwrap()
}

const SMALL: &str = "preset = desk
bootstrap_iters = 30
main_iters = 60
batch_size = 128
log_every = 20
refine_iters = 20
refine_batch_size = 128
refine_log_every = 10
atlas_resolution = 200
erode_px = 2
dilate_px = 2
";

/// Writes a scene and a config into a fresh directory.
fn setup(scene: &SyntheticScene, extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    scene.write_to(dir.path(), 7).unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("{SMALL}{extra}")).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn static_scene_runs_end_to_end() {
    let scene = SyntheticScene::static_scene(24, 20, 4);
    let (dir, cfg) = setup(&scene, "gt_dir = truth\n");
    let c = s(&cfg);
    let ws = WorkDir::new(dir.path().join("work"));

    let out = ok(&["prepare", "--config", c]);
    assert_eq!(value(&out, "reference_pairs"), (3 * 24 * 20) as f64);
    assert_eq!(value(&out, "adjacent_pairs"), (6 * 24 * 20) as f64);
    let g = scene.clip.geometry();
    let corr = CorrespondenceSets::load(&ws.pairs(), &g).unwrap();
    for p in corr.reference.iter().chain(&corr.adjacent) {
        assert_eq!((p.src_x as f32, p.src_y as f32), (p.dst_x, p.dst_y));
    }

    ok(&["train", "--config", c]);
    assert_eq!(fs::read_to_string(ws.metrics()).unwrap().lines().count(), 3);
    ok(&["refine", "--config", c]);
    assert!(ws.checkpoint_refined().is_file());
    assert!(ws.metrics_refine().is_file());
    ok(&["render-atlas", "--config", c]);
    assert_eq!(load_atlas(&ws.atlas()).unwrap().size, 200);
    let out = ok(&["matte", "--config", c]);
    assert_eq!(value(&out, "frames"), 4.0);

    let recon_dir = dir.path().join("same");
    ok(&["reconstruct", "--config", c, "--edited-atlas", s(&ws.atlas()), "--output", s(&recon_dir)]);
    let input = load_frames(&dir.path().join("frames")).unwrap();
    let output = load_frames(&recon_dir).unwrap();
    for (a, b) in input.frames().iter().zip(output.frames()) {
        assert_eq!(a.to_rgb8(), b.to_rgb8());
    }

    let out = ok(&["evaluate", "--config", c, "--roi-psnr", "--mask-iou", "--uv-drift"]);
    assert!(value(&out, "roi_psnr") > 10.0);
    // the static scene has no occluder, so there is no frame to score
    assert_eq!(value(&out, "mask_iou"), 1.0);
    assert!(value(&out, "uv_drift_median").is_finite());
}

#[test]
fn seeded_training_is_byte_identical() {
    let scene = SyntheticScene::static_scene(16, 12, 3);
    let (dir, cfg) = setup(&scene, "seed = 5\n");
    let c = s(&cfg);
    let ws = WorkDir::new(dir.path().join("work"));
    ok(&["prepare", "--config", c]);
    ok(&["train", "--config", c]);
    let log = fs::read(ws.metrics()).unwrap();
    let ckpt = fs::read(ws.checkpoint_train()).unwrap();
    fs::remove_dir_all(ws.root.clone()).unwrap();
    ok(&["prepare", "--config", c]);
    ok(&["train", "--config", c]);
    assert_eq!(fs::read(ws.metrics()).unwrap(), log);
    assert_eq!(fs::read(ws.checkpoint_train()).unwrap(), ckpt);
}

#[test]
fn zero_iteration_training_keeps_initial_networks() {
    let scene = SyntheticScene::static_scene(16, 12, 3);
    let (dir, cfg) = setup(&scene, "seed = 3\n");
    let c = s(&cfg);
    ok(&["prepare", "--config", c]);
    ok(&["train", "--config", c, "--bootstrap-iters", "0", "--main-iters", "0"]);
    let ws = WorkDir::new(dir.path().join("work"));
    let loaded = load_checkpoint(&ws.checkpoint_train()).unwrap();
    let conf = RunConfig::load(&cfg, &[]).unwrap();
    let fresh = AtlasNetworks::new(conf.network, scene.clip.geometry(), 3).unwrap();
    assert_eq!(loaded, fresh);
    assert_eq!(fs::read_to_string(ws.metrics()).unwrap(), "");
}

#[test]
fn translating_scene_pair_counts_match_oracle() {
    let (w, h, n) = (20usize, 12usize, 5usize);
    let dir = tempfile::tempdir().unwrap();
    let texture = |x: f64, y: f64| [0.5 + 0.4 * (0.7 * x).sin(), 0.5 + 0.4 * (0.5 * y + 0.3 * x).cos(), 0.5];
    let frames: Vec<Frame> = (0..n)
        .map(|t| Frame::from_fn(w, h, |x, y| texture(x as f64 - t as f64, y as f64)))
        .collect();
    save_frames(&frames, &dir.path().join("frames")).unwrap();
    BinaryMask::filled(w, h, true).save(&dir.path().join("roi.png")).unwrap();
    let flows = dir.path().join("flows");
    fs::create_dir_all(&flows).unwrap();
    for (a, b) in FileFlowProvider::required_pairs(n, 7) {
        let f = FlowField::from_fn(w, h, a, b, |_, _| Some((b as f64 - a as f64, 0.0)));
        write_flo(&f, &flows.join(FileFlowProvider::file_name(a, b))).unwrap();
    }
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("{SMALL}appearance_threshold = none\n")).unwrap();
    let out = ok(&["prepare", "--config", s(&cfg)]);

    // frame t pixel x lands at x - t in frame 0 and at x +- 1 in its neighbors
    let mut want_ref = 0;
    let mut want_adj = 0;
    for t in 0..n {
        for _y in 0..h {
            for x in 0..w as i64 {
                if t > 0 && x - t as i64 >= 0 {
                    want_ref += 1;
                }
                for (dt, ok) in [(-1i64, t > 0), (1, t + 1 < n)] {
                    if ok && (0..w as i64).contains(&(x + dt)) {
                        want_adj += 1;
                    }
                }
            }
        }
    }
    assert_eq!(value(&out, "reference_pairs"), want_ref as f64);
    assert_eq!(value(&out, "adjacent_pairs"), want_adj as f64);
    let g = load_frames(&dir.path().join("frames")).unwrap().geometry();
    let corr = CorrespondenceSets::load(&dir.path().join("work/pairs.bin"), &g).unwrap();
    for p in &corr.reference {
        assert!((p.dst_x - (p.src_x as f32 - p.src_t as f32)).abs() < 1e-4);
    }
}

#[test]
fn recolored_region_changes_only_mapped_pixels() {
    let scene = SyntheticScene::static_scene(24, 20, 3);
    let (dir, cfg) = setup(&scene, "");
    let c = s(&cfg);
    for cmd in ["prepare", "train", "render-atlas", "matte"] {
        ok(&[cmd, "--config", c]);
    }
    let ws = WorkDir::new(dir.path().join("work"));
    let render = load_atlas(&ws.atlas()).unwrap();
    let mut edited = render.clone();
    for j in 60..140 {
        for i in 40..100 {
            edited.set(i, j, [1.0, 0.0, 1.0]);
        }
    }
    let edit_path = dir.path().join("edit.png");
    save_atlas(&edited, &edit_path).unwrap();
    ok(&["reconstruct", "--config", c, "--edited-atlas", s(&edit_path)]);

    let nets = load_checkpoint(&ws.checkpoint_train()).unwrap();
    let soft = SoftMaskStack::load(&ws.alpha_dir(), 3).unwrap();
    let input = load_frames(&dir.path().join("frames")).unwrap();
    let output = load_frames(&ws.edited_dir()).unwrap();
    let g = input.geometry();
    let (mut changed, mut allowed) = (0, 0);
    for t in 0..3 {
        let pts: Vec<[f64; 3]> = (0..g.pixels_per_frame())
            .map(|i| {
                let c = g.normalize(i % g.width, i / g.width, t).unwrap();
                [c.x, c.y, c.t]
            })
            .collect();
        let uv = nets.eval_mapping(&pts).unwrap();
        for (i, q) in uv.iter().enumerate() {
            let (x, y) = (i % g.width, i / g.width);
            let (ci, cj) = render.nearest_cell(q[0], q[1]);
            // the atlas mask is the recolored block grown by one cell
            let in_region = (39..=100).contains(&ci) && (59..=140).contains(&cj);
            let may_change = in_region && soft.frames[t].get(x, y) > 0.0;
            let differs = input.pixel(x, y, t) != output.pixel(x, y, t);
            if differs {
                assert!(may_change, "pixel {x},{y},{t} changed outside the edit");
                changed += 1;
            }
            allowed += may_change as usize;
        }
    }
    assert!(allowed > 0, "edit region must reach some pixels");
    assert!(changed > 0);
}

#[test]
fn actionable_errors_and_exit_codes() {
    let scene = SyntheticScene::static_scene(16, 12, 3);
    let (dir, cfg) = setup(&scene, "");
    let c = s(&cfg);

    let out = rna(&["train", "--config", c]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rna prepare"));

    let out = rna(&["prepare", "--config", c, "--flows", s(&dir.path().join("nowhere"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("flow_0_1.flo") && err.contains("builtin_flow"), "{err}");

    let out = rna(&["prepare", "--config", c, "--frames", s(&dir.path().join("nowhere"))]);
    assert_eq!(out.status.code(), Some(1));

    let out = rna(&["prepare", "--config", c, "--learning-rate", "3"]);
    assert_eq!(out.status.code(), Some(3));

    let out = rna(&["prepare", "--config", c, "--batch-size", "2"]);
    assert_eq!(out.status.code(), Some(2));

    ok(&["prepare", "--config", c]);
    let out = rna(&["refine", "--config", c]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rna train"));

    ok(&["train", "--config", c, "--main-iters", "0", "--bootstrap-iters", "0"]);
    ok(&["render-atlas", "--config", c]);
    ok(&["matte", "--config", c]);
    let small = dir.path().join("small.png");
    save_atlas(&rna_core::media_io::AtlasImage::new(50), &small).unwrap();
    let out = rna(&["reconstruct", "--config", c, "--edited-atlas", s(&small)]);
    assert_eq!(out.status.code(), Some(2));
    let out = rna(&["reconstruct", "--config", c]);
    assert_eq!(out.status.code(), Some(2));

    let out = rna(&["evaluate", "--config", c, "--mask-iou"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gt_dir"));
}

#[test]
fn builtin_flow_prepares_without_flow_files() {
    let scene = SyntheticScene::static_scene(16, 12, 3);
    let (dir, cfg) = setup(&scene, "builtin_flow = true\nblock_match_radius = 2\n");
    fs::remove_dir_all(dir.path().join("flows")).unwrap();
    let out = ok(&["prepare", "--config", s(&cfg)]);
    assert_eq!(value(&out, "reference_pairs"), (2 * 16 * 12) as f64);
}

#[test]
fn external_matting_uses_the_given_alphas() {
    let scene = SyntheticScene::static_scene(16, 12, 3);
    let (dir, cfg) = setup(&scene, "");
    let c = s(&cfg);
    ok(&["prepare", "--config", c]);
    ok(&["train", "--config", c]);
    let alpha_in = dir.path().join("alpha_in");
    let out = rna(&["matte", "--config", c, "--matting", "external", "--alpha-dir", s(&alpha_in)]);
    assert_eq!(out.status.code(), Some(3));
}
