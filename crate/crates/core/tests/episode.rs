mod common;

use afh_core::episode::{
    coverage_mask, export_trajectory, read_trajectory, run_episode, ActionMode, ContextSource,
    EpisodeConfig, Selector,
};
use afh_core::image::{crop_patch, PatchGeometry, PatchLocation};
use afh_core::nets::{policy_forward, RecurrentMemory};
use common::{randomize, random_image, tiny_params};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(steps: usize, mode: ActionMode) -> EpisodeConfig {
    EpisodeConfig {
        steps,
        geometry: PatchGeometry::new(4, 4),
        mode,
        ..EpisodeConfig::default()
    }
}

#[test]
fn zero_steps_return_the_input() {
    let params = tiny_params::<f64>(8, 8, 3, 4, 4, 1);
    let img = random_image(8, 8, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let traj = run_episode(&params, &img, &cfg(0, ActionMode::Sample), &mut rng).unwrap();
    assert_eq!(traj.steps(), 0);
    assert_eq!(traj.final_image, img);
}

#[test]
fn untrained_enhancer_leaves_the_image_unchanged() {
    let params = tiny_params::<f32>(8, 8, 3, 4, 4, 1);
    let img = random_image(8, 8, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for mode in [ActionMode::Sample, ActionMode::Greedy] {
        let traj = run_episode(&params, &img, &cfg(5, mode), &mut rng).unwrap();
        assert_eq!(traj.final_image, img);
    }
}

#[test]
fn greedy_episodes_are_reproducible() {
    let mut params = tiny_params::<f64>(8, 8, 3, 4, 4, 1);
    randomize(&mut params, 4, 0.3);
    let img = random_image(8, 8, 3, 5);
    let a = run_episode(&params, &img, &cfg(4, ActionMode::Greedy), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = run_episode(&params, &img, &cfg(4, ActionMode::Greedy), &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    assert_eq!(a, b);
    assert!(a.records.iter().all(|r| r.log_prob.is_none()));
}

#[test]
fn pixels_outside_every_patch_are_untouched() {
    let mut params = tiny_params::<f64>(8, 8, 3, 4, 4, 1);
    randomize(&mut params, 6, 0.4);
    let img = random_image(8, 8, 3, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let traj = run_episode(&params, &img, &cfg(2, ActionMode::Sample), &mut rng).unwrap();
    assert_ne!(traj.final_image, img);
    let covered = coverage_mask(&traj, 8, 8);
    for y in 0..8 {
        for x in 0..8 {
            if !covered[y * 8 + x] {
                for c in 0..3 {
                    assert_eq!(traj.final_image.get(y, x, c), img.get(y, x, c));
                }
            }
        }
    }
}

#[test]
fn stored_log_probs_match_the_policy() {
    let mut params = tiny_params::<f64>(8, 8, 1, 4, 4, 1);
    randomize(&mut params, 8, 0.5);
    let img = random_image(8, 8, 1, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let traj = run_episode(&params, &img, &cfg(3, ActionMode::Sample), &mut rng).unwrap();
    let contexts = traj.contexts().unwrap();
    let mut mem = RecurrentMemory::zeros(6);
    let mut prev = None;
    for (r, ctx) in traj.records.iter().zip(&contexts) {
        let (pm, next) = policy_forward(&params, ctx, &mem, prev).unwrap();
        let lp = r.log_prob.unwrap();
        assert!((lp.exp() - pm.get(r.loc)).abs() < 1e-12);
        mem = next;
        prev = Some(r.loc);
    }
}

#[test]
fn initial_context_feeds_the_input_image() {
    let mut params = tiny_params::<f64>(8, 8, 1, 4, 4, 1);
    randomize(&mut params, 8, 0.5);
    let img = random_image(8, 8, 1, 9);
    let c = EpisodeConfig {
        context: ContextSource::Initial,
        ..cfg(3, ActionMode::Sample)
    };
    let traj = run_episode(&params, &img, &c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    for ctx in traj.contexts().unwrap() {
        assert_eq!(ctx, img);
    }
}

#[test]
fn full_image_selector_needs_full_geometry() {
    let params = tiny_params::<f32>(8, 8, 1, 4, 4, 1);
    let img = random_image(8, 8, 1, 9);
    let c = EpisodeConfig {
        selector: Selector::FullImage,
        ..cfg(2, ActionMode::Greedy)
    };
    assert!(run_episode(&params, &img, &c, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    let params = tiny_params::<f32>(8, 8, 1, 8, 8, 1);
    let c = EpisodeConfig {
        geometry: PatchGeometry::new(8, 8),
        ..c
    };
    let traj = run_episode(&params, &img, &c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(traj.locations().iter().all(|&l| l == PatchLocation::new(5, 5)));
    assert_eq!(coverage_mask(&traj, 8, 8), vec![true; 64]);
}

#[test]
fn mismatched_input_is_rejected() {
    let params = tiny_params::<f32>(8, 8, 3, 4, 4, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let c = cfg(1, ActionMode::Greedy);
    assert!(run_episode(&params, &random_image(8, 8, 1, 1), &c, &mut rng).is_err());
    assert!(run_episode(&params, &random_image(9, 8, 3, 1), &c, &mut rng).is_err());
}

#[test]
fn exported_trajectory_reads_back() {
    let mut params = tiny_params::<f64>(8, 8, 3, 4, 4, 1);
    randomize(&mut params, 10, 0.3);
    let img = random_image(8, 8, 3, 11);
    let traj = run_episode(&params, &img, &cfg(3, ActionMode::Sample), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = export_trajectory(&traj, dir.path()).unwrap();
    assert_eq!(written.len(), 4 + 3 + 1);
    let back = read_trajectory(dir.path()).unwrap();
    assert_eq!(back.rows.len(), 3);
    assert_eq!(back.states.len(), 4);
    for (row, rec) in back.rows.iter().zip(&traj.records) {
        assert_eq!((row.x, row.y), (rec.loc.x, rec.loc.y));
        assert_eq!(row.log_prob, rec.log_prob);
    }
    for (a, b) in back.states.iter().zip(traj.states().unwrap()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-12));
    }
}

#[test]
fn corner_patches_carry_a_gray_band() {
    let img = random_image(8, 8, 3, 12);
    let geom = PatchGeometry::new(4, 4);
    let p = crop_patch(&img, PatchLocation::new(1, 1), &geom).unwrap();
    // Origin is (-2, -2): rows and columns 0..2 lie outside the image.
    for i in 0..4 {
        for j in 0..4 {
            for c in 0..3 {
                let want = if i < 2 || j < 2 { 0.5 } else { img.get(i - 2, j - 2, c) };
                assert_eq!(p.get(i, j, c), want);
            }
        }
    }
}

#[test]
fn manifest_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(read_trajectory(dir.path()).is_err());
    std::fs::write(
        dir.path().join("manifest.csv"),
        "step,x,y,log_prob,patch_height,patch_width,pad_value\n2,1,1,,4,4,0.5\n",
    )
    .unwrap();
    assert!(read_trajectory(dir.path()).is_err());
}
