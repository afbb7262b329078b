use gonogo_scene::render::{bottom_band_variance, SUPPORTED_SIDES};
use gonogo_scene::world::{look_ahead, View};
use gonogo_scene::{render_scene, simulate_run, SceneKind, SceneParams, SimOptions, World};

#[test]
fn same_seed_same_image() {
    for kind in [SceneKind::Corridor, SceneKind::Obstacle, SceneKind::Edge] {
        let p = SceneParams::new(42, 32, kind);
        let (a, _) = render_scene(&p).unwrap();
        let (b, _) = render_scene(&p).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn traversability_follows_kind_and_distance() {
    assert!(render_scene(&SceneParams::new(1, 32, SceneKind::Corridor)).unwrap().1);
    assert!(!render_scene(&SceneParams::new(1, 32, SceneKind::Obstacle)).unwrap().1);
    assert!(!render_scene(&SceneParams::new(1, 32, SceneKind::Edge)).unwrap().1);
    assert!(render_scene(&SceneParams::new(1, 32, SceneKind::Edge).at_distance(3)).unwrap().1);
}

#[test]
fn pixels_are_quantized_unit_values() {
    for &side in &SUPPORTED_SIDES {
        let (img, _) = render_scene(&SceneParams::new(9, side, SceneKind::Obstacle)).unwrap();
        assert_eq!(img.shape(), &[3, side, side]);
        for &v in img.data() {
            assert!((0.0..=1.0).contains(&v));
            let k = (v * 255.0).round();
            assert_eq!(k / 255.0, v);
        }
    }
}

#[test]
fn rejects_invalid_params() {
    let mut p = SceneParams::new(1, 32, SceneKind::Corridor);
    p.noise = 0.3;
    assert!(render_scene(&p).is_err());
    let p = SceneParams::new(1, 30, SceneKind::Corridor);
    assert!(render_scene(&p).is_err());
    let mut p = SceneParams::new(1, 32, SceneKind::Corridor);
    p.palette.floor = (0.6, 0.2);
    assert!(render_scene(&p).is_err());
}

#[test]
fn hazards_raise_bottom_band_variance() {
    let mean_var = |kind: SceneKind| {
        (0..1000u64)
            .map(|s| {
                let (img, _) = render_scene(&SceneParams::new(s, 32, kind)).unwrap();
                bottom_band_variance(&img, 0.125)
            })
            .sum::<f64>()
            / 1000.0
    };
    let corridor = mean_var(SceneKind::Corridor);
    let obstacle = mean_var(SceneKind::Obstacle);
    let edge = mean_var(SceneKind::Edge);
    assert!(obstacle > corridor, "{obstacle} vs {corridor}");
    assert!(edge > corridor, "{edge} vs {corridor}");
}

#[test]
fn far_obstacles_leave_the_bottom_band_alone() {
    for s in 0..50u64 {
        let (near, _) = render_scene(&SceneParams::new(s, 32, SceneKind::Corridor)).unwrap();
        let (far, _) = render_scene(&SceneParams::new(s, 32, SceneKind::Obstacle).at_distance(2)).unwrap();
        let band = 4 * 32;
        for ch in 0..3 {
            let off = ch * 32 * 32 + 28 * 32;
            assert_eq!(&near.data()[off..off + band], &far.data()[off..off + band], "seed {s}");
        }
    }
}

#[test]
fn open_world_runs_at_cruise_speed() {
    let trace = simulate_run(&World::open(3, 30), 200, &SimOptions { side: 8, ..Default::default() }).unwrap();
    assert_eq!(trace.len(), 200);
    assert_eq!(trace.frames.len(), 200);
    assert_eq!(trace.poses.len(), 200);
    assert!(trace.velocities.iter().all(|&v| v >= 0.5));
}

#[test]
fn wall_forces_slow_approach_and_turn() {
    let world = World::with_wall(4, 30, 10);
    let trace = simulate_run(&world, 60, &SimOptions { side: 8, ..Default::default() }).unwrap();
    let near: Vec<usize> = (0..trace.len())
        .filter(|&i| trace.poses[i].x >= 7.5 && trace.poses[i].x < 10.0 && trace.poses[i].heading == 0.0)
        .collect();
    assert!(!near.is_empty());
    for i in near.iter().copied().filter(|&i| trace.poses[i].x >= 8.0) {
        assert!(trace.velocities[i] < 0.3, "step {i}: {}", trace.velocities[i]);
    }
    assert!(trace.poses.iter().all(|p| p.x < 10.0 || p.x > 11.0));
    assert!(trace.poses.iter().any(|p| p.heading != 0.0));
    assert!(trace.velocities.iter().all(|&v| v >= 0.0));
}

#[test]
fn runs_are_deterministic() {
    let world = World::random(17, 40, 0.2);
    let opts = SimOptions { side: 16, ..Default::default() };
    let a = simulate_run(&world, 80, &opts).unwrap();
    let b = simulate_run(&world, 80, &opts).unwrap();
    assert_eq!(a.velocities, b.velocities);
    assert_eq!(a.poses, b.poses);
    assert_eq!(a.frames, b.frames);
}

#[test]
fn random_worlds_never_close_every_lane() {
    let world = World::random(8, 100, 0.9);
    for x in 0..100i64 {
        assert!((0..3).any(|l| world.hazard(x, l).is_none()));
    }
    assert_eq!(look_ahead(&World::open(1, 10), 0, 1, 1), View::clear());
}

#[test]
fn robot_never_drives_into_a_hazard_cell() {
    for seed in 0..20 {
        let world = World::random(seed, 40, 0.2);
        let trace = simulate_run(&world, 150, &SimOptions { side: 8, ..Default::default() }).unwrap();
        for p in &trace.poses {
            let lane = p.y.floor() as usize;
            assert!(world.hazard(p.x.floor() as i64, lane).is_none(), "seed {seed}: {p:?}");
        }
    }
}
