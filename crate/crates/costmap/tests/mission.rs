use gonogo_core::scoring::Decision;
use gonogo_costmap::{
    drive_simulated_mission, Cell, Classifier, GroundTruth, MissionConfig, MissionOutcome, Observation, Result,
    Verdict,
};
use gonogo_scene::{SceneKind, World};

#[test]
fn open_world_goes_straight() {
    let world = World::open(1, 20);
    let cfg = MissionConfig::new(Cell::new(0, 1), Cell::new(15, 1));
    let r = drive_simulated_mission(&world, &mut GroundTruth, &cfg).unwrap();
    assert_eq!(r.outcome, MissionOutcome::Reached);
    assert_eq!(r.trajectory.len(), 16);
    assert!(r.trajectory.iter().all(|c| c.y == 1));
    assert_eq!(r.map.lethal_count(), 0);
    assert!(r.log.iter().all(|e| e.decision == Decision::Go && !e.replanned));
}

#[test]
fn single_obstacle_forces_a_detour() {
    let mut world = World::open(2, 20);
    world.set(8, 1, Some(SceneKind::Obstacle));
    let cfg = MissionConfig::new(Cell::new(0, 1), Cell::new(15, 1));
    let r = drive_simulated_mission(&world, &mut GroundTruth, &cfg).unwrap();
    assert_eq!(r.outcome, MissionOutcome::Reached);
    assert!(r.trajectory.iter().all(|c| world.hazard(c.x as i64, c.y).is_none()));
    assert!(r.trajectory.iter().any(|c| c.y != 1), "no detour: {:?}", r.trajectory);
    assert!(r.trajectory.iter().all(|&c| r.map.cost(c) < 200));
    assert_eq!(r.map.cost(Cell::new(8, 1)), 254);
    assert_eq!(r.log.iter().filter(|e| e.replanned).count(), 1);
    assert!(r.log.iter().all(|e| !e.bumped));
    assert_eq!(r.agreement(), 1.0);
}

#[test]
fn fully_blocked_corridor_has_no_path() {
    let world = World::with_wall(3, 20, 6);
    let cfg = MissionConfig::new(Cell::new(0, 1), Cell::new(15, 1));
    let r = drive_simulated_mission(&world, &mut GroundTruth, &cfg).unwrap();
    assert_eq!(r.outcome, MissionOutcome::NoPath);
    assert!(r.trajectory.iter().all(|c| c.x < 6));
}

struct AlwaysGo;

impl Classifier for AlwaysGo {
    fn classify(&mut self, _: &Observation<'_>) -> Result<Verdict> {
        Ok(Verdict {
            decision: Decision::Go,
            anomaly: None,
        })
    }
}

#[test]
fn a_blind_robot_is_stopped_by_physics_and_times_out() {
    let mut world = World::open(4, 20);
    world.set(5, 1, Some(SceneKind::Obstacle));
    let cfg = MissionConfig {
        max_steps: 30,
        ..MissionConfig::new(Cell::new(0, 1), Cell::new(15, 1))
    };
    let r = drive_simulated_mission(&world, &mut AlwaysGo, &cfg).unwrap();
    assert_eq!(r.outcome, MissionOutcome::Timeout);
    assert_eq!(r.trajectory.last(), Some(&Cell::new(4, 1)));
    assert!(r.log.iter().any(|e| e.bumped));
    assert!(r.agreement() < 1.0);
}

#[test]
fn one_log_entry_per_move() {
    let world = World::open(1, 10);
    let cfg = MissionConfig::new(Cell::new(0, 0), Cell::new(3, 0));
    let r = drive_simulated_mission(&world, &mut GroundTruth, &cfg).unwrap();
    assert_eq!(r.log.len(), 3);
    assert_eq!(r.log[0].step, 0);
}
