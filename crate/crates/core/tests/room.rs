//! Simulated decay against Eyring's formula.

use bsm::config::{Profile, ResolvedConfig};
use bsm::pipeline::Pipeline;
use bsm::scene::{estimate_t60, Component, RoomSpec, Scene};

fn desk_scene() -> Scene {
    let config = ResolvedConfig::load(None, Profile::Desk, None).unwrap();
    Pipeline::new(config, std::env::temp_dir()).unwrap().scene(vec![1.0]).unwrap()
}

fn schroeder_t60(scene: &Scene) -> f64 {
    estimate_t60(&scene.center_rir(Component::Full).unwrap(), scene.sample_rate).unwrap()
}

#[test]
fn uniform_walls_decay_as_eyring_predicts() {
    let mut scene = desk_scene();
    scene.room = RoomSpec::uniform([4.0, 3.0, 2.5], 0.8, 343.0).unwrap().translated(scene.room.origin);
    scene.max_order = 30;
    let predicted = scene.room.eyring_t60();
    let t60 = schroeder_t60(&scene);
    assert!((t60 / predicted - 1.0).abs() <= 0.25, "T60 {t60} vs Eyring {predicted}");
}

#[test]
fn eyring_inverted_walls_reach_the_target() {
    let mut scene = desk_scene();
    scene.room = RoomSpec::from_t60([4.0, 3.0, 2.5], 0.3, 343.0).unwrap().translated(scene.room.origin);
    let t60 = schroeder_t60(&scene);
    assert!((t60 / 0.3 - 1.0).abs() <= 0.25, "T60 {t60}");
}
