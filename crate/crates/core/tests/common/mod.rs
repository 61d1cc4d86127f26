#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use tdcr_core::kinematics::{RobotSpec, TendonRouting};

pub fn presets_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

pub fn eight_robot() -> RobotSpec {
    RobotSpec::load(presets_dir().join("robot_eight.toml")).unwrap()
}

pub fn anatomy_robot() -> RobotSpec {
    RobotSpec::load(presets_dir().join("robot_anatomy.toml")).unwrap()
}

/// One straight tendon at phase 0 with the given stiffness.
pub fn single_tendon(bending_stiffness: f64, tension_max: f64) -> RobotSpec {
    RobotSpec {
        name: "single".into(),
        length: 0.2,
        backbone_radius: 0.01,
        bending_stiffness,
        torsional_stiffness: 0.8 * bending_stiffness,
        tendons: vec![TendonRouting::straight(0.01, 0.0)],
        tension_max: vec![tension_max],
        insertion_max: 0.2,
        insertion_enabled: false,
        rotation_enabled: false,
    }
}

/// Three straight tendons at 120 degree spacing.
pub fn three_straight(insertion: bool, rotation: bool) -> RobotSpec {
    RobotSpec {
        name: "three".into(),
        length: 0.2,
        backbone_radius: 0.01,
        bending_stiffness: 0.01,
        torsional_stiffness: 0.008,
        tendons: (0..3).map(|i| TendonRouting::straight(0.01, 2.0 * PI * i as f64 / 3.0)).collect(),
        tension_max: vec![5.0; 3],
        insertion_max: 0.2,
        insertion_enabled: insertion,
        rotation_enabled: rotation,
    }
}
