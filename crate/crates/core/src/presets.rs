//! Lookup of task and robot files by name.

use std::io;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kinematics::RobotSpec;
use crate::tasks::Task;

/// Colon-separated list of directories searched before `./presets`.
pub const PRESET_PATH_VAR: &str = "TDCR_PRESET_PATH";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    Task,
    Robot,
}

impl PresetKind {
    fn prefix(self) -> &'static str {
        match self {
            PresetKind::Task => "task_",
            PresetKind::Robot => "robot_",
        }
    }
}

/// Directories from the environment followed by `presets` in the working
/// directory.
pub fn search_dirs() -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::env::var_os(PRESET_PATH_VAR)
        .map(|v| std::env::split_paths(&v).filter(|p| !p.as_os_str().is_empty()).collect())
        .unwrap_or_default();
    dirs.push(PathBuf::from("presets"));
    dirs
}

/// An existing path is returned as is. Otherwise each directory is tried with
/// `name`, `name.toml` and `<kind>_name.toml`, in that order.
pub fn resolve(name: &str, kind: PresetKind, dirs: &[PathBuf]) -> Result<PathBuf> {
    let direct = Path::new(name);
    if direct.is_file() {
        return Ok(direct.to_path_buf());
    }
    let candidates = [name.to_string(), format!("{name}.toml"), format!("{}{name}.toml", kind.prefix())];
    for dir in dirs {
        for c in &candidates {
            let p = dir.join(c);
            if p.is_file() {
                return Ok(p);
            }
        }
    }
    let searched: Vec<String> = dirs.iter().map(|d| d.display().to_string()).collect();
    Err(Error::io(
        name,
        io::Error::new(io::ErrorKind::NotFound, format!("no such file or preset (searched {})", searched.join(", "))),
    ))
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub task: Task,
    pub task_path: PathBuf,
    pub robot: RobotSpec,
    pub robot_path: PathBuf,
}

/// Loads a task and its robot. Without an explicit robot the task's suggested
/// robot is used, resolved next to the task file first.
pub fn load_task_and_robot(task: &str, robot: Option<&str>, dirs: &[PathBuf]) -> Result<Loaded> {
    let task_path = resolve(task, PresetKind::Task, dirs)?;
    let loaded = Task::load(&task_path)?;
    let robot_path = match robot {
        Some(r) => resolve(r, PresetKind::Robot, dirs)?,
        None => {
            let suggested = loaded.def.robot.clone().ok_or_else(|| {
                Error::InvalidTask(format!("{} names no robot; pass one explicitly", task_path.display()))
            })?;
            let mut local = vec![task_path.parent().unwrap_or(Path::new(".")).to_path_buf()];
            local.extend_from_slice(dirs);
            resolve(&suggested, PresetKind::Robot, &local)?
        }
    };
    let spec = RobotSpec::load(&robot_path)?;
    Ok(Loaded { task: loaded, task_path, robot: spec, robot_path })
}
