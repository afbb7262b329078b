//! Costmap fed by GO/NO GO decisions: lethal marks with inflation, export,
//! grid planning and a simulated mission that ties them to a classifier.

mod error;
pub mod grid;
pub mod io;
pub mod mission;
pub mod plan;

pub use error::{CostmapError, Result};
pub use grid::{Cell, Costmap, MapPose, MarkOutcome, DEFAULT_LETHAL_CUTOFF, LETHAL};
pub use io::{export_map, import_map, MapMeta};
pub use mission::{
    drive_simulated_mission, AnomalyClassifier, Classifier, GroundTruth, HeadClassifier, LogEntry,
    MissionConfig, MissionOutcome, MissionResult, Observation, Verdict,
};
pub use plan::{plan, Path, PlanRequest};
