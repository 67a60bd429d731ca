//! Web agent harness: task model, action grammar, browser control surface,
//! observations, model gateway, agent loop, evaluation, and run reports.

pub mod action;
pub mod agent;
pub mod browser;
pub mod eval;
pub mod gateway;
pub mod observation;
pub mod raster;
pub mod report;
pub mod runner;
pub mod scalar;
pub mod som;
pub mod task;

pub use action::{parse_action, render_action, ParsedAction};
pub use browser::{Browser, BrowserError, SessionHandle, Viewport};
pub use observation::{ObservationMode, TextBudget};
pub use raster::{LumaPlane, Raster};
pub use scalar::Scalar;
pub use task::{TaskSpec, TaskSet};

pub type LumaPlaneF32 = raster::LumaPlane<f32>;
pub type LumaPlaneF64 = raster::LumaPlane<f64>;
pub type SsimParamsF32 = eval::SsimParams<f32>;
pub type SsimParamsF64 = eval::SsimParams<f64>;
