//! Event-camera data association by robust fitting of spatio-temporal lines.
//!
//! A stream is cut into windows by the entropy of its time surface. In every
//! window, lines through early and late voxels are proposed, clustered by
//! direction, weighted, and the best ones label the events they explain.

pub mod config;
pub mod error;
pub mod event_io;
pub mod fitting;
pub mod grouping;
pub mod hypotheses;
pub mod synth;
pub mod tracking;

pub use config::EdaConfig;
pub use error::{Error, Result};
pub use event_io::{Event, EventStream, Label, Polarity, SensorGeometry};
pub use fitting::{fit_window, run_eda, AssociationResult};
pub use grouping::EventWindow;
