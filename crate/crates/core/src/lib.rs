//! Pulse-level simulation of a two-node superconducting quantum network
//! joined by a multi-mode cable.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarking;
pub mod circuit;
pub mod device;
pub mod dynamics;
pub mod hilbert;
pub mod pipeline;
pub mod protocols;
pub mod tomography;

pub use circuit::{ChannelConfig, CouplerConfig, QubitConfig, WirebondLossModel};
pub use device::{DeviceConfig, Node};
pub use dynamics::{ControlFrame, InstantGate, PulseSchedule, ScheduleItem, Trajectory};
pub use hilbert::{DensityMatrix, HilbertSpace, Operator, ProcessMatrix, Site};
