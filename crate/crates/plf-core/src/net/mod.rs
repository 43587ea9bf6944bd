//! Network model: case files, bus classification, DLPF assembly, regions.

mod case;
mod dlpf;
mod partition;

pub use case::{parse_case, Branch, Bus, BusClass, Network};
pub use dlpf::{assemble_dlpf, DlpfSystem, RowKind, RowVar, StateKind, StateVar};
pub use partition::{partition_system, RegionPartition};
