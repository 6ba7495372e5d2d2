pub mod arch;
pub mod io;
pub mod layer;
pub mod network;

pub use arch::{build, ArchId, PIXEL_SCALE};
pub use io::{dump_feature_perturbation, load_model, save_model};
pub use layer::{Layer, LayerOp, Padding};
pub use network::{DropoutSpec, ForwardTrace, GradientBank, HookSet, SegmentedNetwork};
