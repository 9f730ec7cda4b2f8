//! Out-of-core execution of stencil loop chains on a simulated device.

pub mod apps;
pub mod chain;
pub mod chainfile;
pub mod device;
pub mod driver;
pub mod error;
pub mod exec;
pub mod expr;
pub mod extent;
pub mod mesh;
pub mod metrics;
pub mod runtime;
pub mod tiler;
pub mod timeline;

pub use apps::{AppName, AppSpec, Workload};
pub use chain::{FlushReason, LoopChain};
pub use chainfile::ChainFile;
pub use device::{Device, DeviceConfig, Mode, RunOptions, TileSpec};
pub use driver::{ratio_sweep, run_workload, scaling_sweep, RunOutcome};
pub use error::{Error, Result};
pub use expr::{BinOp, Expr, Kernel, ReduceOp};
pub use extent::{BoxBuf, Extent, Index};
pub use mesh::{AccessMode, Arg, Block, Dataset, DatasetId, Fill, ParLoop, Stencil};
pub use runtime::{FlushRecord, Runtime};
pub use tiler::{compute_footprints, compute_tile_plan, Footprints, TilePlan};
