mod eval;
mod generate;
mod inject;
mod prune;
mod stream;
mod train;

pub use eval::{cmd_eval, evaluate, histogram, ratio_sweep, sweep_ratios, EvalArgs, EvalReport, HistogramBin, SweepPoint, HISTOGRAM_BINS};
pub use generate::{cmd_generate, GenerateArgs};
pub use inject::{cmd_inject, InjectArgs};
pub use prune::{cmd_prune, load_pruner, PruneArgs, ThresholdFile};
pub use stream::{cmd_stream, StreamArgs};
pub use train::{cmd_train, TrainArgs};
