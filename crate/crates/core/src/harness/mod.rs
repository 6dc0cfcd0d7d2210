//! Model presets, training, evaluation and the three experiment sweeps
//! (BER versus power, BER versus training-set size, accuracy versus
//! iteration).

mod model;
mod stats;
mod sweep;
mod train;

pub use model::{build_model, Forward, LayerSpec, Model, ModelKind, ModelSpec, STE_CLIP};
pub use stats::{q_function, wilson_interval, Z95};
pub use sweep::{
    doubling_sizes, plateau_size, sweep_iterations, sweep_power, sweep_power_on, sweep_training_size,
    write_ber_curves, write_csv_file, write_datasize, write_traces, BerCurve, BerPoint, DatasizeRow,
    DatasizeSweep, PowerSweep, PowerSweepData, SweepConfig, BER_CURVE_HEADER, DATASIZE_HEADER,
    MIN_BITS_PER_POINT, TRACE_HEADER,
};
pub use train::{
    evaluate_ber, hard_decision_baseline, train, BerCount, TrainConfig, TrainRecord, TrainTrace,
};
