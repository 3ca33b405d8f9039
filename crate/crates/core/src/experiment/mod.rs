//! Declarative sweeps over scenario, model, dimension, sample size and seed,
//! with CSV persistence and loading of external tabular choice data.

mod config;
mod output;
mod sweep;
mod tabular;

pub use config::{BoundsConfig, CurveConfig, ModelSpec, SweepConfig};
pub use output::{
    format_float, read_curve, read_results, result_header, results_to_bytes, write_curves, write_results,
    ResultRow, RowValues, STATUS_OK,
};
pub use sweep::{
    add_decompositions, cell_data, cell_stem, cell_train_config, cells, run_cell, run_cells, run_sweep,
    run_sweep_into, spec_seed, CellData, CellKey, CellOutput, CellTiming, SweepResult,
};
pub use tabular::{load_tabular, TabularData, TabularSchema};
