//! Experiment orchestration: configs, the cell grid, result files, sweeps,
//! ACT-R fitting over result files, and plot-ready reports.

mod analysis;
mod config;
mod run;
mod sweep;

pub use analysis::{
    block_layout, fit_actr, identifier_diffs, measured_curves, overlay, read_fit_records,
    read_results, report, sweet_spot, write_fit_records, CurveKey, IdentifierDiff, MeasuredCurve,
    MethodFit, OverlayRow, ReportFiles, SweetSpotRow, BLOCKS_FILE, CURVES_FILE,
    IDENTIFIER_DIFF_FILE, OVERLAY_FILE, SWEET_SPOT_FILE,
};
pub use config::{
    ExperimentConfig, InterferencePolicy, Method, DEFAULT_DECAY, DEFAULT_K, DEFAULT_PHI,
    DEFAULT_PHI_D_GRID, DEFAULT_PHI_I_GRID, DEFAULT_REPEATS, MAX_PHI_D, TABULATED_PHI_D,
};
pub use run::{
    cells, evaluate_cells, load_config, repeat_tasks, run_cell, run_experiment,
    run_experiment_in, seed_record, summarize, summarize_rows, write_summary, Cell, CellFailure,
    RunManifest, RunOutput, SeedRecord, SummaryRow, MANIFEST_FILE, RESULTS_FILE, SEED_SCHEME,
    SUMMARY_FILE, SUMMARY_HEADER, TOOL_VERSION,
};
pub use sweep::{
    per_seed_average, summarize_sweep, sweep, write_sweep_summary, SweepDimension, SweepPoint,
    SweepSummary, SWEEP_JSON_FILE, SWEEP_SUMMARY_FILE,
};
