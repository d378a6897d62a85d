//! Regression metrics, test-year evaluation, early-season masking and report files.

mod benchmark;
mod mask;
mod metrics;
mod protocol;
mod report;

pub use benchmark::{run_benchmark, summarize, table_csv, table_text, CellResult, CellScores, MeanStd, TableRow};
pub use mask::{apply_early_mask, mask_year, MaskingPlan, EARLY_CUTOFF_WEEK};
pub use metrics::{pearson_corr, population_std, r_squared, rmse};
pub use protocol::{evaluate, evaluate_with};
pub use report::{emit_report, parse_key_values, CountyRecord, EvalReport};
