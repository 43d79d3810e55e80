//! Condition-sectioned evaluation: ERLE, white-box component ERLE and
//! speech preservation.

mod erle;
mod evaluate;

pub use erle::{
    component_erle, erle, erle_trace, smoothed_power, speech_preservation, stne_deviation, ErleParams, ErleResult,
    DB_FLOOR,
};
pub use evaluate::{evaluate, file_rows, process_file, EvalReport, EvalRow, EvalSystem, ProcessedFile, CSV_HEADER};
