//! Campaign orchestration: run many snapshots, aggregate metrics, emit
//! CSV reports for the cell-free vs. cellular comparison.

pub mod campaign;
