//! Comparison methods: recursive co-kriging with SERV infill, and
//! multi-fidelity cost-aware BO.

pub mod cokriging;
pub mod mfca;

pub use cokriging::{serv_select, serv_values, CoKrigingLevel, CoKrigingModel, ServChoice};
pub use mfca::{mfca_exclude, mfca_exclude_by_distance, mfca_step, mfca_value, MfcaChoice};
