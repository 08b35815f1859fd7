//! Typosquatting scan pipeline: candidate generation, registration
//! filtering, spoofed-UA scanning with dialog capture, message
//! classification, and distribution analytics.

pub mod classify;
pub mod config;
pub mod domain;
pub mod driver;
pub mod fixture;
pub mod manifest;
pub mod permute;
pub mod pipeline;
pub mod profiles;
pub mod report;
pub mod resolve;
pub mod scan;
pub mod store;
