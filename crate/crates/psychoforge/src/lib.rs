//! File formats, host resources, module registry, HTTP service and report
//! generation on top of `psychoforge-core`.

pub mod analysis;
pub mod host;
pub mod io;
pub mod manifest;
pub mod modules;
pub mod output;
pub mod registry;
pub mod report;
pub mod schema;
pub mod service;
