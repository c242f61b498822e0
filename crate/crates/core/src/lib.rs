//! Matched designs for observational studies with rolling enrollment.
//!
//! Subjects enter treatment at different times, so every control subject
//! offers one candidate comparison per timepoint. The crate builds optimal
//! matched designs over those candidates, estimates the effect of treatment
//! on the treated with a regression bias correction, and quantifies
//! uncertainty with a bootstrap that resamples whole subjects.
//!
//! ```no_run
//! use rollmatch::prelude::*;
//!
//! let config = StudyConfig::new(1, 2, vec!["x1".into(), "x2".into()]);
//! let data = load_panel("panel.csv", config)?;
//! let design = match_instance_replacement(&data, &DistanceSpec::default(), 2)?;
//! let model = fit_mu0(&data, 1)?;
//! let att = att_bias_corrected(&data, &design, &model)?;
//! let ci = block_bootstrap(&att, &BootstrapSpec::new(1000, 0.05, 7))?;
//! println!("{} [{}, {}]", att.estimate, ci.ci_lo, ci.ci_hi);
//! # Ok::<(), rollmatch::Error>(())
//! ```

pub mod cli;
pub mod design;
pub mod distance;
pub mod error;
pub mod estimate;
pub mod falsify;
pub mod flow;
pub mod inference;
pub mod panel;
pub mod rng;
pub mod simlab;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::design::{
        balance_table, build_design, match_instance_replacement, match_trajectory_replacement,
        match_without_replacement, MatchOptions, MatchedDesign, Variant,
    };
    pub use crate::distance::{DistanceSpec, Metric};
    pub use crate::error::{Error, Result};
    pub use crate::estimate::{att_bias_corrected, att_diff_means, att_did, fit_mu0, EstimateResult, OutcomeModel};
    pub use crate::falsify::{timepoint_scan, timepoint_test, FalsifySpec, TestResult};
    pub use crate::inference::{block_bootstrap, wls_att, BootstrapSpec, InferenceResult, WlsVariance};
    pub use crate::panel::{load_panel, PanelDataset, StudyConfig};
}
