//! Experiments on coordinate-changed LFPP, each producing an
//! [`ExperimentReport`] with metrics, indicators and pass/fail checks.

pub mod config;
pub mod convergence;
pub mod events;
pub mod identity;
pub mod mollifiers;
pub mod pullback;
pub mod report;
pub mod sandwich;

use num_complex::Complex64;

pub use config::ExperimentConfig;
pub use convergence::convergence_diagnostic;
pub use events::{event_improving, event_initial, event_locality_test};
pub use identity::affine_identity;
pub use mollifiers::{log_mollification, mollifier_comparison, mollifier_drift};
pub use report::ExperimentReport;
pub use sandwich::{field_pairing_deviation, kernel_difference_growth, small_scale_sandwich};

use crate::conformal::Region;
use crate::error::{Error, Result};

/// Experiment names accepted by [`run`].
pub const NAMES: &[&str] = &[
    "affine_identity",
    "small_scale_sandwich",
    "kernel_difference_growth",
    "field_pairing_deviation",
    "log_mollification",
    "mollifier_drift",
    "mollifier_comparison",
    "event_initial",
    "event_improving",
    "event_locality_test",
    "convergence_diagnostic",
];

fn c(v: [f64; 2]) -> Complex64 {
    Complex64::new(v[0], v[1])
}

/// Run the named experiment with arguments taken from `cfg`.
pub fn run(name: &str, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let ev = &cfg.events;
    let th = &cfg.thresholds;
    let mut rep = match name {
        "affine_identity" => affine_identity(cfg, c(cfg.affine.a), c(cfg.affine.b)),
        "small_scale_sandwich" => small_scale_sandwich(cfg, cfg.z0()),
        "kernel_difference_growth" => kernel_difference_growth(cfg, cfg.z0()),
        "field_pairing_deviation" => field_pairing_deviation(cfg, cfg.z0()),
        "log_mollification" => log_mollification(cfg),
        "mollifier_drift" => mollifier_drift(cfg),
        "mollifier_comparison" => mollifier_comparison(cfg, &Region::disk(Complex64::new(0.0, 0.0), 0.5)),
        "event_initial" => event_initial(cfg, c(ev.x), ev.r, ev.eps, th.big_c),
        "event_improving" => event_improving(cfg, c(ev.x), ev.r, ev.eps, th.alpha, th.delta, th.big_a),
        "event_locality_test" => event_locality_test(cfg, c(ev.x), ev.r, ev.eps),
        "convergence_diagnostic" => convergence_diagnostic(cfg),
        other => Err(Error::Config {
            path: "experiment.name".into(),
            msg: format!("unknown experiment `{other}`; expected one of {}", NAMES.join(", ")),
        }),
    }?;
    rep.experiment = name.to_string();
    Ok(rep)
}
