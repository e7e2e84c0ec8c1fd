//! Temporal ETAS (epidemic-type aftershock sequence) point-process models.
//!
//! The conditional intensity of the stationary model is
//!
//! ```text
//! lambda(t | H_t) = mu + sum_{t_i < t} K0 * exp(alpha * (M_i - Mz)) / (t - t_i + c)^p
//! ```
//!
//! with background rate `mu`, productivity `K0`, aftershock decay `(c, p)`
//! (Omori-Utsu), and magnitude sensitivity `alpha` above the threshold `Mz`.
//! Times are fractional days.
//!
//! On top of the stationary model the crate provides:
//!
//! - maximum-likelihood fitting with analytic gradients ([`fit`]),
//! - two-stage AIC change-point analysis ([`changepoint`]),
//! - a nonstationary extension in which `mu` and `K0` are modulated by
//!   piecewise-linear anomaly factors on event-time knots, estimated by
//!   penalized maximum likelihood ([`nonstationary`]),
//! - empirical-Bayes selection of the smoothness penalty weights through a
//!   Laplace approximation of the marginal likelihood and ABIC ([`bayes`]),
//! - residual analysis via the time transformation `tau = Lambda(t)`
//!   ([`intensity::transform_times`]), and
//! - exact simulation by thinning ([`simulate`]).

pub mod bayes;
pub mod catalog;
pub mod changepoint;
pub mod error;
pub mod fit;
pub mod intensity;
pub mod nonstationary;
pub mod optim;
pub mod simulate;
pub mod stats;

pub use catalog::{filter_catalog, parse_catalog, Catalog, Event};
pub use error::EtasError;
pub use fit::FitResult;
pub use intensity::EtasParams;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, EtasError>;
