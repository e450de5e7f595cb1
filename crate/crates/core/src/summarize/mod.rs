//! Posterior summaries: density of `t` draws, HPD segments and modes, a
//! two-component mixture fit, and pointwise curve bands.

mod bands;
mod gmm;
mod hpd;
mod kde;

pub use bands::{curve_bands, CurveEstimate};
pub use gmm::{fit_gmm2, fit_gmm2_with, GmmFit, GmmOptions};
pub use hpd::{hpd, HpdRegion, MIN_SEGMENT_CELLS};
pub use kde::{kde, silverman_bandwidth, DensityGrid, KDE_GRID_LEN};
