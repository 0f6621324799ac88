//! Nuisance estimation: backward least-squares q-functions and marginal
//! density-ratio models, with clipping of every emitted value.

mod design;
mod qfit;
mod ratio;

pub use crate::features::{FeatureMap, RbfFeatures, RbfSpec};
pub use qfit::{fit_q_backward, fit_q_backward_sets, AlongQ, EmptyCells, LinearQModel, QFit};
pub use ratio::{
    bandwidth_risks, fit_mu_ls, fit_mu_ls_sets, fit_w_histogram, fit_w_histogram_rows, fit_w_kernel,
    fit_w_kernel_rows, fit_w_kernel_scaled, mu_from_w, select_bandwidth, select_bandwidth_rows,
    HistogramW, KernelW, LinearMuModel, RatioAlong, RatioModel,
};
