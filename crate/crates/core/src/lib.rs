//! Calibration and validation of symmetric Black-Scholes volatility smiles.
//!
//! The crate fits the three-parameter smile
//! `σ(x) = g[1 + (χ−1)(x + g²T/2)² / ((x + g²T/2)² + n)]` to market quotes,
//! derives the risk-neutral density it implies (analytically, and by finite
//! differences of call prices as an independent check), detects spurious
//! minima and negative probabilities, and decides whether the smile is
//! adiabatic, i.e. whether `χ` stays below the critical ratio `χ_c(g, n, T)`.
//!
//! Everything here is pure computation: `no_std` with `alloc`, all math
//! through `libm`.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adiabatic;
pub mod bs;
pub mod density;
mod error;
pub mod lsq;
pub mod normal;
pub mod smile;

pub use adiabatic::{
    adiabatic_check, calibrate_critical_fit, chi_critical_formula, chi_critical_numeric, square_well_critical_x, sweep,
    AdiabaticVerdict, Axis, CheckMode, ChiSearchOptions, CriticalCalibration, CriticalChi, CriticalFitParams,
    RowStatus, SquareWellSmile, SweepGrid, SweepPoint, SweepRow,
};
pub use bs::{BsQuote, LogReturn, MarketEnv};
pub use density::{
    analyze, bl_density_oracle, gaussian_return_density, perturbation_factor, price_density, return_density,
    AnalyzeOptions, DensityCurve, DensityReport, GridSpec, OracleEstimate, OracleOptions, StationaryKind,
    StationaryPoint,
};
pub use error::{Error, Result};
pub use smile::{
    constrained_fit_smile, fit_smile, scaling_fit, QuoteCoordinate, ScalingFitResult, SigmaDerivatives, SmileFitResult,
    SmileParams, VolQuote,
};
