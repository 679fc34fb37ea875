//! Hybrid causal-convolution / multi-head-attention forecaster for univariate
//! series, with Gaussian-process Bayesian hyperparameter tuning and
//! SHAP x attention influence maps.
pub mod bayesopt;
pub mod explain;
pub mod nn;
pub mod pipeline;
pub mod series;
pub mod train;
