//! Simulation studies: the estimator-bias experiment on nested candidates and
//! the design-based small-area study on a synthetic land-price population.
//!
//! Every replicate, bootstrap resample and sample draw uses its own random
//! stream derived from the configured seed, and all averages are summed in
//! replicate order, so results do not depend on the thread count.

mod bias;
mod design_sim;
mod population;

pub use bias::{
    bias_setup, column_estimate, correlated_covariates, draw_beta, run_bias_experiment, run_r3_order_study,
    simulate_breakdowns, BiasCell, BiasExperimentConfig, BiasExperimentResult, BiasRow, BiasSetup, R3OrderRow,
    MIN_OUTER_REPS,
};
pub use design_sim::{
    area_mse, conventional_caic_baseline, land_price_candidates, run_design_sim, run_design_sim_on, sample_to_nerm,
    AreaMse, DesignSimConfig, DesignSimResult, SampleOutcome,
};
pub use population::{
    allocate_sample_sizes, covariate_vector, draw_area_sample, generate_original_sample, generate_synthetic_population,
    resample_population, GeneratorParams, LandUnit, OriginalSample, SyntheticPopulation, COVARIATE_NAMES,
    LAND_PRICE_COVARIATES,
};
