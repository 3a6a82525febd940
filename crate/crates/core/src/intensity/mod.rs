//! Seasonal arrival-rate model: a Poisson GLM for daily totals, chosen by
//! BIC, combined with a median intraday slot profile.

mod features;
mod glm;
mod model;
mod profile;

pub use features::{Factor, FactorSpec};
pub use glm::{
    bic, fit_poisson_glm, ln_factorial, poisson_log_likelihood, score, DesignRow, GlmModel,
    DEVIANCE_TOLERANCE, MAX_ITERATIONS, SCORE_TOLERANCE,
};
pub use model::{
    daily_observations, fit_intensity, fit_profile_override, naive_rate, select_model, CandidateFit,
    DailyLevel, FittedIntensity, IntensityModel, ModelSelection, ProfileOverride,
};
pub use profile::{busyness_quartile_check, fit_slot_profile, median_fractions, QuartileProfile, SlotProfile};
