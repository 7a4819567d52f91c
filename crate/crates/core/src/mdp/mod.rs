//! Layered finite-horizon MDPs, policies, action-value tables, logged data
//! and the exact dynamic-programming oracles.

mod data;
mod dp;
mod layout;
mod model;
mod policy;
mod qfunc;

pub use data::{
    empirical_distribution, monte_carlo_value, sample_mixture, sample_trajectories, Dataset, McEstimate, Step,
    Trajectory,
};
pub use dp::{
    bellman_backup, brute_force_best_value, concentration_coefficient, exact_bellman_error, exact_policy_value,
    greedy_actions, occupancy, optimal_q, optimal_value, policy_q, Concentration, SaDistribution, DIST_TOL,
};
pub use layout::{Layout, StateId};
pub use model::{Mdp, MdpBuilder, Outcome, PROB_TOL};
pub use policy::Policy;
pub use qfunc::{argmax, greedy, QFunction, QTable};
