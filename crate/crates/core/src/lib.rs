//! Selling information to decision makers: optimal menus of experiments for
//! a single buyer (explicit utilities or best-response oracles) and optimal
//! mechanisms for several competing buyers.

pub mod audit;
pub mod error;
pub mod explicit;
pub mod implicit;
pub mod io;
pub mod lp;
pub mod market;
pub mod multi;
pub mod oracle;

pub use error::{Error, Result};
pub use explicit::{solve_explicit, ExplicitSolution};
pub use implicit::{
    build_action_sets, compress_menu, eps_ic_to_ic, merge_signals, repair_misspecified, round_experiment,
    solve_implicit, ImplicitOptions, ImplicitSolution,
};
pub use market::{
    audit_menu, base_utility, choose_from_menu, experiment_value, posterior, AuditReport, BuyerModel, BuyerType,
    Environment, Experiment, Menu, MenuEntry,
};
pub use multi::{
    brute_force_multi, run_mechanism, rvpm, solve_reduced_lp, vpm_allocate, MechanismBlueprint, MultiEnvironment,
    ReducedForm, VpmWeights,
};
pub use oracle::{ActionId, BrOracle, MatrixOracle, OracleMarket, SatOracle, TrafficOracle};
