//! Least-cost threshold interventions for the linear threshold model (LTM).
//!
//! A planner lowers agent thresholds so that, started from the all-inactive
//! state, at least a `1 - eps` fraction of agents ends up active. On large
//! networks the problem is posed on type statistics (in-degree, out-degree,
//! threshold, cost) through a local mean-field recursion, discretized into a
//! finite linear program, solved, and then realized and checked on concrete
//! or sampled networks.
//!
//! Module map:
//!
//! * [`graph`]: directed multigraphs and the synchronous threshold dynamics.
//! * [`typestats`]: agent types, statistics, statistical interventions.
//! * [`meanfield`]: binomial tails, the mean-field maps and their recursion.
//! * [`lp`]: a certified revised-simplex LP solver.
//! * [`planner`]: assembly, solution and audit of the discretized program.
//! * [`sampler`]: configuration-model sampling, rounding, realization and
//!   Monte Carlo validation.
//! * [`io`]: edge-list ingestion and JSON/CSV documents.
//! * [`cli`]: the command-line pipelines.

pub mod cli;
pub mod graph;
pub mod io;
pub mod lp;
pub mod meanfield;
pub mod planner;
pub mod sampler;
pub mod typestats;

pub use graph::{InterventionVector, MultiGraph, StateVector, ThresholdVector};
pub use lp::{LpModel, LpSolution, LpStatus};
pub use planner::{PlanResult, PlannerConfig};
pub use typestats::{AgentType, CostRule, StatIntervention, Statistics, ThresholdRule};
