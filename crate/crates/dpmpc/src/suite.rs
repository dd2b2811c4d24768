//! Robustness suite with one episode per rayon task.

use dpmpc_core::clock::Clock;
use dpmpc_core::simbench::{simulate_episode_with_clock, AxesSpec, EpisodeConfig, RobustnessReport};
use dpmpc_core::SimError;
use rayon::prelude::*;

/// Same result as the sequential suite; episodes are independent and the
/// outcomes are collected in sweep order.
pub fn robustness_suite_parallel<C, F>(
    base: &EpisodeConfig,
    spec: &AxesSpec,
    clock: F,
) -> Result<RobustnessReport, SimError>
where
    C: Clock,
    F: Fn() -> C + Sync,
{
    base.validate()?;
    spec.validate()?;
    let outcomes = spec
        .runs(base)
        .into_par_iter()
        .map(|(_, _, cfg)| simulate_episode_with_clock(&cfg, clock()).map(|r| (r.swingup_success, r.score)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RobustnessReport::assemble(base.params.robot, spec, &outcomes))
}
