//! Simulator-driven training streams for the two stages.

use crate::channel::Simulator;
use crate::copula::{AttentionalCopula, CopulaTraining};
use crate::encoding::{sample_mask, Placement, PortMajorSeries};
use crate::marginal::{FrozenBank, MarginalFlowBank, MarginalTraining};
use crate::rng::StreamRng;
use crate::train::{run, TrainError, TrainSchedule, TrainState};

pub const MARGINAL_STAGE: &str = "train/marginals";
pub const COPULA_STAGE: &str = "train/copula";

/// Fresh port-major snapshots.
pub fn snapshot_stream(sim: &Simulator) -> impl Fn(&mut StreamRng) -> Vec<f64> + '_ {
    move |rng| PortMajorSeries::encode(&sim.sample(rng)).into_values()
}

/// Fresh snapshots paired with training masks of `min..=max` ports.
pub fn masked_stream(
    sim: &Simulator,
    min: usize,
    max: usize,
    placement: Placement,
) -> impl Fn(&mut StreamRng) -> (Vec<f64>, Vec<bool>) + '_ {
    move |rng| {
        let x = PortMajorSeries::encode(&sim.sample(rng)).into_values();
        let mask = sample_mask(sim.ports(), min, max, placement, rng)
            .expect("mask range validated by the caller");
        (x, mask.flags().to_vec())
    }
}

pub fn train_marginals(
    bank: &mut MarginalFlowBank,
    sim: &Simulator,
    state: &mut TrainState,
    schedule: &TrainSchedule,
    seed: u64,
    mut on_epoch: impl FnMut(&MarginalFlowBank, &TrainState),
) -> Result<(), TrainError> {
    let mut job = MarginalTraining {
        bank,
        sampler: snapshot_stream(sim),
    };
    run(&mut job, state, schedule, seed, MARGINAL_STAGE, |j, s| on_epoch(j.bank, s))
}

#[allow(clippy::too_many_arguments)]
pub fn train_copula(
    model: &mut AttentionalCopula,
    bank: &FrozenBank,
    sim: &Simulator,
    mask_range: (usize, usize),
    state: &mut TrainState,
    schedule: &TrainSchedule,
    seed: u64,
    mut on_epoch: impl FnMut(&AttentionalCopula, &TrainState),
) -> Result<(), TrainError> {
    let (min, max) = mask_range;
    if min < 1 || min > max || max > sim.ports() {
        return Err(TrainError::Sample(format!(
            "mask range [{min}, {max}] invalid for {} ports",
            sim.ports()
        )));
    }
    let mut job = CopulaTraining {
        model,
        bank,
        sampler: masked_stream(sim, min, max, Placement::Random),
    };
    run(&mut job, state, schedule, seed, COPULA_STAGE, |j, s| on_epoch(j.model, s))
}
