//! Input-generation strategies selectable by name.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::{build_state, RodState};
use crate::pcc::{pcc_generate, torque_scaling, PccGains, PccParams};
use crate::sim::{InputSchedule, Plant, Trajectory};
use crate::trajgen::{control_stride, generate, reference_configuration, Gains, ReferencePath, TaskReference};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSettings {
    pub omega: f64,
    pub zeta: f64,
    pub u_max: f64,
}

impl Default for ControlSettings {
    fn default() -> Self {
        Self {
            omega: crate::trajgen::DEFAULT_OMEGA,
            zeta: crate::trajgen::DEFAULT_ZETA,
            u_max: crate::trajgen::DEFAULT_U_MAX,
        }
    }
}

/// Open-loop inputs on the control grid, with the configuration each
/// generator predicted for every control instant.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPlan {
    pub generator: String,
    pub reference: ReferencePath,
    pub inputs: Vec<DVector<f64>>,
    pub predicted: Vec<RodState>,
    pub saturated: Vec<bool>,
}

impl InputPlan {
    pub fn schedule(&self) -> Result<InputSchedule> {
        InputSchedule::new(self.reference.period, self.inputs.clone())
    }

    pub fn saturation_fraction(&self) -> f64 {
        if self.saturated.is_empty() {
            return 0.0;
        }
        self.saturated.iter().filter(|s| **s).count() as f64 / self.saturated.len() as f64
    }

    /// Replay the inputs open loop on `plant` from the first predicted
    /// configuration at rest; one sample per control instant.
    pub fn execute(&self, plant: &Plant) -> Result<Trajectory> {
        let stride = control_stride(self.reference.period, plant.config.dt)?;
        let first = self
            .predicted
            .first()
            .ok_or(Error::TooFewSamples { needed: 1, got: 0 })?;
        let start = build_state(first.nodes.clone(), first.twists.clone(), None)?;
        let steps = (self.inputs.len() - 1) * stride;
        Ok(plant.rollout(&start, &self.schedule()?, steps)?.subsample(stride))
    }
}

pub trait TrajectoryGenerator: Send + Sync {
    fn name(&self) -> &str;

    fn description(&self) -> &str;

    fn plan(&self, reference: &TaskReference, plant: &Plant, settings: &ControlSettings) -> Result<InputPlan>;
}

/// Closed-loop synthesis on the discrete elastic rod itself.
pub struct DerGenerator;

impl TrajectoryGenerator for DerGenerator {
    fn name(&self) -> &str {
        "der"
    }

    fn description(&self) -> &str {
        "model-based synthesis on the discrete elastic rod"
    }

    fn plan(&self, reference: &TaskReference, plant: &Plant, settings: &ControlSettings) -> Result<InputPlan> {
        let gains = Gains::mass_scaled(&plant.params, settings.omega, settings.zeta, &plant.config.clamped_dofs);
        let generation = generate(reference, plant, &gains, settings.u_max)?;
        let samples = generation.control_samples();
        Ok(InputPlan {
            generator: self.name().into(),
            inputs: samples.inputs,
            predicted: samples.states,
            saturated: generation.saturated,
            reference: generation.reference,
        })
    }
}

/// Computed torque on the PCC model, mapped to inputs afterwards.
pub struct PccGenerator {
    /// Model to use; identified against the plant when absent.
    pub model: Option<PccParams>,
}

impl TrajectoryGenerator for PccGenerator {
    fn name(&self) -> &str {
        "pcc"
    }

    fn description(&self) -> &str {
        "computed torque on a two-arc constant-curvature model, mapped through the actuation scaling"
    }

    fn plan(&self, reference: &TaskReference, plant: &Plant, settings: &ControlSettings) -> Result<InputPlan> {
        let pcc = match &self.model {
            Some(p) => p.clone(),
            None => PccParams::for_plant(plant)?,
        };
        let gains = PccGains::critically_damped(settings.omega, settings.zeta);
        let lambda = torque_scaling(&plant.params, &plant.actuation);
        let out = pcc_generate(reference, &pcc, &gains, &lambda, settings.u_max)?;
        let predicted = out
            .angles
            .iter()
            .map(|a| reference_configuration(a.as_slice(), &plant.params, &plant.actuation))
            .collect::<Result<Vec<_>>>()?;
        Ok(InputPlan {
            generator: self.name().into(),
            reference: out.reference,
            inputs: out.inputs,
            predicted,
            saturated: out.saturated,
        })
    }
}

pub struct GeneratorRegistry {
    entries: BTreeMap<String, Box<dyn TrajectoryGenerator>>,
}

impl GeneratorRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Replaces any generator already registered under the same name.
    pub fn register(&mut self, generator: Box<dyn TrajectoryGenerator>) {
        self.entries.insert(generator.name().to_string(), generator);
    }

    pub fn get(&self, name: &str) -> Result<&dyn TrajectoryGenerator> {
        self.entries
            .get(name)
            .map(|g| g.as_ref())
            .ok_or_else(|| Error::UnknownGenerator(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

impl Default for GeneratorRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(DerGenerator));
        r.register(Box::new(PccGenerator { model: None }));
        r
    }
}
