//! Bundled plants and their reported locally optimal controllers (four
//! decimal places, as printed, except for the one sign noted on
//! [`example8_optimum`]).

use crate::error::Result;
use crate::io::{parse_plant, ControllerFile};
use crate::matlib::DEFAULT_HURWITZ_MARGIN;
use crate::model::{random_stabilizing, random_stabilizing_near, ControllerParams, PlantModel};

pub const EXAMPLE8_PLANT: &str = include_str!("../fixtures/example8.plant");
pub const EXAMPLE8_CONTROLLER: &str = include_str!("../fixtures/example8_opt.controller");
pub const EXAMPLE9_PLANT: &str = include_str!("../fixtures/example9.plant");
pub const EXAMPLE9_CONTROLLER: &str = include_str!("../fixtures/example9_opt.controller");
pub const EXAMPLE10_PLANT: &str = include_str!("../fixtures/example10.plant");
pub const EXAMPLE10_CONTROLLER: &str = include_str!("../fixtures/example10_opt.controller");

/// Reported minimum costs.
pub const EXAMPLE8_MIN_COST: f64 = 12.1026;
pub const EXAMPLE9_MIN_COST: f64 = 274.0419;
pub const EXAMPLE10_MIN_COST: f64 = 2.0418;

fn plant(text: &str) -> PlantModel {
    parse_plant(text).expect("bundled plant parses")
}

fn controller(text: &str) -> ControllerParams {
    ControllerFile::parse(text)
        .and_then(|f| f.params())
        .expect("bundled controller parses")
}

/// Unstable `n = 2` plant with four plant-noise channels.
pub fn example8_plant() -> PlantModel {
    plant(EXAMPLE8_PLANT)
}

/// The printed table gives `R₁₁ = −0.5611`, which yields a cost of about
/// 13.13 and a gradient of norm about 10. With `R₁₁ = +0.5611` the cost is
/// 12.1042 and the point is near-stationary, so the bundled file carries the
/// positive sign.
pub fn example8_optimum() -> ControllerParams {
    controller(EXAMPLE8_CONTROLLER)
}

/// Unstable `n = 4` plant.
pub fn example9_plant() -> PlantModel {
    plant(EXAMPLE9_PLANT)
}

pub fn example9_optimum() -> ControllerParams {
    controller(EXAMPLE9_CONTROLLER)
}

/// Marginally stable atom-in-cavity plant with `Δ = 0.1`, `k₁ = k₂ = k₃ = 0.01`.
pub fn example10_plant() -> PlantModel {
    plant(EXAMPLE10_PLANT)
}

pub fn example10_optimum() -> ControllerParams {
    controller(EXAMPLE10_CONTROLLER)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    Example8,
    Example9,
    Example10,
}

impl Fixture {
    pub const ALL: [Fixture; 3] = [Fixture::Example8, Fixture::Example9, Fixture::Example10];

    pub fn name(self) -> &'static str {
        match self {
            Fixture::Example8 => "example8",
            Fixture::Example9 => "example9",
            Fixture::Example10 => "example10",
        }
    }

    pub fn plant(self) -> PlantModel {
        match self {
            Fixture::Example8 => example8_plant(),
            Fixture::Example9 => example9_plant(),
            Fixture::Example10 => example10_plant(),
        }
    }

    pub fn optimum(self) -> ControllerParams {
        match self {
            Fixture::Example8 => example8_optimum(),
            Fixture::Example9 => example9_optimum(),
            Fixture::Example10 => example10_optimum(),
        }
    }

    pub fn min_cost(self) -> f64 {
        match self {
            Fixture::Example8 => EXAMPLE8_MIN_COST,
            Fixture::Example9 => EXAMPLE9_MIN_COST,
            Fixture::Example10 => EXAMPLE10_MIN_COST,
        }
    }

    /// Seeded random stabilizing controller. Unstructured draws almost never
    /// stabilize the `n = 4` plant, so for it the draws are perturbations of
    /// the reported optimum instead.
    pub fn sample_stabilizing(self, seed: u64) -> Result<ControllerParams> {
        let plant = self.plant();
        let found = match self {
            Fixture::Example9 => {
                random_stabilizing_near(&plant, &self.optimum(), seed, 0.05, 10_000, DEFAULT_HURWITZ_MARGIN)
            }
            Fixture::Example8 => random_stabilizing(&plant, seed, 3.0, 100_000, DEFAULT_HURWITZ_MARGIN),
            Fixture::Example10 => random_stabilizing(&plant, seed, 1.0, 100_000, DEFAULT_HURWITZ_MARGIN),
        };
        found.map(|(u, _)| u)
    }
}

/// All three fixture plants with their optima and reported minimum costs.
pub fn all() -> Vec<(&'static str, PlantModel, ControllerParams, f64)> {
    vec![
        ("example8", example8_plant(), example8_optimum(), EXAMPLE8_MIN_COST),
        ("example9", example9_plant(), example9_optimum(), EXAMPLE9_MIN_COST),
        ("example10", example10_plant(), example10_optimum(), EXAMPLE10_MIN_COST),
    ]
}
