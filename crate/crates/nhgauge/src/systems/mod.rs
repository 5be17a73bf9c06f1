//! Built-in examples and a registry that builds them by name.

pub mod ball;
pub mod chaplygin;
pub mod snakeboard;
pub mod solid;
pub mod so3;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gauge::{b_intrinsic, hgs_system, GaugeTwoForm, HgsBasis};
use crate::momenta::{solve_hgm, HGMOdeSpec, HGMSolution};
use crate::system::NonholonomicSystem;

pub const NAMES: [&str; 4] = ["snakeboard", "chaplygin", "solid", "ball"];

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Snakeboard(snakeboard::SnakeboardParams),
    Chaplygin(chaplygin::ChaplyginParams),
    Solid(solid::SolidParams),
    Ball(ball::BallParams),
}

impl Params {
    pub fn default_for(name: &str) -> Result<Self> {
        Params::from_json(name, &Value::Object(Default::default()))
    }

    /// Missing fields fall back to the defaults.
    pub fn from_json(name: &str, v: &Value) -> Result<Self> {
        let v = v.clone();
        Ok(match name {
            "snakeboard" => Params::Snakeboard(serde_json::from_value(v)?),
            "chaplygin" => Params::Chaplygin(serde_json::from_value(v)?),
            "solid" => Params::Solid(serde_json::from_value(v)?),
            "ball" => Params::Ball(serde_json::from_value(v)?),
            _ => return Err(Error::UnknownSystem(name.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Params::Snakeboard(_) => "snakeboard",
            Params::Chaplygin(_) => "chaplygin",
            Params::Solid(_) => "solid",
            Params::Ball(_) => "ball",
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Params::Snakeboard(p) => serde_json::to_value(p),
            Params::Chaplygin(p) => serde_json::to_value(p),
            Params::Solid(p) => serde_json::to_value(p),
            Params::Ball(p) => serde_json::to_value(p),
        }
        .expect("parameters serialize")
    }
}

/// A built-in system with its horizontal gauge symmetries and gauge 2-form.
#[derive(Clone)]
pub struct Model {
    pub params: Params,
    pub system: Arc<NonholonomicSystem>,
    pub hgs: HgsBasis,
    /// The system on the frame whose S block is the HGS basis.
    pub hgs_system: Arc<NonholonomicSystem>,
    pub b: GaugeTwoForm,
    /// Fundamental solution of the HGM equation when the basis is not constant.
    pub hgm: Option<Arc<HGMSolution>>,
}

/// Builds a model. `domain` narrows the sampling box of named coordinates;
/// the key `p1` (ball) or `gamma3` (solid) sets the HGM interval instead.
pub fn build(params: &Params, domain: &BTreeMap<String, (f64, f64)>) -> Result<Model> {
    let (system, shape_var) = match params {
        Params::Snakeboard(p) => (snakeboard::make(*p)?, None),
        Params::Chaplygin(p) => (chaplygin::make(*p)?, None),
        Params::Solid(p) => (solid::make(*p)?, Some("gamma3")),
        Params::Ball(p) => (ball::make(p.clone())?, Some("p1")),
    };
    let mut bounds = system.chart.bounds.clone();
    let mut shape_domain = None;
    for (k, &(lo, hi)) in domain {
        if !(lo < hi) {
            return Err(Error::Params(format!("empty domain for `{k}`")));
        }
        if Some(k.as_str()) == shape_var {
            shape_domain = Some((lo, hi));
        } else if let Some(i) = system.chart.names.iter().position(|n| n == k) {
            bounds[i] = (lo, hi);
        } else {
            return Err(Error::Params(format!("`{k}` is not a coordinate of {}", params.name())));
        }
    }
    let system = if bounds != system.chart.bounds {
        let chart = system.chart.clone().with_bounds(bounds);
        Arc::new(system.with_frame(&system.name, chart, system.frame.clone(), system.symmetry.clone()))
    } else {
        system
    };
    let restrict = |spec: HGMOdeSpec| match shape_domain {
        Some((lo, hi)) => spec.with_domain(lo, hi),
        None => spec,
    };
    let (hgs, hgm) = match params {
        Params::Snakeboard(_) | Params::Chaplygin(_) => (HgsBasis::identity(1), None),
        Params::Solid(_) => {
            let sol = Arc::new(solve_hgm(&restrict(solid::ode_spec(&system)), &DMatrix::identity(2, 2))?);
            (solid::hgs_basis(sol.clone()), Some(sol))
        }
        Params::Ball(p) => {
            let sol = Arc::new(solve_hgm(&restrict(ball::ode_spec(p)), &DMatrix::identity(2, 2))?);
            (ball::hgs_basis(sol.clone()), Some(sol))
        }
    };
    let hs = Arc::new(hgs_system(&system, &hgs, &format!("{}-hgs", system.name), system.chart.clone()));
    let b = b_intrinsic(&system, &hgs);
    Ok(Model {
        params: params.clone(),
        system,
        hgs,
        hgs_system: hs,
        b,
        hgm,
    })
}

/// Default parameters, default domain.
pub fn by_name(name: &str) -> Result<Model> {
    build(&Params::default_for(name)?, &BTreeMap::new())
}
