//! Steady single-phase Darcy flow and heat transport on the vertical slice.
//!
//! Finite volumes on the prior grid. The pressure solve is decoupled from
//! temperature (constant fluid properties), and the heat equation uses
//! first-order upwinding of the Darcy mass fluxes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ensemble::FailureReason;
use crate::error::{EkiError, Result};
use crate::forward::{EvalContext, ForwardModel, ForwardOutcome};
use crate::linalg::BandedMatrix;
use crate::priors::{GridSpec, SliceModelInstance, SlicePrior};

const PICARD_TOL: f64 = 1e-8;
const PICARD_MAX_ITER: usize = 200;

/// A vertical well with temperature observations at the given depths (m below the top).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Well {
    pub x: f64,
    pub depths: Vec<f64>,
}

/// Physical constants, boundary data and well layout of the slice model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceModelSpec {
    pub grid: GridSpec,
    /// Out-of-plane thickness of the slice (m).
    pub thickness: f64,
    /// W m^-1 K^-1
    pub thermal_conductivity: f64,
    /// W m^-2
    pub basal_heat_flux: f64,
    /// degC
    pub top_temperature: f64,
    /// Pa
    pub top_pressure: f64,
    /// kg m^-3
    pub density: f64,
    /// J kg^-1 K^-1
    pub heat_capacity: f64,
    /// Pa s
    pub viscosity: f64,
    /// m s^-2
    pub gravity: f64,
    /// J kg^-1
    pub upflow_enthalpy: f64,
    pub wells: Vec<Well>,
}

impl SliceModelSpec {
    /// Five wells at x = 250..1250 m, six equispaced depths 200..1200 m each.
    pub fn with_grid(grid: GridSpec) -> Self {
        let wells = [250.0, 500.0, 750.0, 1000.0, 1250.0]
            .iter()
            .map(|&x| Well {
                x,
                depths: (1..=6).map(|d| 200.0 * d as f64).collect(),
            })
            .collect();
        Self {
            grid,
            thickness: 60.0,
            thermal_conductivity: 2.5,
            basal_heat_flux: 0.2,
            top_temperature: 20.0,
            top_pressure: 1.0e5,
            density: 1000.0,
            heat_capacity: 4200.0,
            viscosity: 1.0e-3,
            gravity: 9.81,
            upflow_enthalpy: 1.5e6,
            wells,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let positive = [
            ("thickness", self.thickness),
            ("thermal_conductivity", self.thermal_conductivity),
            ("density", self.density),
            ("heat_capacity", self.heat_capacity),
            ("viscosity", self.viscosity),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EkiError::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.wells.is_empty() || self.wells.iter().any(|w| w.depths.is_empty()) {
            return Err(EkiError::InvalidArgument(
                "at least one well with one depth".into(),
            ));
        }
        for w in &self.wells {
            for &d in &w.depths {
                let z = self.grid.top() - d;
                if !(w.x > self.grid.origin.0
                    && w.x < self.grid.origin.0 + self.grid.width()
                    && z > self.grid.origin.1
                    && z < self.grid.top())
                {
                    return Err(EkiError::Config(format!(
                        "observation point (x = {}, depth = {d}) outside the grid",
                        w.x
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.wells.iter().map(|w| w.depths.len()).sum()
    }

    /// Column of the bottom cell carrying the upflow.
    pub fn upflow_column(&self) -> usize {
        self.grid.nx / 2
    }
}

/// Darcy mass fluxes (kg/s) on every face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFluxes {
    /// `(i, k) -> (i + 1, k)`, indexed `k * (nx - 1) + i`.
    pub x: Vec<f64>,
    /// `(i, k) -> (i, k + 1)`, indexed `k * nx + i`.
    pub z: Vec<f64>,
    /// Out through the top face of column `i`.
    pub top: Vec<f64>,
    /// Into the bottom face of the upflow cell.
    pub upflow: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureSolution {
    /// Absolute pressure at cell centres (Pa).
    pub pressure: Vec<f64>,
    /// Pressure above the hydrostatic profile (Pa).
    pub excess: Vec<f64>,
    pub fluxes: FaceFluxes,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

struct Transmissibilities {
    x: Vec<f64>,
    z: Vec<f64>,
    top: Vec<f64>,
}

fn transmissibilities(instance: &SliceModelInstance, spec: &SliceModelSpec) -> Transmissibilities {
    let g = &instance.grid;
    let mobility = spec.density / spec.viscosity;
    let perm: Vec<f64> = instance.log_permeability.iter().map(|l| 10f64.powf(*l)).collect();
    let (ax, az) = (g.dz * spec.thickness, g.dx * spec.thickness);
    let mut x = Vec::with_capacity((g.nx - 1) * g.nz);
    for k in 0..g.nz {
        for i in 0..g.nx - 1 {
            let kh = harmonic(perm[g.index(i, k)], perm[g.index(i + 1, k)]);
            x.push(mobility * kh * ax / g.dx);
        }
    }
    let mut z = Vec::with_capacity(g.nx * (g.nz - 1));
    for k in 0..g.nz - 1 {
        for i in 0..g.nx {
            let kh = harmonic(perm[g.index(i, k)], perm[g.index(i, k + 1)]);
            z.push(mobility * kh * az / g.dz);
        }
    }
    let top = (0..g.nx)
        .map(|i| mobility * perm[g.index(i, g.nz - 1)] * az / (0.5 * g.dz))
        .collect();
    Transmissibilities { x, z, top }
}

fn check_instance(instance: &SliceModelInstance, spec: &SliceModelSpec) -> Result<()> {
    if instance.grid != spec.grid {
        return Err(EkiError::Dimension(
            "instance grid differs from model grid".into(),
        ));
    }
    if instance.log_permeability.len() != spec.grid.cells() {
        return Err(EkiError::Dimension("one permeability per cell required".into()));
    }
    if instance.log_permeability.iter().any(|k| !k.is_finite()) || !instance.upflow_rate.is_finite() {
        return Err(EkiError::NonFinite("model instance".into()));
    }
    Ok(())
}

/// Steady incompressible Darcy flow with a fixed-pressure top, closed sides
/// and a closed base except for the upflow cell.
pub fn solve_pressure(instance: &SliceModelInstance, spec: &SliceModelSpec) -> Result<PressureSolution> {
    check_instance(instance, spec)?;
    let g = &spec.grid;
    let t = transmissibilities(instance, spec);
    let mut a = BandedMatrix::zeros(g.cells(), g.nx, g.nx);
    let mut rhs = vec![0.0; g.cells()];
    let couple = |a: &mut BandedMatrix, p: usize, q: usize, w: f64| {
        a.add(p, p, w);
        a.add(q, q, w);
        a.add(p, q, -w);
        a.add(q, p, -w);
    };
    for k in 0..g.nz {
        for i in 0..g.nx - 1 {
            couple(&mut a, g.index(i, k), g.index(i + 1, k), t.x[k * (g.nx - 1) + i]);
        }
    }
    for k in 0..g.nz - 1 {
        for i in 0..g.nx {
            couple(&mut a, g.index(i, k), g.index(i, k + 1), t.z[k * g.nx + i]);
        }
    }
    for i in 0..g.nx {
        let c = g.index(i, g.nz - 1);
        a.add(c, c, t.top[i]);
    }
    rhs[g.index(spec.upflow_column(), 0)] += instance.upflow_rate;

    let excess = a.solve(&rhs)?;

    let mut fx = Vec::with_capacity(t.x.len());
    for k in 0..g.nz {
        for i in 0..g.nx - 1 {
            fx.push(t.x[k * (g.nx - 1) + i] * (excess[g.index(i, k)] - excess[g.index(i + 1, k)]));
        }
    }
    let mut fz = Vec::with_capacity(t.z.len());
    for k in 0..g.nz - 1 {
        for i in 0..g.nx {
            fz.push(t.z[k * g.nx + i] * (excess[g.index(i, k)] - excess[g.index(i, k + 1)]));
        }
    }
    let ftop = (0..g.nx)
        .map(|i| t.top[i] * excess[g.index(i, g.nz - 1)])
        .collect();
    let pressure = (0..g.cells())
        .map(|c| {
            let (_, z) = g.centre(c);
            spec.top_pressure + spec.density * spec.gravity * (g.top() - z) + excess[c]
        })
        .collect();
    Ok(PressureSolution {
        pressure,
        excess,
        fluxes: FaceFluxes {
            x: fx,
            z: fz,
            top: ftop,
            upflow: instance.upflow_rate,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSolution {
    /// degC at cell centres.
    pub temperature: Vec<f64>,
    pub iterations: usize,
}

/// Energy sources and sinks of a converged temperature field (W).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBalance {
    pub basal_conduction: f64,
    pub upflow_enthalpy: f64,
    pub top_conduction: f64,
    pub top_advection: f64,
}

impl EnergyBalance {
    pub fn net(&self) -> f64 {
        self.basal_conduction + self.upflow_enthalpy - self.top_conduction - self.top_advection
    }

    pub fn scale(&self) -> f64 {
        self.basal_conduction + self.upflow_enthalpy
    }
}

fn basal_flux_cells(spec: &SliceModelSpec, upflow: f64) -> impl Iterator<Item = usize> + '_ {
    // the upflow cell takes the mass flux instead of the conductive flux
    let skip = if upflow > 0.0 {
        Some(spec.upflow_column())
    } else {
        None
    };
    (0..spec.grid.nx).filter(move |i| Some(*i) != skip)
}

fn assemble_heat(
    instance: &SliceModelInstance,
    pressure: &PressureSolution,
    spec: &SliceModelSpec,
) -> (BandedMatrix, Vec<f64>) {
    let g = &spec.grid;
    let kth = spec.thermal_conductivity;
    let (ax, az) = (g.dz * spec.thickness, g.dx * spec.thickness);
    let (gx, gz, gtop) = (kth * ax / g.dx, kth * az / g.dz, kth * az / (0.5 * g.dz));
    let c = spec.heat_capacity;
    let f = &pressure.fluxes;
    let mut a = BandedMatrix::zeros(g.cells(), g.nx, g.nx);
    let mut rhs = vec![0.0; g.cells()];

    let face = |a: &mut BandedMatrix, p: usize, q: usize, cond: f64, flux: f64| {
        a.add(p, p, cond);
        a.add(q, q, cond);
        a.add(p, q, -cond);
        a.add(q, p, -cond);
        // upwind advection of c * T
        if flux >= 0.0 {
            a.add(p, p, c * flux);
            a.add(q, p, -c * flux);
        } else {
            a.add(q, q, -c * flux);
            a.add(p, q, c * flux);
        }
    };
    for k in 0..g.nz {
        for i in 0..g.nx - 1 {
            face(
                &mut a,
                g.index(i, k),
                g.index(i + 1, k),
                gx,
                f.x[k * (g.nx - 1) + i],
            );
        }
    }
    for k in 0..g.nz - 1 {
        for i in 0..g.nx {
            face(&mut a, g.index(i, k), g.index(i, k + 1), gz, f.z[k * g.nx + i]);
        }
    }
    for i in 0..g.nx {
        let cell = g.index(i, g.nz - 1);
        a.add(cell, cell, gtop);
        rhs[cell] += gtop * spec.top_temperature;
        let out = f.top[i];
        if out >= 0.0 {
            a.add(cell, cell, c * out);
        } else {
            rhs[cell] += -out * c * spec.top_temperature;
        }
    }
    for i in basal_flux_cells(spec, instance.upflow_rate) {
        rhs[g.index(i, 0)] += spec.basal_heat_flux * az;
    }
    rhs[g.index(spec.upflow_column(), 0)] += instance.upflow_rate * spec.upflow_enthalpy;
    (a, rhs)
}

/// Steady advection-diffusion of heat with the Darcy fluxes from
/// [`solve_pressure`]. Iterated by defect correction until the relative
/// update falls below `1e-8` (at most 200 iterations).
pub fn solve_temperature(
    instance: &SliceModelInstance,
    pressure: &PressureSolution,
    spec: &SliceModelSpec,
    deadline: Option<Instant>,
) -> Result<TemperatureSolution> {
    check_instance(instance, spec)?;
    let (a, rhs) = assemble_heat(instance, pressure, spec);
    let lu = a.factorize()?;
    let mut temperature = vec![spec.top_temperature; spec.grid.cells()];
    for iteration in 1..=PICARD_MAX_ITER {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(EkiError::Timeout("temperature iteration".into()));
        }
        let applied = a.mul_vec(&temperature);
        let defect: Vec<f64> = rhs.iter().zip(&applied).map(|(b, at)| b - at).collect();
        let correction = lu.solve(&defect)?;
        let mut change = 0.0f64;
        let mut size = 0.0f64;
        for (t, dt) in temperature.iter_mut().zip(&correction) {
            *t += dt;
            change = change.max(dt.abs());
            size = size.max(t.abs());
        }
        if temperature.iter().any(|t| !t.is_finite()) {
            return Err(EkiError::NonFinite("temperature iterate".into()));
        }
        if change <= PICARD_TOL * size.max(1.0) {
            return Ok(TemperatureSolution {
                temperature,
                iterations: iteration,
            });
        }
    }
    Err(EkiError::Solver(format!(
        "temperature iteration did not converge in {PICARD_MAX_ITER} iterations"
    )))
}

/// Boundary energy fluxes of a temperature solution.
pub fn energy_balance(
    instance: &SliceModelInstance,
    pressure: &PressureSolution,
    temperature: &[f64],
    spec: &SliceModelSpec,
) -> EnergyBalance {
    let g = &spec.grid;
    let az = g.dx * spec.thickness;
    let gtop = spec.thermal_conductivity * az / (0.5 * g.dz);
    let mut top_conduction = 0.0;
    let mut top_advection = 0.0;
    for i in 0..g.nx {
        let t = temperature[g.index(i, g.nz - 1)];
        top_conduction += gtop * (t - spec.top_temperature);
        let out = pressure.fluxes.top[i];
        let upwind = if out >= 0.0 { t } else { spec.top_temperature };
        top_advection += spec.heat_capacity * out * upwind;
    }
    EnergyBalance {
        basal_conduction: basal_flux_cells(spec, instance.upflow_rate).count() as f64
            * spec.basal_heat_flux
            * az,
        upflow_enthalpy: instance.upflow_rate * spec.upflow_enthalpy,
        top_conduction,
        top_advection,
    }
}

/// Bilinear interpolation of a cell-centred field at every well depth,
/// ordered well by well and, within a well, deepest point first.
pub fn observe(field: &[f64], spec: &SliceModelSpec) -> Result<Vec<f64>> {
    let g = &spec.grid;
    if field.len() != g.cells() {
        return Err(EkiError::Dimension("one field value per cell required".into()));
    }
    if field.iter().any(|v| !v.is_finite()) {
        return Err(EkiError::NonFinite("observed field".into()));
    }
    let mut out = Vec::with_capacity(spec.output_dim());
    for w in &spec.wells {
        let mut depths = w.depths.clone();
        depths.sort_by(|a, b| b.total_cmp(a));
        for d in depths {
            out.push(interpolate(field, g, w.x, g.top() - d)?);
        }
    }
    Ok(out)
}

fn axis_weights(pos: f64, origin: f64, h: f64, n: usize) -> (usize, f64) {
    let f = ((pos - origin) / h - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (f.floor() as usize).min(n - 2);
    (i0, f - i0 as f64)
}

fn interpolate(field: &[f64], g: &GridSpec, x: f64, z: f64) -> Result<f64> {
    if !g.contains(x, z) {
        return Err(EkiError::Config(format!(
            "observation point ({x}, {z}) outside the grid"
        )));
    }
    let (i0, tx) = axis_weights(x, g.origin.0, g.dx, g.nx);
    let (k0, tz) = axis_weights(z, g.origin.1, g.dz, g.nz);
    let v = |i, k| field[g.index(i, k)];
    Ok((1.0 - tx) * (1.0 - tz) * v(i0, k0)
        + tx * (1.0 - tz) * v(i0 + 1, k0)
        + (1.0 - tx) * tz * v(i0, k0 + 1)
        + tx * tz * v(i0 + 1, k0 + 1))
}

/// Full slice forward model: prior map, flow and heat solves, observation.
#[derive(Debug, Clone)]
pub struct SliceForward {
    prior: SlicePrior,
    spec: SliceModelSpec,
}

/// Fields produced by one slice simulation.
#[derive(Debug, Clone)]
pub struct SliceSimulation {
    pub instance: SliceModelInstance,
    pub pressure: PressureSolution,
    pub temperature: TemperatureSolution,
    pub observations: Vec<f64>,
}

impl SliceForward {
    pub fn new(prior: SlicePrior, spec: SliceModelSpec) -> Result<Self> {
        spec.validate()?;
        if *prior.grid() != spec.grid {
            return Err(EkiError::Config("prior and model grids differ".into()));
        }
        Ok(Self { prior, spec })
    }

    pub fn prior(&self) -> &SlicePrior {
        &self.prior
    }

    pub fn spec(&self) -> &SliceModelSpec {
        &self.spec
    }

    pub fn simulate(&self, theta: &[f64], deadline: Option<Instant>) -> Result<SliceSimulation> {
        let instance = self.prior.build_instance(theta)?;
        let pressure = solve_pressure(&instance, &self.spec)?;
        let temperature = solve_temperature(&instance, &pressure, &self.spec, deadline)?;
        let observations = observe(&temperature.temperature, &self.spec)?;
        Ok(SliceSimulation {
            instance,
            pressure,
            temperature,
            observations,
        })
    }
}

impl ForwardModel for SliceForward {
    fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn evaluate(&self, theta: &[f64], ctx: &EvalContext) -> ForwardOutcome {
        match self.simulate(theta, ctx.deadline) {
            Ok(sim) => ForwardOutcome::Success(sim.observations).checked(),
            Err(EkiError::Timeout(_)) => ForwardOutcome::Failure(FailureReason::Timeout),
            Err(EkiError::NonFinite(_)) => ForwardOutcome::Failure(FailureReason::NonFinite),
            Err(_) => ForwardOutcome::Failure(FailureReason::NonConvergence),
        }
    }
}
