//! Conditional entanglement observables: I₃ over a four-region partition,
//! half-system CEE and the purification probe.

use serde::{Deserialize, Serialize};

use crate::channels::MonitoredState;
use crate::circuit::{run_trajectory, CircuitSpec, Geometry};
use crate::error::{Error, Result};
use crate::stab::{InitialState, QubitRegion};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Conditional tripartite mutual information.
    I3,
    /// `S(half|A)`.
    CeeHalf,
    /// `S(S|A)` for the whole system.
    CeeFull,
    /// `S(half|E)` from the environment twin.
    CeeHalfEnv,
    /// `S(S|E)` from the environment twin.
    CeeFullEnv,
}

impl Observable {
    pub const ALL: [Observable; 5] =
        [Observable::I3, Observable::CeeHalf, Observable::CeeFull, Observable::CeeHalfEnv, Observable::CeeFullEnv];

    pub fn name(self) -> &'static str {
        match self {
            Observable::I3 => "i3",
            Observable::CeeHalf => "cee_half",
            Observable::CeeFull => "cee_full",
            Observable::CeeHalfEnv => "cee_half_env",
            Observable::CeeFullEnv => "cee_full_env",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == s)
    }

    pub fn uses_twin(self) -> bool {
        matches!(self, Observable::CeeHalfEnv | Observable::CeeFullEnv)
    }
}

/// Shape of the four 2D regions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    #[default]
    Strips,
    Quadrants,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition4 {
    pub a: QubitRegion,
    pub b: QubitRegion,
    pub c: QubitRegion,
    pub d: QubitRegion,
}

impl Partition4 {
    pub fn regions(&self) -> [&QubitRegion; 4] {
        [&self.a, &self.b, &self.c, &self.d]
    }

    /// Relabels `a→b→c→d→a`.
    pub fn rotated(&self) -> Partition4 {
        Partition4 { a: self.d.clone(), b: self.a.clone(), c: self.b.clone(), d: self.c.clone() }
    }
}

pub fn partition_four(geometry: Geometry) -> Result<Partition4> {
    partition_four_with(geometry, PartitionScheme::Strips)
}

/// Four equal regions. Chains are cut into contiguous quarters. On the square
/// lattice strips follow column-major site order, so when `4 | L` each strip
/// is `L/4` full columns; quadrants split both axes in half.
pub fn partition_four_with(geometry: Geometry, scheme: PartitionScheme) -> Result<Partition4> {
    geometry.validate()?;
    let n = geometry.num_sites();
    if n % 4 != 0 {
        return Err(Error::InvalidInput(format!("{n} sites cannot be split into four equal regions")));
    }
    let l = geometry.l();
    let order: Vec<usize> = match geometry {
        Geometry::Chain(_) => (0..n).collect(),
        Geometry::Square(_) => match scheme {
            PartitionScheme::Strips => (0..l).flat_map(|c| (0..l).map(move |r| r * l + c)).collect(),
            PartitionScheme::Quadrants => {
                let h = l / 2;
                let quad = |qr: usize, qc: usize| {
                    (0..h).flat_map(move |r| (0..h).map(move |c| (qr * h + r) * l + qc * h + c))
                };
                quad(0, 0).chain(quad(0, 1)).chain(quad(1, 1)).chain(quad(1, 0)).collect()
            }
        },
    };
    let q = n / 4;
    let region = |i: usize| QubitRegion::new(n, order[i * q..(i + 1) * q].iter().copied());
    Ok(Partition4 { a: region(0)?, b: region(1)?, c: region(2)?, d: region(3)? })
}

/// Contiguous half of the system: the first `L/2` sites of a chain or the
/// first `L/2` columns of the square lattice.
pub fn half_region(geometry: Geometry) -> Result<QubitRegion> {
    geometry.validate()?;
    let l = geometry.l();
    let n = geometry.num_sites();
    match geometry {
        Geometry::Chain(_) => QubitRegion::new(n, 0..l / 2),
        Geometry::Square(_) => QubitRegion::new(n, (0..l).flat_map(|r| (0..l / 2).map(move |c| r * l + c))),
    }
}

pub fn conditional_i3<S: MonitoredState + ?Sized>(state: &S, part: &Partition4) -> i64 {
    state.conditional_i3(&part.a, &part.b, &part.c)
}

pub fn bipartite_cee<S: MonitoredState + ?Sized>(state: &S, geometry: Geometry) -> Result<i64> {
    Ok(state.cee(&half_region(geometry)?))
}

/// `S(S|A)` at every time step of one trajectory started maximally mixed.
pub fn purification_curve(spec: &CircuitSpec, trajectory_index: u64) -> Result<Vec<(usize, f64)>> {
    if spec.initial != InitialState::MaximallyMixed {
        return Err(Error::InvalidInput("purification needs a maximally mixed initial state".into()));
    }
    let rec = run_trajectory(spec, &[Observable::CeeFull], trajectory_index)?;
    Ok(rec.series(Observable::CeeFull))
}

/// Precomputed regions for evaluating a fixed observable list.
pub struct ObservableSet {
    list: Vec<Observable>,
    partition: Option<Partition4>,
    half: QubitRegion,
    full: QubitRegion,
}

impl ObservableSet {
    pub fn new(geometry: Geometry, list: &[Observable]) -> Result<Self> {
        Self::with_scheme(geometry, list, PartitionScheme::Strips)
    }

    pub fn with_scheme(geometry: Geometry, list: &[Observable], scheme: PartitionScheme) -> Result<Self> {
        let partition =
            if list.contains(&Observable::I3) { Some(partition_four_with(geometry, scheme)?) } else { None };
        Ok(Self {
            list: list.to_vec(),
            partition,
            half: half_region(geometry)?,
            full: QubitRegion::full(geometry.num_sites()),
        })
    }

    pub fn needs_twin(&self) -> bool {
        self.list.iter().any(|o| o.uses_twin())
    }

    /// Adds the current values to `acc`.
    pub fn accumulate<S: MonitoredState>(&self, state: &S, twin: Option<&S>, acc: &mut [f64]) {
        for (slot, obs) in acc.iter_mut().zip(&self.list) {
            let v = match obs {
                Observable::I3 => conditional_i3(state, self.partition.as_ref().expect("partition built")),
                Observable::CeeHalf => state.cee(&self.half),
                Observable::CeeFull => state.cee(&self.full),
                Observable::CeeHalfEnv => twin.expect("twin state").cee(&self.half),
                Observable::CeeFullEnv => twin.expect("twin state").cee(&self.full),
            };
            *slot += v as f64;
        }
    }
}
