//! Brickwall geometries, the stochastic event schedule and trajectory
//! execution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{ChannelKind, ChannelTag, MonitoredState};
use crate::clifford::two_qubit_clifford_group;
use crate::error::{Error, Result};
use crate::observables::{Observable, ObservableSet, PartitionScheme};
use crate::stab::InitialState;
use crate::tableau::CompressedTableau;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "l")]
pub enum Geometry {
    /// Periodic chain of `L` sites.
    Chain(usize),
    /// Periodic `L × L` square lattice, site index `row · L + col`.
    Square(usize),
}

impl Geometry {
    pub fn l(&self) -> usize {
        match *self {
            Geometry::Chain(l) | Geometry::Square(l) => l,
        }
    }

    pub fn num_sites(&self) -> usize {
        match *self {
            Geometry::Chain(l) => l,
            Geometry::Square(l) => l * l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.l();
        if l < 2 || l % 2 == 1 {
            return Err(Error::InvalidInput(format!("linear size must be even and at least 2, got {l}")));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Geometry::Chain(_) => "chain",
            Geometry::Square(_) => "square",
        }
    }
}

/// Orientation and parity of one 2D brickwall layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerDir {
    HorizontalEven,
    HorizontalOdd,
    VerticalEven,
    VerticalOdd,
}

pub const DEFAULT_LAYER_ORDER: [LayerDir; 4] =
    [LayerDir::HorizontalEven, LayerDir::HorizontalOdd, LayerDir::VerticalEven, LayerDir::VerticalOdd];

/// Disjoint site pairs, one perfect matching per layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSchedule {
    pub layers: Vec<Vec<(usize, usize)>>,
}

impl LayerSchedule {
    pub fn layers_per_step(&self) -> usize {
        self.layers.len()
    }
}

pub fn build_schedule(geometry: Geometry) -> Result<LayerSchedule> {
    build_schedule_with_order(geometry, &DEFAULT_LAYER_ORDER)
}

pub fn build_schedule_with_order(geometry: Geometry, order: &[LayerDir; 4]) -> Result<LayerSchedule> {
    geometry.validate()?;
    let l = geometry.l();
    let layers = match geometry {
        Geometry::Chain(_) => {
            let even = (0..l / 2).map(|i| (2 * i, 2 * i + 1)).collect();
            let odd = (0..l / 2).map(|i| (2 * i + 1, (2 * i + 2) % l)).collect();
            vec![even, odd]
        }
        Geometry::Square(_) => order
            .iter()
            .map(|dir| {
                let mut pairs = Vec::with_capacity(l * l / 2);
                for line in 0..l {
                    for i in 0..l / 2 {
                        let (u, v) = match dir {
                            LayerDir::HorizontalEven | LayerDir::VerticalEven => (2 * i, 2 * i + 1),
                            LayerDir::HorizontalOdd | LayerDir::VerticalOdd => (2 * i + 1, (2 * i + 2) % l),
                        };
                        pairs.push(match dir {
                            LayerDir::HorizontalEven | LayerDir::HorizontalOdd => (line * l + u, line * l + v),
                            LayerDir::VerticalEven | LayerDir::VerticalOdd => (u * l + line, v * l + line),
                        });
                    }
                }
                pairs
            })
            .collect(),
    };
    Ok(LayerSchedule { layers })
}

/// One noise/QE pair with its rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub noise: ChannelTag,
    pub qe: ChannelTag,
    pub q_n: f64,
    pub q_e: f64,
}

impl ChannelSpec {
    /// Symmetric pair with total rate `q` split evenly.
    pub fn symmetric(tag: ChannelTag, q: f64) -> Self {
        Self { noise: tag, qe: tag, q_n: q / 2.0, q_e: q / 2.0 }
    }
}

/// Event categories in a slot, applied in a configurable order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Measure,
    Noise,
    Qe,
}

pub const DEFAULT_EVENT_ORDER: [EventKind; 3] = [EventKind::Measure, EventKind::Noise, EventKind::Qe];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub geometry: Geometry,
    pub p: f64,
    pub channels: Vec<ChannelSpec>,
    /// Number of time steps.
    pub depth: usize,
    pub initial: InitialState,
    pub master_seed: u64,
    pub event_order: [EventKind; 3],
    pub layer_order: [LayerDir; 4],
    /// First time step (1-based) at which observables are evaluated.
    pub record_from: usize,
    #[serde(default)]
    pub partition: PartitionScheme,
}

impl CircuitSpec {
    /// Defaults: no channels, depth `10 L`, pure initial state, all steps
    /// recorded.
    pub fn new(geometry: Geometry, p: f64) -> Self {
        Self {
            geometry,
            p,
            channels: Vec::new(),
            depth: 10 * geometry.l(),
            initial: InitialState::PureZero,
            master_seed: 0,
            event_order: DEFAULT_EVENT_ORDER,
            layer_order: DEFAULT_LAYER_ORDER,
            record_from: 1,
            partition: PartitionScheme::Strips,
        }
    }

    pub fn with_channel(mut self, c: ChannelSpec) -> Self {
        self.channels.push(c);
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_initial(mut self, initial: InitialState) -> Self {
        self.initial = initial;
        self
    }

    /// Records only the last `k` steps.
    pub fn record_last(mut self, k: usize) -> Self {
        self.record_from = self.depth.saturating_sub(k) + 1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let check = |name: &str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                Err(Error::InvalidInput(format!("{name} = {v}: probability out of range")))
            } else {
                Ok(())
            }
        };
        check("p", self.p)?;
        for c in &self.channels {
            check("q_n", c.q_n)?;
            check("q_e", c.q_e)?;
            check("q_n + q_e", c.q_n + c.q_e)?;
        }
        if self.depth == 0 {
            return Err(Error::InvalidInput("depth must be at least 1".into()));
        }
        let mut kinds = self.event_order.to_vec();
        kinds.sort_by_key(|k| *k as u8);
        kinds.dedup();
        if kinds.len() != 3 {
            return Err(Error::InvalidInput("event order must list measure, noise and qe once each".into()));
        }
        let mut dirs = self.layer_order.to_vec();
        dirs.sort_by_key(|d| *d as u8);
        dirs.dedup();
        if dirs.len() != 4 {
            return Err(Error::InvalidInput("layer order must list the four layer types once each".into()));
        }
        Ok(())
    }

    /// Random stream for one trajectory.
    pub fn rng(&self, trajectory_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(trajectory_index);
        rng
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based time step.
    pub step: usize,
    /// Layer-averaged observable values, aligned with
    /// [`TrajectoryRecord::observables`]; `None` before `record_from`.
    pub values: Option<Vec<f64>>,
    pub measurements: usize,
    pub noise_events: usize,
    pub qe_events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub observables: Vec<Observable>,
    pub steps: Vec<StepRecord>,
}

impl TrajectoryRecord {
    pub fn value(&self, step: usize, obs: Observable) -> Option<f64> {
        let i = self.observables.iter().position(|&o| o == obs)?;
        self.steps.get(step.checked_sub(1)?)?.values.as_ref().map(|v| v[i])
    }

    /// Mean over all recorded steps.
    pub fn recorded_mean(&self, obs: Observable) -> Option<f64> {
        let i = self.observables.iter().position(|&o| o == obs)?;
        let vals: Vec<f64> = self.steps.iter().filter_map(|s| s.values.as_ref().map(|v| v[i])).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn series(&self, obs: Observable) -> Vec<(usize, f64)> {
        let Some(i) = self.observables.iter().position(|&o| o == obs) else {
            return Vec::new();
        };
        self.steps.iter().filter_map(|s| s.values.as_ref().map(|v| (s.step, v[i]))).collect()
    }
}

/// Runs one trajectory on the fast compressed tableau.
pub fn run_trajectory(spec: &CircuitSpec, observables: &[Observable], trajectory_index: u64) -> Result<TrajectoryRecord> {
    let n = spec.geometry.num_sites();
    run_trajectory_with(spec, observables, trajectory_index, || CompressedTableau::new(n, spec.initial))
}

/// Runs one trajectory on any backend. If an environment observable is
/// requested a twin state is evolved in lockstep with the noise and QE roles
/// exchanged.
pub fn run_trajectory_with<S, F>(
    spec: &CircuitSpec,
    observables: &[Observable],
    trajectory_index: u64,
    make_state: F,
) -> Result<TrajectoryRecord>
where
    S: MonitoredState,
    F: Fn() -> S,
{
    spec.validate()?;
    let schedule = build_schedule_with_order(spec.geometry, &spec.layer_order)?;
    let evaluator = ObservableSet::with_scheme(spec.geometry, observables, spec.partition)?;
    let group = two_qubit_clifford_group();
    let n = spec.geometry.num_sites();
    let mut rng = spec.rng(trajectory_index);
    let mut state = make_state();
    let mut twin = evaluator.needs_twin().then(&make_state);
    let layers = schedule.layers_per_step() as f64;

    let noise_kinds: Vec<ChannelKind> = spec.channels.iter().map(|c| ChannelKind::noise(c.noise)).collect();
    let qe_kinds: Vec<ChannelKind> = spec.channels.iter().map(|c| ChannelKind::qe(c.qe)).collect();
    let k = spec.channels.len();
    let mut noise_hit = vec![false; k];
    let mut qe_hit = vec![false; k];

    let mut steps = Vec::with_capacity(spec.depth);
    for step in 1..=spec.depth {
        let record = step >= spec.record_from;
        let mut acc = vec![0.0; observables.len()];
        let mut rec = StepRecord { step, ..Default::default() };
        for layer in &schedule.layers {
            for &(a, b) in layer {
                let c = group.get(group.sample_index(&mut rng));
                state.apply_clifford(c, a, b);
                if let Some(t) = twin.as_mut() {
                    t.apply_clifford(c, a, b);
                }
            }
            for site in 0..n {
                let measure = rng.gen::<f64>() < spec.p;
                for (j, c) in spec.channels.iter().enumerate() {
                    noise_hit[j] = rng.gen::<f64>() < c.q_n;
                    qe_hit[j] = rng.gen::<f64>() < c.q_e;
                }
                for ev in spec.event_order {
                    match ev {
                        EventKind::Measure if measure => {
                            rec.measurements += 1;
                            state.measure(site);
                            if let Some(t) = twin.as_mut() {
                                t.measure(site);
                            }
                        }
                        EventKind::Noise => {
                            for j in (0..k).filter(|&j| noise_hit[j]) {
                                rec.noise_events += 1;
                                state.apply_channel(site, noise_kinds[j]);
                                if let Some(t) = twin.as_mut() {
                                    t.apply_channel(site, noise_kinds[j].swapped_role());
                                }
                            }
                        }
                        EventKind::Qe => {
                            for j in (0..k).filter(|&j| qe_hit[j]) {
                                rec.qe_events += 1;
                                state.apply_channel(site, qe_kinds[j]);
                                if let Some(t) = twin.as_mut() {
                                    t.apply_channel(site, qe_kinds[j].swapped_role());
                                }
                            }
                        }
                        _ => {}
                    }
                }
            }
            if record {
                evaluator.accumulate(&state, twin.as_ref(), &mut acc);
            }
        }
        if record {
            rec.values = Some(acc.into_iter().map(|v| v / layers).collect());
        }
        steps.push(rec);
    }
    Ok(TrajectoryRecord { observables: observables.to_vec(), steps })
}
