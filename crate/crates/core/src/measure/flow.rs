use super::{bin_to_grid, DiscreteSignedMeasure, GridSignedMeasure};
use crate::error::{Error, Result};

/// Read-only view of one law `μ_t`: atoms with optional explicit weights
/// (uniform `1/n` otherwise) and a cached mean when available.
#[derive(Debug, Clone, Copy)]
pub struct LawRef<'a> {
    pub dim: usize,
    pub positions: &'a [f64],
    pub weights: Option<&'a [f64]>,
    pub mean: Option<&'a [f64]>,
}

impl<'a> LawRef<'a> {
    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn weight(&self, j: usize) -> f64 {
        match self.weights {
            Some(w) => w[j],
            None => 1.0 / self.len() as f64,
        }
    }

    pub fn atom(&self, j: usize) -> &'a [f64] {
        &self.positions[j * self.dim..(j + 1) * self.dim]
    }

    /// `∫ y μ(dy)`, from the cache when present.
    pub fn mean(&self) -> Vec<f64> {
        if let Some(m) = self.mean {
            return m.to_vec();
        }
        let mut m = vec![0.0; self.dim];
        for j in 0..self.len() {
            let w = self.weight(j);
            for (mi, yi) in m.iter_mut().zip(self.atom(j)) {
                *mi += w * yi;
            }
        }
        m
    }
}

/// Anything that can hand out the law at a time `t` of a measure flow.
///
/// Lookups resolve to the nearest stored slice at or below `t`.
pub trait LawSource: Sync {
    fn law_at(&self, time: f64) -> Result<LawRef<'_>>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowMeasure {
    Discrete(DiscreteSignedMeasure),
    Grid(GridSignedMeasure),
}

/// One time slice of a [`MeasureFlow`]. Grid slices keep their cell-center
/// atoms so that coefficient evaluation sees a single representation.
#[derive(Debug, Clone)]
pub struct FlowSlice {
    pub time: f64,
    measure: FlowMeasure,
    atoms: DiscreteSignedMeasure,
    mean: Vec<f64>,
}

impl FlowSlice {
    pub fn discrete(time: f64, mu: DiscreteSignedMeasure) -> Self {
        let mean = mu.first_moment();
        Self {
            time,
            atoms: mu.clone(),
            measure: FlowMeasure::Discrete(mu),
            mean,
        }
    }

    pub fn grid(time: f64, g: GridSignedMeasure) -> Self {
        let atoms = g.to_atoms();
        let mean = atoms.first_moment();
        Self {
            time,
            atoms,
            measure: FlowMeasure::Grid(g),
            mean,
        }
    }

    pub fn measure(&self) -> &FlowMeasure {
        &self.measure
    }

    pub fn atoms(&self) -> &DiscreteSignedMeasure {
        &self.atoms
    }

    pub fn law(&self) -> LawRef<'_> {
        LawRef {
            dim: self.atoms.dim(),
            positions: self.atoms.positions(),
            weights: Some(self.atoms.weights()),
            mean: Some(&self.mean),
        }
    }
}

/// A time-indexed family `{μ_t}` on `[-τ, T]`.
#[derive(Debug, Clone)]
pub struct MeasureFlow {
    delay: f64,
    horizon: f64,
    slices: Vec<FlowSlice>,
}

const TIME_SLACK: f64 = 1e-9;

impl MeasureFlow {
    pub fn new(delay: f64, horizon: f64, slices: Vec<FlowSlice>) -> Result<Self> {
        if !(delay >= 0.0 && delay.is_finite()) {
            return Err(Error::invalid("delay must be a finite nonnegative number"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon must be positive"));
        }
        if slices.is_empty() {
            return Err(Error::Empty("measure flow slices"));
        }
        if slices.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::invalid("flow time grid must be strictly increasing"));
        }
        let first = slices[0].time;
        let last = slices[slices.len() - 1].time;
        if first > -delay + TIME_SLACK || last < horizon - TIME_SLACK {
            return Err(Error::invalid(format!(
                "flow time grid [{first}, {last}] does not cover [{}, {horizon}]",
                -delay
            )));
        }
        Ok(Self { delay, horizon, slices })
    }

    /// Bins every discrete slice onto a common grid.
    pub fn binned(&self, origin: &[f64], cell_width: &[f64]) -> Result<Self> {
        let slices = self
            .slices
            .iter()
            .map(|s| Ok(FlowSlice::grid(s.time, bin_to_grid(s.atoms(), origin, cell_width)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            delay: self.delay,
            horizon: self.horizon,
            slices,
        })
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn slices(&self) -> &[FlowSlice] {
        &self.slices
    }

    pub fn times(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.time).collect()
    }

    pub fn slice_at(&self, time: f64) -> Result<&FlowSlice> {
        let idx = slice_index(self.slices.len(), |i| self.slices[i].time, time)?;
        Ok(&self.slices[idx])
    }
}

impl LawSource for MeasureFlow {
    fn law_at(&self, time: f64) -> Result<LawRef<'_>> {
        Ok(self.slice_at(time)?.law())
    }
}

/// Index of the last slice whose time is at or below `time`, allowing a
/// small relative slack for times produced by accumulated `k * dt`.
pub(crate) fn slice_index(len: usize, time_of: impl Fn(usize) -> f64, time: f64) -> Result<usize> {
    let start = time_of(0);
    let end = time_of(len - 1);
    let slack = TIME_SLACK * (1.0 + time.abs());
    if !time.is_finite() || time < start - slack || time > end + slack {
        return Err(Error::MissingSlice { time, start, end });
    }
    // partition point over a monotone predicate
    let (mut lo, mut hi) = (0usize, len);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if time_of(mid) <= time + slack {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Ok(lo.saturating_sub(1))
}
