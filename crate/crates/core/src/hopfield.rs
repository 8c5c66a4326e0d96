//! Hopfield network primitives.
//!
//! Hebbian storage, local fields, asynchronous sign dynamics with their
//! energy, recall to a stable state, and the weight-matrix distance used for
//! retrieval from a [`MemoryBank`].
//!
//! Weight matrices are dense, row-major `n * n` buffers of `f64`. A pattern's
//! single-pattern Hebbian matrix is `w[i][j] = p_i * p_j / n` off the diagonal
//! and `0` on it; [`diff_fast`] compares two such matrices without building
//! them.

use serde::{Deserialize, Serialize};

use crate::corepatterns::{CoreId, MemoryBank};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Relative tolerance under which two distances count as a tie.
pub const TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Real,
    Bipolar,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Real => "real",
            Mode::Bipolar => "bipolar",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "real" => Ok(Mode::Real),
            "bipolar" => Ok(Mode::Bipolar),
            other => Err(format!("unknown mode `{other}` (expected real or bipolar)")),
        }
    }
}

/// An `n`-dimensional state or feature vector, `n >= 2`, all components finite.
/// Bipolar patterns hold only `-1.0` and `+1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    values: Vec<f64>,
    mode: Mode,
}

impl Pattern {
    pub fn new(values: Vec<f64>, mode: Mode) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidPattern(format!(
                "dimension {} is below the minimum of 2",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPattern(format!(
                "component {i} is not finite ({})",
                values[i]
            )));
        }
        if mode == Mode::Bipolar {
            if let Some(i) = values.iter().position(|&v| v != 1.0 && v != -1.0) {
                return Err(Error::InvalidPattern(format!(
                    "component {i} = {} is not bipolar",
                    values[i]
                )));
            }
        }
        Ok(Self { values, mode })
    }

    pub fn real(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Mode::Real)
    }

    pub fn bipolar(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Mode::Bipolar)
    }

    /// Bipolar pattern from signs: `true` is `+1`.
    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        Self::bipolar(bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn negated(&self) -> Pattern {
        Pattern {
            values: self.values.iter().map(|v| -v).collect(),
            mode: self.mode,
        }
    }

    pub fn dot(&self, other: &Pattern) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Copy with component `i` negated. Bipolar mode is preserved.
    pub fn flipped(&self, i: usize) -> Pattern {
        let mut values = self.values.clone();
        values[i] = -values[i];
        Pattern {
            values,
            mode: self.mode,
        }
    }
}

/// Symmetric, zero-diagonal `n * n` connection weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    w: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            w: vec![0.0; n * n],
        }
    }

    /// Row-major construction; rejects asymmetric, non-zero-diagonal or
    /// non-finite input.
    pub fn from_row_major(n: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("weights must be finite"));
        }
        for i in 0..n {
            if w[i * n + i] != 0.0 {
                return Err(Error::contract(format!("w[{i}][{i}] is not zero")));
            }
            for j in (i + 1)..n {
                if w[i * n + j] != w[j * n + i] {
                    return Err(Error::contract(format!("w[{i}][{j}] != w[{j}][{i}]")));
                }
            }
        }
        Ok(Self { n, w })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn is_symmetric_zero_diagonal(&self) -> bool {
        (0..self.n).all(|i| {
            self.get(i, i) == 0.0 && ((i + 1)..self.n).all(|j| self.get(i, j) == self.get(j, i))
        })
    }

    fn check_state(&self, state: &Pattern) -> Result<()> {
        if state.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: state.dim(),
            });
        }
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::contract(format!(
                "neuron index {i} out of range for {} neurons",
                self.n
            )));
        }
        Ok(())
    }
}

/// Weighted input sum of neuron `i`: `sum_j w[i][j] * x_j`.
pub fn local_field(w: &WeightMatrix, state: &Pattern, i: usize) -> Result<f64> {
    w.check_state(state)?;
    w.check_index(i)?;
    Ok(field_unchecked(w, state.values(), i))
}

fn field_unchecked(w: &WeightMatrix, x: &[f64], i: usize) -> f64 {
    w.row(i).iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Hebbian rule over `z >= 1` bipolar patterns:
/// `w[i][j] = (1/n) * sum_u p_u[i] * p_u[j]` for `i != j`, zero diagonal.
pub fn hebbian_store(patterns: &[Pattern]) -> Result<WeightMatrix> {
    let first = patterns
        .first()
        .ok_or_else(|| Error::Empty("no patterns to store".into()))?;
    let n = first.dim();
    for (u, p) in patterns.iter().enumerate() {
        if p.dim() != n {
            return Err(Error::InvalidPattern(format!(
                "pattern {u} has dimension {}, expected {n}",
                p.dim()
            )));
        }
        if p.mode() != Mode::Bipolar {
            return Err(Error::InvalidPattern(format!("pattern {u} is not bipolar")));
        }
    }

    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = patterns.iter().map(|p| p.values[i] * p.values[j]).sum();
            let v = s / n as f64;
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    Ok(WeightMatrix { n, w })
}

/// Hebbian matrix of one pattern, real or bipolar: `w[i][j] = p_i * p_j / n`.
pub fn single_pattern_weights(p: &Pattern) -> WeightMatrix {
    let n = p.dim();
    let x = p.values();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = x[i] * x[j] / n as f64;
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    WeightMatrix { n, w }
}

fn require_bipolar(state: &Pattern, what: &str) -> Result<()> {
    if state.mode() != Mode::Bipolar {
        return Err(Error::InvalidPattern(format!(
            "{what} must be bipolar for sign dynamics"
        )));
    }
    Ok(())
}

fn sweep_in_place(w: &WeightMatrix, x: &mut [f64], order: &[usize]) -> bool {
    let mut changed = false;
    for &i in order {
        let field = field_unchecked(w, x, i);
        // sign(0) keeps the current state
        let next = if field > 0.0 {
            1.0
        } else if field < 0.0 {
            -1.0
        } else {
            x[i]
        };
        if next != x[i] {
            x[i] = next;
            changed = true;
        }
    }
    changed
}

/// One asynchronous pass: neurons update in `order`, each seeing the latest
/// states. Returns the new state and whether any neuron flipped.
pub fn async_update_sweep(
    w: &WeightMatrix,
    state: &Pattern,
    order: &[usize],
) -> Result<(Pattern, bool)> {
    w.check_state(state)?;
    require_bipolar(state, "state")?;
    let n = w.n();
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(Error::contract(format!(
            "update order has {} entries, expected {n}",
            order.len()
        )));
    }
    for &i in order {
        if i >= n || seen[i] {
            return Err(Error::contract(format!(
                "update order is not a permutation (entry {i})"
            )));
        }
        seen[i] = true;
    }
    let mut x = state.values.clone();
    let changed = sweep_in_place(w, &mut x, order);
    Ok((
        Pattern {
            values: x,
            mode: Mode::Bipolar,
        },
        changed,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallResult {
    pub final_state: Pattern,
    pub sweeps_used: usize,
    pub converged: bool,
    /// Network energy after each sweep.
    pub energy_trace: Vec<f64>,
}

/// Run asynchronous sweeps, each in a fresh random order drawn from `seed`,
/// until a full sweep flips nothing or `max_sweeps` is exhausted.
pub fn recall(
    w: &WeightMatrix,
    probe: &Pattern,
    max_sweeps: usize,
    seed: u64,
) -> Result<RecallResult> {
    w.check_state(probe)?;
    require_bipolar(probe, "probe")?;
    if max_sweeps == 0 {
        return Err(Error::contract("max_sweeps must be at least 1"));
    }
    let mut rng = SplitMix64::new(seed);
    let mut x = probe.values.clone();
    let mut energy_trace = Vec::new();
    let mut converged = false;
    let mut sweeps_used = 0;
    while sweeps_used < max_sweeps {
        let order = rng.permutation(w.n());
        let changed = sweep_in_place(w, &mut x, &order);
        sweeps_used += 1;
        energy_trace.push(energy_unchecked(w, &x));
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(RecallResult {
        final_state: Pattern {
            values: x,
            mode: Mode::Bipolar,
        },
        sweeps_used,
        converged,
        energy_trace,
    })
}

/// `E_i = -(1/2) * xi_i * x_i`.
pub fn neuron_energy(w: &WeightMatrix, state: &Pattern, i: usize) -> Result<f64> {
    let field = local_field(w, state, i)?;
    Ok(-0.5 * field * state.values[i])
}

/// `E = -(1/2) * sum_i sum_j w[i][j] * x_i * x_j`, the sum of neuron energies.
pub fn total_energy(w: &WeightMatrix, state: &Pattern) -> Result<f64> {
    w.check_state(state)?;
    Ok(energy_unchecked(w, state.values()))
}

fn energy_unchecked(w: &WeightMatrix, x: &[f64]) -> f64 {
    let s: f64 = (0..w.n()).map(|i| field_unchecked(w, x, i) * x[i]).sum();
    -0.5 * s
}

fn check_pair(t: &Pattern, s: &Pattern) -> Result<()> {
    if t.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            found: s.dim(),
        });
    }
    if t.mode() != s.mode() {
        return Err(Error::contract(format!(
            "cannot compare a {} pattern with a {} pattern",
            t.mode(),
            s.mode()
        )));
    }
    Ok(())
}

/// Frobenius distance between the single-pattern Hebbian matrices of `t` and
/// `s`, computed by materializing both matrices. O(n^2).
pub fn diff_naive(t: &Pattern, s: &Pattern) -> Result<f64> {
    check_pair(t, s)?;
    let wt = single_pattern_weights(t);
    let ws = single_pattern_weights(s);
    let sq: f64 = wt
        .as_slice()
        .iter()
        .zip(ws.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq.sqrt())
}

/// Same distance as [`diff_naive`] in O(n).
///
/// With `n^2 * Diff^2 = |t|^4 + |s|^4 - 2 (t.s)^2 - sum_i (t_i^2 - s_i^2)^2`,
/// substituting `u = t - s` and `v = t + s` (so `t_i t_j - s_i s_j =
/// (u_i v_j + v_i u_j) / 2`) gives the cancellation-free form
///
/// ```text
/// n^2 * Diff^2 = (|u|^2 |v|^2 + (u.v)^2) / 2 - sum_i (u_i v_i)^2
/// ```
///
/// which is exactly zero for `s = t` and `s = -t`.
pub fn diff_fast(t: &Pattern, s: &Pattern) -> Result<f64> {
    check_pair(t, s)?;
    Ok(diff_unchecked(t.values(), s.values()))
}

pub(crate) fn diff_unchecked(t: &[f64], s: &[f64]) -> f64 {
    let n = t.len() as f64;
    let (mut uu, mut vv, mut uv, mut diag) = (0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in t.iter().zip(s) {
        let u = a - b;
        let v = a + b;
        uu += u * u;
        vv += v * v;
        uv += u * v;
        diag += (u * v) * (u * v);
    }
    let radicand = (0.5 * (uu * vv + uv * uv) - diag) / (n * n);
    // rounding can leave a tiny negative radicand
    radicand.max(0.0).sqrt()
}

/// Core patterns at minimal distance from a query, ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Nearest {
    pub ids: Vec<CoreId>,
    pub distance: f64,
}

/// All core patterns whose [`diff_fast`] to `test` is within
/// [`TIE_EPSILON`] (relative) of the minimum.
pub fn retrieve_nearest(test: &Pattern, bank: &MemoryBank) -> Result<Nearest> {
    if bank.core_patterns().is_empty() {
        return Err(Error::Empty("memory bank has no core patterns".into()));
    }
    let distances = bank
        .core_patterns()
        .iter()
        .map(|c| diff_fast(test, &c.values).map(|d| (c.id, d)))
        .collect::<Result<Vec<_>>>()?;
    let min = distances
        .iter()
        .map(|&(_, d)| d)
        .fold(f64::INFINITY, f64::min);
    let cutoff = min + TIE_EPSILON * min;
    let mut ids: Vec<CoreId> = distances
        .into_iter()
        .filter(|&(_, d)| d <= cutoff)
        .map(|(id, _)| id)
        .collect();
    ids.sort_unstable();
    Ok(Nearest { ids, distance: min })
}
