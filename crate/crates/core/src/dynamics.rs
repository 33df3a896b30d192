//! Interaction-picture Hamiltonians and exact unitary evolution.
//!
//! Cavity couplings enter as `g (a |u><l| + a^dag |l><u|)`. Classical drives
//! enter as `(Omega/2) (e^{i theta} |u><l| + e^{-i theta} |l><u|)`, so a pulse
//! of duration `pi/Omega` transfers the full population. Evolution is
//! `e^{-iHt}`, with hbar = 1.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

use crate::hilbert::{hermiticity_defect, CouplingId, Layout, LevelId, StateVector, SystemSpec, HERMITIAN_TOL};

const C0: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("unknown coupling #{0}")]
    UnknownCoupling(usize),
    #[error("drive references unknown level `{0}`")]
    UnknownLevel(String),
    #[error("drive connects level `{0}` to itself")]
    SelfDrive(String),
    #[error("drive Rabi frequency must be finite and non-negative, got {0}")]
    InvalidRabi(f64),
    #[error("drive phase must be finite, got {0}")]
    InvalidPhase(f64),
    #[error("evolution time must be finite and non-negative, got {0}")]
    InvalidDuration(f64),
    #[error("state and Hamiltonian live in different spaces")]
    DimensionMismatch,
    #[error("Hamiltonian is not Hermitian (defect {0:e})")]
    NotHermitian(f64),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// Classical laser drive on an atomic transition.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveTerm {
    pub upper: LevelId,
    pub lower: LevelId,
    pub rabi: f64,
    pub phase: f64,
}

impl DriveTerm {
    pub fn new(upper: &str, lower: &str, rabi: f64) -> Self {
        Self {
            upper: LevelId::new(upper).expect("nonempty level"),
            lower: LevelId::new(lower).expect("nonempty level"),
            rabi,
            phase: 0.0,
        }
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }
}

/// Dense Hermitian Hamiltonian over a composite basis (rad per unit time).
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    layout: Arc<Layout>,
    matrix: DMatrix<Complex64>,
}

impl Hamiltonian {
    pub fn from_matrix(layout: Arc<Layout>, matrix: DMatrix<Complex64>) -> Result<Self> {
        if matrix.nrows() != layout.dim() || matrix.ncols() != layout.dim() {
            return Err(DynamicsError::DimensionMismatch);
        }
        let defect = hermiticity_defect(&matrix);
        if defect > HERMITIAN_TOL {
            return Err(DynamicsError::NotHermitian(defect));
        }
        Ok(Self { layout, matrix })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|z| *z == C0)
    }
}

/// Assembles the Hamiltonian with the given couplings switched on plus the
/// classical drives. Creation on a mode at `n_max` is truncated away.
pub fn build_hamiltonian(spec: &SystemSpec, active: &[CouplingId], drives: &[DriveTerm]) -> Result<Hamiltonian> {
    let layout = spec.layout().clone();
    let dim = layout.dim();
    let mut h = DMatrix::from_element(dim, dim, C0);

    for id in active {
        let c = spec.coupling(*id).ok_or(DynamicsError::UnknownCoupling(id.0))?;
        let mode = layout.mode_index(&c.mode).expect("validated by SystemSpec");
        let upper = spec.level_index(&c.upper).expect("validated by SystemSpec");
        let lower = spec.level_index(&c.lower).expect("validated by SystemSpec");
        // a |u><l| : |l, n> -> sqrt(n) |u, n-1>
        for col in 0..dim {
            let (level, occ) = layout.decompose(col);
            if level != lower || occ[mode] == 0 {
                continue;
            }
            let mut lowered = occ.clone();
            lowered[mode] -= 1;
            let row = layout.compose(upper, &lowered).expect("in range");
            let amp = Complex64::new(c.g * (occ[mode] as f64).sqrt(), 0.0);
            h[(row, col)] += amp;
            h[(col, row)] += amp.conj();
        }
    }

    for d in drives {
        if !(d.rabi.is_finite() && d.rabi >= 0.0) {
            return Err(DynamicsError::InvalidRabi(d.rabi));
        }
        if !d.phase.is_finite() {
            return Err(DynamicsError::InvalidPhase(d.phase));
        }
        let upper = spec
            .level_index(&d.upper)
            .ok_or_else(|| DynamicsError::UnknownLevel(d.upper.to_string()))?;
        let lower = spec
            .level_index(&d.lower)
            .ok_or_else(|| DynamicsError::UnknownLevel(d.lower.to_string()))?;
        if upper == lower {
            return Err(DynamicsError::SelfDrive(d.upper.to_string()));
        }
        let amp = Complex64::from_polar(0.5 * d.rabi, d.phase);
        let f = layout.field_dim();
        for j in 0..f {
            let (row, col) = (upper * f + j, lower * f + j);
            h[(row, col)] += amp;
            h[(col, row)] += amp.conj();
        }
    }

    Ok(Hamiltonian { layout, matrix: h })
}

fn check_inputs(state: &StateVector, h: &Hamiltonian, t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(DynamicsError::InvalidDuration(t));
    }
    if state.dim() != h.matrix.nrows() || **state.layout() != *h.layout {
        return Err(DynamicsError::DimensionMismatch);
    }
    let defect = hermiticity_defect(&h.matrix);
    if defect > HERMITIAN_TOL {
        return Err(DynamicsError::NotHermitian(defect));
    }
    Ok(())
}

/// `e^{-iHt} |psi>` from the eigendecomposition of each connected block of
/// `H`. Blocks carrying no amplitude are skipped.
pub fn evolve(state: &StateVector, h: &Hamiltonian, t: f64) -> Result<StateVector> {
    check_inputs(state, h, t)?;
    if t == 0.0 || h.is_zero() {
        return Ok(state.clone());
    }
    let psi = state.amplitudes();
    let mut out = psi.to_vec();
    for block in connected_blocks(&h.matrix) {
        if block.iter().all(|&i| psi[i] == C0) {
            continue;
        }
        let sub = DMatrix::from_fn(block.len(), block.len(), |r, c| h.matrix[(block[r], block[c])]);
        let v = DVector::from_iterator(block.len(), block.iter().map(|&i| psi[i]));
        let evolved = propagate(sub, &v, t);
        for (k, &i) in block.iter().enumerate() {
            out[i] = evolved[k];
        }
    }
    Ok(StateVector::from_normalized(state.layout().clone(), out))
}

/// `e^{-iHt} |psi>` from a single eigendecomposition of the full matrix.
/// Slower than [`evolve`]; kept as an independent route for cross-checks.
pub fn evolve_dense(state: &StateVector, h: &Hamiltonian, t: f64) -> Result<StateVector> {
    check_inputs(state, h, t)?;
    let v = DVector::from_column_slice(state.amplitudes());
    let out = propagate(h.matrix.clone(), &v, t);
    Ok(StateVector::from_normalized(state.layout().clone(), out.iter().copied().collect()))
}

fn propagate(h: DMatrix<Complex64>, v: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
    if h.nrows() == 1 {
        return v * Complex64::from_polar(1.0, -h[(0, 0)].re * t);
    }
    let eig = SymmetricEigen::new(h);
    let basis = &eig.eigenvectors;
    let mut coeffs = basis.adjoint() * v;
    for (c, e) in coeffs.iter_mut().zip(eig.eigenvalues.iter()) {
        *c *= Complex64::from_polar(1.0, -e * t);
    }
    basis * coeffs
}

/// Index sets of the connected components of the nonzero pattern of `m`.
fn connected_blocks(m: &DMatrix<Complex64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if m[(i, j)] != C0 || m[(j, i)] != C0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = blocks.len();
            blocks.push(Vec::new());
        }
        blocks[slot[r]].push(i);
    }
    blocks
}

/// Expectation of `N = sum_modes n + sum_{u in upper levels} |u><u|`, where
/// the upper levels are those appearing as `upper` in any coupling.
///
/// `N` commutes with every coupling Hamiltonian. Drives do not conserve it.
pub fn excitation_number(spec: &SystemSpec, state: &StateVector) -> f64 {
    let layout = spec.layout();
    let upper: Vec<usize> = spec
        .couplings()
        .iter()
        .filter_map(|c| spec.level_index(&c.upper))
        .collect();
    state
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let (level, occ) = layout.decompose(i);
            let n = occ.iter().sum::<usize>() + usize::from(upper.contains(&level));
            n as f64 * z.norm_sqr()
        })
        .sum()
}

/// Closed-form amplitudes of the four single-excitation states reached from
/// `(|a,0,0> + e^{i phi} |b,0,0>)/sqrt 2` with both couplings on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoModeAmplitudes {
    pub c_a00: Complex64,
    pub c_c10: Complex64,
    pub c_b00: Complex64,
    pub c_c01: Complex64,
}

impl TwoModeAmplitudes {
    pub fn norm_sqr(&self) -> f64 {
        self.c_a00.norm_sqr() + self.c_c10.norm_sqr() + self.c_b00.norm_sqr() + self.c_c01.norm_sqr()
    }
}

pub fn analytic_two_mode_amplitudes(g1: f64, g2: f64, phi: f64, t: f64) -> TwoModeAmplitudes {
    let s = FRAC_1_SQRT_2;
    let mi = Complex64::new(0.0, -1.0);
    let ph = Complex64::from_polar(1.0, phi);
    TwoModeAmplitudes {
        c_a00: Complex64::new(s * (g1 * t).cos(), 0.0),
        c_c10: mi * s * (g1 * t).sin(),
        c_b00: ph * s * (g2 * t).cos(),
        c_c01: mi * ph * s * (g2 * t).sin(),
    }
}

/// Probability of finding the atom in `|c>`: `(sin^2 g1 t + sin^2 g2 t)/2`.
pub fn analytic_pc(g1: f64, g2: f64, t: f64) -> f64 {
    0.5 * ((g1 * t).sin().powi(2) + (g2 * t).sin().powi(2))
}
