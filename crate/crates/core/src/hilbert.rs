//! Composite Hilbert space of one multilevel atom tensored with a set of
//! photon-truncated cavity modes.
//!
//! Basis order is level-major, then mode occupations in lexicographic order
//! with the first declared mode most significant. For levels `a, b, c` and
//! modes `A, B` with `nmax = 1` the order is
//! `|a,0,0>, |a,0,1>, |a,1,0>, |a,1,1>, |b,0,0>, ...`.
//! Serialized amplitudes rely on this order being stable.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

/// Tolerance on `| ||psi|| - 1 |` for constructed states.
pub const NORM_TOL: f64 = 1e-9;
/// Per-entry Hermiticity tolerance for density matrices and Hamiltonians.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Lowest eigenvalue accepted for a density matrix.
pub const PSD_TOL: f64 = 1e-10;

const C0: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HilbertError {
    #[error("level name must be nonempty")]
    EmptyLevelName,
    #[error("mode id must be nonempty")]
    EmptyModeId,
    #[error("atom needs at least one level")]
    NoLevels,
    #[error("duplicate level `{0}`")]
    DuplicateLevel(String),
    #[error("duplicate mode `{0}`")]
    DuplicateMode(String),
    #[error("mode `{0}` must have nmax >= 1")]
    ZeroCutoff(String),
    #[error("unknown level `{0}`")]
    UnknownLevel(String),
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error("coupling on mode `{mode}` connects level `{level}` to itself")]
    SelfCoupling { mode: String, level: String },
    #[error("coupling rate must be finite and non-negative, got {0}")]
    InvalidRate(f64),
    #[error("duplicate coupling ({mode}, {upper}, {lower})")]
    DuplicateCoupling {
        mode: String,
        upper: String,
        lower: String,
    },
    #[error("basis state {0} is not part of this space")]
    InvalidBasisState(String),
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("states live in different spaces")]
    BasisMismatch,
    #[error("amplitude vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("subsystem selection is empty")]
    EmptySelection,
    #[error("subsystem selection keeps everything; no proper bipartition")]
    FullSelection,
    #[error("space has no atom to select")]
    NoAtom,
    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),
}

pub type Result<T> = std::result::Result<T, HilbertError>;

/// Symbolic name of an atomic level, e.g. `a`, `c` or `b1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelId(String);

impl LevelId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(HilbertError::EmptyLevelName);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LevelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ordered list of atomic levels; the order fixes each level's basis index.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSpec {
    levels: Vec<LevelId>,
}

impl AtomSpec {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut levels = Vec::new();
        let mut seen = HashSet::new();
        for name in names {
            let id = LevelId::new(name)?;
            if !seen.insert(id.clone()) {
                return Err(HilbertError::DuplicateLevel(id.0));
            }
            levels.push(id);
        }
        if levels.is_empty() {
            return Err(HilbertError::NoLevels);
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[LevelId] {
        &self.levels
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn index_of(&self, level: &LevelId) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }

    pub fn index_of_str(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.as_str() == level)
    }
}

/// A cavity mode truncated at `n_max` photons.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpec {
    pub id: String,
    pub n_max: usize,
}

impl ModeSpec {
    pub fn new(id: impl Into<String>, n_max: usize) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(HilbertError::EmptyModeId);
        }
        if n_max < 1 {
            return Err(HilbertError::ZeroCutoff(id));
        }
        Ok(Self { id, n_max })
    }

    pub fn dim(&self) -> usize {
        self.n_max + 1
    }
}

/// Jaynes-Cummings coupling of one mode to the `upper <-> lower` transition
/// with vacuum Rabi frequency `g` (rad per unit time, hbar = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub mode: String,
    pub upper: LevelId,
    pub lower: LevelId,
    pub g: f64,
}

impl Coupling {
    pub fn new(mode: &str, upper: &str, lower: &str, g: f64) -> Result<Self> {
        Ok(Self {
            mode: mode.to_string(),
            upper: LevelId::new(upper)?,
            lower: LevelId::new(lower)?,
            g,
        })
    }
}

/// Index of a coupling inside [`SystemSpec::couplings`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CouplingId(pub usize);

/// Tensor-product layout of a space. `atom == None` denotes a field-only
/// space, used once the atom has been projected out.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    atom: Option<AtomSpec>,
    modes: Vec<ModeSpec>,
    field_dim: usize,
}

impl Layout {
    pub fn new(atom: Option<AtomSpec>, modes: Vec<ModeSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for m in &modes {
            if !seen.insert(m.id.as_str()) {
                return Err(HilbertError::DuplicateMode(m.id.clone()));
            }
            if m.n_max < 1 {
                return Err(HilbertError::ZeroCutoff(m.id.clone()));
            }
        }
        let field_dim = modes.iter().map(ModeSpec::dim).product();
        Ok(Self {
            atom,
            modes,
            field_dim,
        })
    }

    /// Field-only layout over the given modes.
    pub fn field(modes: Vec<ModeSpec>) -> Result<Self> {
        Self::new(None, modes)
    }

    pub fn atom(&self) -> Option<&AtomSpec> {
        self.atom.as_ref()
    }

    pub fn modes(&self) -> &[ModeSpec] {
        &self.modes
    }

    pub fn mode_index(&self, id: &str) -> Option<usize> {
        self.modes.iter().position(|m| m.id == id)
    }

    pub fn atom_dim(&self) -> usize {
        self.atom.as_ref().map_or(1, AtomSpec::dim)
    }

    pub fn field_dim(&self) -> usize {
        self.field_dim
    }

    pub fn dim(&self) -> usize {
        self.atom_dim() * self.field_dim
    }

    /// The same modes without the atom.
    pub fn field_layout(&self) -> Layout {
        Layout {
            atom: None,
            modes: self.modes.clone(),
            field_dim: self.field_dim,
        }
    }

    /// Splits a basis index into atomic level index and mode occupations.
    pub fn decompose(&self, index: usize) -> (usize, Vec<usize>) {
        let level = index / self.field_dim;
        let mut rest = index % self.field_dim;
        let mut occ = vec![0; self.modes.len()];
        for (k, m) in self.modes.iter().enumerate().rev() {
            occ[k] = rest % m.dim();
            rest /= m.dim();
        }
        (level, occ)
    }

    /// Inverse of [`Layout::decompose`]; `None` when out of range.
    pub fn compose(&self, level: usize, occupations: &[usize]) -> Option<usize> {
        if level >= self.atom_dim() || occupations.len() != self.modes.len() {
            return None;
        }
        let mut field = 0;
        for (n, m) in occupations.iter().zip(&self.modes) {
            if *n > m.n_max {
                return None;
            }
            field = field * m.dim() + n;
        }
        Some(level * self.field_dim + field)
    }

    pub fn index_of(&self, state: &BasisState) -> Option<usize> {
        let level = match (&self.atom, &state.level) {
            (Some(atom), Some(l)) => atom.index_of(l)?,
            (None, None) => 0,
            _ => return None,
        };
        self.compose(level, &state.photons)
    }

    pub fn basis_state(&self, index: usize) -> BasisState {
        let (level, photons) = self.decompose(index);
        BasisState {
            level: self.atom.as_ref().map(|a| a.levels[level].clone()),
            photons,
        }
    }

    /// Total photon number of basis state `index`.
    pub fn photon_count(&self, index: usize) -> usize {
        self.decompose(index).1.iter().sum()
    }

    pub fn label(&self, index: usize) -> String {
        self.basis_state(index).to_string()
    }

    /// Local dimensions of the tensor factors: atom first (if any), then modes.
    pub fn factor_dims(&self) -> Vec<usize> {
        self.atom
            .iter()
            .map(AtomSpec::dim)
            .chain(self.modes.iter().map(ModeSpec::dim))
            .collect()
    }
}

/// One element of the product basis: atomic level (absent in field-only
/// spaces) plus photon occupation of every mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasisState {
    pub level: Option<LevelId>,
    pub photons: Vec<usize>,
}

impl BasisState {
    pub fn new(level: &str, photons: &[usize]) -> Self {
        Self {
            level: Some(LevelId(level.to_string())),
            photons: photons.to_vec(),
        }
    }

    pub fn field(photons: &[usize]) -> Self {
        Self {
            level: None,
            photons: photons.to_vec(),
        }
    }
}

impl fmt::Display for BasisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("|")?;
        let mut first = true;
        if let Some(l) = &self.level {
            f.write_str(l.as_str())?;
            first = false;
        }
        for n in &self.photons {
            if !first {
                f.write_str(",")?;
            }
            write!(f, "{n}")?;
            first = false;
        }
        f.write_str(">")
    }
}

/// Atom, modes and couplings of one simulated setup.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    layout: Arc<Layout>,
    couplings: Vec<Coupling>,
}

impl SystemSpec {
    pub fn new(atom: AtomSpec, modes: Vec<ModeSpec>, couplings: Vec<Coupling>) -> Result<Self> {
        let layout = Layout::new(Some(atom.clone()), modes)?;
        let mut seen = HashSet::new();
        for c in &couplings {
            if layout.mode_index(&c.mode).is_none() {
                return Err(HilbertError::UnknownMode(c.mode.clone()));
            }
            for l in [&c.upper, &c.lower] {
                if atom.index_of(l).is_none() {
                    return Err(HilbertError::UnknownLevel(l.0.clone()));
                }
            }
            if c.upper == c.lower {
                return Err(HilbertError::SelfCoupling {
                    mode: c.mode.clone(),
                    level: c.upper.0.clone(),
                });
            }
            if !(c.g.is_finite() && c.g >= 0.0) {
                return Err(HilbertError::InvalidRate(c.g));
            }
            if !seen.insert((c.mode.as_str(), &c.upper, &c.lower)) {
                return Err(HilbertError::DuplicateCoupling {
                    mode: c.mode.clone(),
                    upper: c.upper.0.clone(),
                    lower: c.lower.0.clone(),
                });
            }
        }
        Ok(Self {
            layout: Arc::new(layout),
            couplings,
        })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn atom(&self) -> &AtomSpec {
        self.layout.atom().expect("system layout always has an atom")
    }

    pub fn modes(&self) -> &[ModeSpec] {
        self.layout.modes()
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn coupling(&self, id: CouplingId) -> Option<&Coupling> {
        self.couplings.get(id.0)
    }

    /// Ids of every coupling acting on mode `mode`.
    pub fn couplings_on_mode(&self, mode: &str) -> Vec<CouplingId> {
        self.couplings
            .iter()
            .enumerate()
            .filter(|(_, c)| c.mode == mode)
            .map(|(i, _)| CouplingId(i))
            .collect()
    }

    pub fn level_index(&self, level: &LevelId) -> Option<usize> {
        self.atom().index_of(level)
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// `|level, 0, ..., 0>`.
    pub fn vacuum_state(&self, level: &LevelId) -> Result<StateVector> {
        let l = self
            .level_index(level)
            .ok_or_else(|| HilbertError::UnknownLevel(level.0.clone()))?;
        let occ = vec![0; self.modes().len()];
        let idx = self.layout.compose(l, &occ).expect("vacuum is in range");
        Ok(StateVector::basis(self.layout.clone(), idx))
    }

    /// Returns a copy with coupling `id` set to rate `g`.
    pub fn with_coupling_rate(&self, id: CouplingId, g: f64) -> Result<Self> {
        let mut couplings = self.couplings.clone();
        let c = couplings
            .get_mut(id.0)
            .ok_or_else(|| HilbertError::UnknownMode(format!("coupling #{}", id.0)))?;
        c.g = g;
        Self::new(self.atom().clone(), self.modes().to_vec(), couplings)
    }
}

/// Enumerates the full product basis of `spec` in documented order.
pub fn build_basis(spec: &SystemSpec) -> Vec<BasisState> {
    let layout = spec.layout();
    (0..layout.dim()).map(|i| layout.basis_state(i)).collect()
}

/// Normalized pure state over a [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    layout: Arc<Layout>,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// Normalizes `amps`; fails on zero norm or wrong length.
    pub fn from_amplitudes(layout: Arc<Layout>, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != layout.dim() {
            return Err(HilbertError::DimensionMismatch {
                expected: layout.dim(),
                got: amps.len(),
            });
        }
        let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(HilbertError::ZeroNorm);
        }
        let amps = amps.into_iter().map(|z| z / norm).collect();
        Ok(Self { layout, amps })
    }

    /// Trusts the caller that `amps` is already normalized (e.g. the output of
    /// a unitary).
    pub(crate) fn from_normalized(layout: Arc<Layout>, amps: Vec<Complex64>) -> Self {
        debug_assert_eq!(amps.len(), layout.dim());
        Self { layout, amps }
    }

    pub fn basis(layout: Arc<Layout>, index: usize) -> Self {
        let mut amps = vec![C0; layout.dim()];
        amps[index] = Complex64::new(1.0, 0.0);
        Self { layout, amps }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitude(&self, state: &BasisState) -> Option<Complex64> {
        self.layout.index_of(state).map(|i| self.amps[i])
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|z| z.norm_sqr()).collect()
    }

    /// Population of atomic level index `level`, summed over field states.
    pub fn level_population(&self, level: usize) -> f64 {
        let f = self.layout.field_dim();
        self.amps[level * f..(level + 1) * f]
            .iter()
            .map(|z| z.norm_sqr())
            .sum()
    }

    /// Probability weight on basis states where some mode holds 2 or more
    /// photons.
    pub fn multi_photon_weight(&self) -> f64 {
        (0..self.dim())
            .filter(|&i| self.layout.decompose(i).1.iter().any(|&n| n > 1))
            .map(|i| self.amps[i].norm_sqr())
            .sum()
    }

    /// Multiplies every amplitude by `e^{i alpha}`.
    pub fn with_global_phase(&self, alpha: f64) -> Self {
        let p = Complex64::from_polar(1.0, alpha);
        Self {
            layout: self.layout.clone(),
            amps: self.amps.iter().map(|z| z * p).collect(),
        }
    }

    /// Splits the state as `|atom> (x) |field>` when it is a product state.
    ///
    /// The atomic factor is normalized and phased so its first
    /// largest-magnitude component is real positive; the field factor is
    /// `<atom|psi>`. Returns `None` for entangled atom-field states or when the
    /// space has no atom.
    pub fn factor_atom(&self) -> Option<(Vec<Complex64>, StateVector)> {
        self.layout.atom()?;
        let l = self.layout.atom_dim();
        let f = self.layout.field_dim();
        let row = |lv: usize| &self.amps[lv * f..(lv + 1) * f];
        // Column with the largest weight is proportional to the atomic factor.
        let col = (0..f)
            .map(|j| (j, (0..l).map(|lv| row(lv)[j].norm_sqr()).sum::<f64>()))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        let mut chi: Vec<Complex64> = (0..l).map(|lv| row(lv)[col]).collect();
        let n = chi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n == 0.0 {
            return None;
        }
        chi.iter_mut().for_each(|z| *z /= n);
        let max = chi.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let pivot = chi.iter().position(|z| z.norm() >= max - 1e-12).unwrap();
        let phase = chi[pivot].conj() / chi[pivot].norm();
        chi.iter_mut().for_each(|z| *z *= phase);

        let mut field = vec![C0; f];
        for (lv, c) in chi.iter().enumerate() {
            for (j, z) in row(lv).iter().enumerate() {
                field[j] += c.conj() * z;
            }
        }
        let residual: f64 = (0..l)
            .flat_map(|lv| (0..f).map(move |j| (lv, j)))
            .map(|(lv, j)| (row(lv)[j] - chi[lv] * field[j]).norm_sqr())
            .sum();
        if residual.sqrt() > 1e-9 {
            return None;
        }
        let field = StateVector::from_amplitudes(Arc::new(self.layout.field_layout()), field).ok()?;
        Some((chi, field))
    }

    /// Conditional field state `<chi|psi>` for atomic state `chi`, renormalized,
    /// with its probability `|| <chi|psi> ||^2`.
    pub fn project_atom(&self, chi: &[Complex64]) -> Result<(StateVector, f64)> {
        if self.layout.atom().is_none() {
            return Err(HilbertError::NoAtom);
        }
        if chi.len() != self.layout.atom_dim() {
            return Err(HilbertError::DimensionMismatch {
                expected: self.layout.atom_dim(),
                got: chi.len(),
            });
        }
        let f = self.layout.field_dim();
        let mut field = vec![C0; f];
        for (lv, c) in chi.iter().enumerate() {
            for (slot, amp) in field.iter_mut().zip(&self.amps[lv * f..(lv + 1) * f]) {
                *slot += c.conj() * amp;
            }
        }
        let p = field.iter().map(|z| z.norm_sqr()).sum();
        let state = StateVector::from_amplitudes(Arc::new(self.layout.field_layout()), field)?;
        Ok((state, p))
    }
}

/// Builds a normalized state from `(basis state, amplitude)` pairs; duplicate
/// entries are summed.
pub fn state_from_components(
    layout: &Arc<Layout>,
    components: &[(BasisState, Complex64)],
) -> Result<StateVector> {
    let mut amps = vec![C0; layout.dim()];
    for (b, z) in components {
        let idx = layout
            .index_of(b)
            .ok_or_else(|| HilbertError::InvalidBasisState(b.to_string()))?;
        amps[idx] += z;
    }
    StateVector::from_amplitudes(layout.clone(), amps)
}

/// `<x|y>`, conjugate-linear in `x`.
pub fn inner_product(x: &StateVector, y: &StateVector) -> Result<Complex64> {
    if !Arc::ptr_eq(&x.layout, &y.layout) && x.layout != y.layout {
        return Err(HilbertError::BasisMismatch);
    }
    Ok(x.amps
        .iter()
        .zip(&y.amps)
        .map(|(a, b)| a.conj() * b)
        .sum())
}

/// Subsystems kept by a partial trace.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Subsystems {
    pub atom: bool,
    /// Mode indices into the layout.
    pub modes: Vec<usize>,
}

impl Subsystems {
    pub fn atom() -> Self {
        Self {
            atom: true,
            modes: Vec::new(),
        }
    }

    pub fn modes(modes: impl IntoIterator<Item = usize>) -> Self {
        Self {
            atom: false,
            modes: modes.into_iter().collect(),
        }
    }

    pub fn mode_ids(layout: &Layout, ids: &[&str]) -> Result<Self> {
        let modes = ids
            .iter()
            .map(|id| {
                layout
                    .mode_index(id)
                    .ok_or_else(|| HilbertError::UnknownMode(id.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { atom: false, modes })
    }
}

/// Density matrix over a product of local factors with dimensions `dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dims: Vec<usize>,
    matrix: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(dims: Vec<usize>, matrix: DMatrix<Complex64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(HilbertError::InvalidDensity(format!(
                "{}x{} matrix for factor dims {:?}",
                matrix.nrows(),
                matrix.ncols(),
                dims
            )));
        }
        let herm = hermiticity_defect(&matrix);
        if herm > HERMITIAN_TOL {
            return Err(HilbertError::InvalidDensity(format!(
                "not Hermitian (defect {herm:e})"
            )));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > NORM_TOL || tr.im.abs() > NORM_TOL {
            return Err(HilbertError::InvalidDensity(format!("trace {tr}")));
        }
        let rho = Self { dims, matrix };
        let min = rho.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min < -PSD_TOL {
            return Err(HilbertError::InvalidDensity(format!(
                "negative eigenvalue {min:e}"
            )));
        }
        Ok(rho)
    }

    /// `|psi><psi|` over a single factor.
    pub fn pure(amps: &[Complex64]) -> Result<Self> {
        let v = nalgebra::DVector::from_column_slice(amps);
        let n = v.norm();
        if n == 0.0 {
            return Err(HilbertError::ZeroNorm);
        }
        let v = v / Complex64::new(n, 0.0);
        let m = &v * v.adjoint();
        Ok(Self {
            dims: vec![amps.len()],
            matrix: m,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Restricts each factor to its lowest `keep` levels (e.g. photon numbers
    /// {0, 1}) and renormalizes. Fails if more than `tol` of the weight lies
    /// outside.
    pub fn restrict(&self, keep: usize, tol: f64) -> Result<Self> {
        if self.dims.iter().any(|&d| d < keep) {
            return Err(HilbertError::InvalidDensity(format!(
                "cannot keep {keep} levels of factors {:?}",
                self.dims
            )));
        }
        let idx: Vec<usize> = (0..self.dim())
            .filter(|&i| digits(i, &self.dims).iter().all(|&d| d < keep))
            .collect();
        let m = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.matrix[(idx[r], idx[c])]);
        let tr = m.trace().re;
        if (1.0 - tr).abs() > tol {
            return Err(HilbertError::InvalidDensity(format!(
                "weight {:e} outside the kept sector",
                1.0 - tr
            )));
        }
        Ok(Self {
            dims: vec![keep; self.dims.len()],
            matrix: m / Complex64::new(tr, 0.0),
        })
    }
}

pub(crate) fn hermiticity_defect(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn digits(mut index: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (k, d) in dims.iter().enumerate().rev() {
        out[k] = index % d;
        index /= d;
    }
    out
}

/// Reduced density matrix of `state` over the `keep` subsystems.
///
/// Factors are ordered atom first, then modes in layout order, regardless of
/// the order given in `keep`.
pub fn partial_trace(state: &StateVector, keep: &Subsystems) -> Result<DensityMatrix> {
    let layout = state.layout();
    if keep.atom && layout.atom().is_none() {
        return Err(HilbertError::NoAtom);
    }
    let offset = usize::from(layout.atom().is_some());
    let mut kept = vec![false; offset + layout.modes().len()];
    if keep.atom {
        kept[0] = true;
    }
    for &m in &keep.modes {
        let slot = kept
            .get_mut(offset + m)
            .ok_or_else(|| HilbertError::UnknownMode(format!("#{m}")))?;
        *slot = true;
    }
    if !kept.iter().any(|&k| k) {
        return Err(HilbertError::EmptySelection);
    }
    let dims = layout.factor_dims();
    let kept_dims: Vec<usize> = dims.iter().zip(&kept).filter(|(_, k)| **k).map(|(d, _)| *d).collect();
    let kdim: usize = kept_dims.iter().product();
    let tdim = state.dim() / kdim;

    let mut m = DMatrix::from_element(kdim, tdim, C0);
    for (i, z) in state.amplitudes().iter().enumerate() {
        let (mut ki, mut ti) = (0, 0);
        for ((d, digit), k) in dims.iter().zip(digits(i, &dims)).zip(&kept) {
            if *k {
                ki = ki * d + digit;
            } else {
                ti = ti * d + digit;
            }
        }
        m[(ki, ti)] = *z;
    }
    let rho = &m * m.adjoint();
    Ok(DensityMatrix {
        dims: kept_dims,
        matrix: rho,
    })
}

/// As [`partial_trace`], but rejects selections that keep every subsystem.
pub fn partial_trace_bipartite(state: &StateVector, keep: &Subsystems) -> Result<DensityMatrix> {
    let layout = state.layout();
    let total = usize::from(layout.atom().is_some()) + layout.modes().len();
    let mut modes = keep.modes.clone();
    modes.sort_unstable();
    modes.dedup();
    if usize::from(keep.atom) + modes.len() >= total {
        return Err(HilbertError::FullSelection);
    }
    partial_trace(state, keep)
}
