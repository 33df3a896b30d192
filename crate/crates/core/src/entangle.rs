//! Target Bell/GHZ states and entanglement figures of merit.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

use crate::hilbert::{
    partial_trace, partial_trace_bipartite, DensityMatrix, HilbertError, Layout, ModeSpec, StateVector, Subsystems, NORM_TOL,
};

/// Eigenvalues below this are treated as exact zeros in the entropy sum.
pub const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EntangleError {
    #[error("variant {0} takes no phase, got phi = {1}")]
    PhaseNotAllowed(BellVariant, f64),
    #[error("GHZ state needs at least 2 modes, got {0}")]
    TooFewModes(usize),
    #[error("state still contains the atom; project it out first")]
    AtomNotProjected,
    #[error("target over {target} modes cannot be compared with a state over {state} modes")]
    ModeCountMismatch { target: usize, state: usize },
    #[error("target occupation exceeds the state's photon truncation")]
    TruncationTooSmall,
    #[error("density matrix trace is {0}, expected 1")]
    BadTrace(f64),
    #[error("concurrence needs a 4x4 two-qubit density matrix, got factor dims {0:?}")]
    NotTwoQubit(Vec<usize>),
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

pub type Result<T> = std::result::Result<T, EntangleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sign::Plus => "plus",
            Sign::Minus => "minus",
        }
    }
}

/// Standard Bell labels for the two-mode targets.
///
/// `PsiPlus(phi)`  = (|0,1> + e^{i phi}|1,0>)/sqrt 2,
/// `PsiMinus(phi)` = (|0,1> - e^{i phi}|1,0>)/sqrt 2,
/// `PhiPlus`       = (|0,0> + |1,1>)/sqrt 2,
/// `PhiMinus`      = (|0,0> - |1,1>)/sqrt 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BellVariant {
    PsiPlus,
    PsiMinus,
    PhiPlus,
    PhiMinus,
}

impl BellVariant {
    pub const ALL: [BellVariant; 4] = [Self::PsiPlus, Self::PsiMinus, Self::PhiPlus, Self::PhiMinus];

    pub fn name(self) -> &'static str {
        match self {
            Self::PsiPlus => "psi_plus",
            Self::PsiMinus => "psi_minus",
            Self::PhiPlus => "phi_plus",
            Self::PhiMinus => "phi_minus",
        }
    }

    pub fn takes_phase(self) -> bool {
        matches!(self, Self::PsiPlus | Self::PsiMinus)
    }
}

impl fmt::Display for BellVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A named field-only reference state with photon numbers in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub name: String,
    pub vector: StateVector,
}

fn qubit_modes(n: usize) -> Arc<Layout> {
    let modes = (0..n).map(|k| ModeSpec::new(mode_name(k), 1).expect("valid mode")).collect();
    Arc::new(Layout::field(modes).expect("distinct names"))
}

/// Mode naming used by the built-in ladders: `A`, `B`, `B1`, `B2`, ...
pub fn mode_name(k: usize) -> String {
    match k {
        0 => "A".to_string(),
        1 => "B".to_string(),
        _ => format!("B{}", k - 1),
    }
}

pub fn bell_state(variant: BellVariant, phi: f64) -> Result<TargetState> {
    if !variant.takes_phase() && phi != 0.0 {
        return Err(EntangleError::PhaseNotAllowed(variant, phi));
    }
    let layout = qubit_modes(2);
    let mut amps = vec![Complex64::new(0.0, 0.0); 4];
    let one = Complex64::new(1.0, 0.0);
    // index = 2 * n_A + n_B
    match variant {
        BellVariant::PsiPlus | BellVariant::PsiMinus => {
            let s = if variant == BellVariant::PsiPlus { 1.0 } else { -1.0 };
            amps[1] = one;
            amps[2] = Complex64::from_polar(s, phi);
        }
        BellVariant::PhiPlus | BellVariant::PhiMinus => {
            let s = if variant == BellVariant::PhiPlus { 1.0 } else { -1.0 };
            amps[0] = one;
            amps[3] = Complex64::new(s, 0.0);
        }
    }
    let name = if variant.takes_phase() && phi != 0.0 {
        format!("{}:{phi}", variant.name())
    } else {
        variant.name().to_string()
    };
    Ok(TargetState {
        name,
        vector: StateVector::from_amplitudes(layout, amps)?,
    })
}

/// `(|0...0> +- |1...1>)/sqrt 2` over `n_modes` modes.
pub fn ghz_state(n_modes: usize, sign: Sign) -> Result<TargetState> {
    if n_modes < 2 {
        return Err(EntangleError::TooFewModes(n_modes));
    }
    let layout = qubit_modes(n_modes);
    let mut amps = vec![Complex64::new(0.0, 0.0); layout.dim()];
    amps[0] = Complex64::new(1.0, 0.0);
    amps[layout.dim() - 1] = Complex64::new(sign.factor(), 0.0);
    Ok(TargetState {
        name: format!("ghz{n_modes}_{}", sign.as_str()),
        vector: StateVector::from_amplitudes(layout, amps)?,
    })
}

impl FromStr for TargetState {
    type Err = EntangleError;

    /// Accepts `psi_plus`, `psi_minus[:phi]`, `phi_plus`, `phi_minus` and
    /// `ghz<N>_plus` / `ghz<N>_minus`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || EntangleError::UnknownTarget(s.to_string());
        let (name, phi) = match s.split_once(':') {
            Some((n, p)) => (n, p.trim().parse::<f64>().map_err(|_| unknown())?),
            None => (s, 0.0),
        };
        if let Some(v) = BellVariant::ALL.iter().find(|v| v.name() == name) {
            return bell_state(*v, phi);
        }
        if phi != 0.0 {
            return Err(unknown());
        }
        let rest = name.strip_prefix("ghz").ok_or_else(unknown)?;
        let (n, sign) = rest.split_once('_').ok_or_else(unknown)?;
        let n: usize = n.parse().map_err(|_| unknown())?;
        let sign = match sign {
            "plus" => Sign::Plus,
            "minus" => Sign::Minus,
            _ => return Err(unknown()),
        };
        ghz_state(n, sign)
    }
}

impl TargetState {
    /// Embeds the target into the photon truncation of `layout`, matching
    /// modes by position.
    pub fn embed(&self, layout: &Arc<Layout>) -> Result<StateVector> {
        if layout.atom().is_some() {
            return Err(EntangleError::AtomNotProjected);
        }
        let own = self.vector.layout();
        if own.modes().len() != layout.modes().len() {
            return Err(EntangleError::ModeCountMismatch {
                target: own.modes().len(),
                state: layout.modes().len(),
            });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); layout.dim()];
        for (i, z) in self.vector.amplitudes().iter().enumerate() {
            if *z == Complex64::new(0.0, 0.0) {
                continue;
            }
            let (_, occ) = own.decompose(i);
            let j = layout.compose(0, &occ).ok_or(EntangleError::TruncationTooSmall)?;
            amps[j] = *z;
        }
        Ok(StateVector::from_amplitudes(layout.clone(), amps)?)
    }
}

/// `|<target|state>|^2` for a field-only state.
pub fn fidelity(state: &StateVector, target: &TargetState) -> Result<f64> {
    let embedded = target.embed(state.layout())?;
    let overlap: Complex64 = embedded
        .amplitudes()
        .iter()
        .zip(state.amplitudes())
        .map(|(t, s)| t.conj() * s)
        .sum();
    Ok(overlap.norm_sqr().min(1.0))
}

/// `<target|rho|target>` for the field's reduced state, tracing out the atom
/// when present. Equals [`fidelity`] on product states and stays defined
/// when atom and field are entangled.
pub fn field_fidelity(state: &StateVector, target: &TargetState) -> Result<f64> {
    if state.layout().atom().is_none() {
        return fidelity(state, target);
    }
    let field = Arc::new(state.layout().field_layout());
    let t = target.embed(&field)?;
    let rho = partial_trace(state, &Subsystems::modes(0..field.modes().len()))?;
    let m = rho.matrix();
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, ti) in t.amplitudes().iter().enumerate() {
        for (j, tj) in t.amplitudes().iter().enumerate() {
            acc += ti.conj() * m[(i, j)] * tj;
        }
    }
    Ok(acc.re.clamp(0.0, 1.0))
}

/// Von Neumann entropy in bits.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > NORM_TOL || tr.im.abs() > NORM_TOL {
        return Err(EntangleError::BadTrace(tr.re));
    }
    Ok(rho
        .eigenvalues()
        .into_iter()
        .filter(|&l| l > EIGEN_FLOOR)
        .map(|l| -l * l.log2())
        .sum::<f64>()
        .max(0.0))
}

/// Entropy of the reduced state on `keep` (a proper subset of subsystems).
pub fn entanglement_entropy(state: &StateVector, keep: &Subsystems) -> Result<f64> {
    let rho = partial_trace_bipartite(state, keep)?;
    von_neumann_entropy(&rho)
}

/// `h(p) = -p log2 p - (1-p) log2 (1-p)`.
pub fn binary_entropy(p: f64) -> f64 {
    [p, 1.0 - p]
        .into_iter()
        .filter(|&x| x > 0.0)
        .map(|x| -x * x.log2())
        .sum()
}

/// Wootters concurrence of a two-qubit density matrix.
///
/// Uses the Hermitian form `sqrt(rho) rho~ sqrt(rho)`, whose eigenvalues are
/// the squares of the `lambda_i` in `max(0, l1 - l2 - l3 - l4)`.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    if rho.dim() != 4 || rho.dims().len() > 2 {
        return Err(EntangleError::NotTwoQubit(rho.dims().to_vec()));
    }
    // With rho = W W^dagger, the spin-flip spectrum is the singular values of
    // W^T (sigma_y x sigma_y) W. Working from W avoids matrix square roots,
    // which would turn eigenvalue noise of size e into errors of size sqrt(e).
    let eig = SymmetricEigen::new(rho.matrix().clone());
    let weights = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
    let w = &eig.eigenvectors * DMatrix::from_diagonal(&weights);

    // sigma_y (x) sigma_y in the |00>,|01>,|10>,|11> basis.
    let mut yy = DMatrix::from_element(4, 4, Complex64::new(0.0, 0.0));
    for (i, s) in [(0, -1.0), (1, 1.0), (2, 1.0), (3, -1.0)] {
        yy[(i, 3 - i)] = Complex64::new(s, 0.0);
    }
    let tau = w.transpose() * yy * w;
    let mut lambdas: Vec<f64> = tau.singular_values().iter().copied().collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    Ok((lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).clamp(0.0, 1.0))
}
