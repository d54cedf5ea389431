//! Python bindings for the gradint engine.
//!
//! The module mirrors the library's pipeline: critical exponents for a
//! coefficient pair, θ-dependent staircase data, the iterated laminate's
//! level masses, and the realized piecewise-affine map with its audit.
//!
//! ```python
//! import gradint_py as g
//! g.exponents(2.0, 2.0, 2.0).p          # 4.0
//! pair = g.Pair(2.0, 1.0, 2.0)
//! pair.theta_functions(1.5707963267948966).p   # 7/6
//! m = pair.realize(depth=6)
//! m.audit().passes                       # True
//! ```

use pyo3::exceptions::{PyNotImplementedError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gradint::analysis::{
    distribution_curve, log_log_slope, lp_integral_truncated, threshold_grid, weak_residual,
};
use gradint::cli::{cmd_exponents, RunConfig};
use gradint::coefficients::DiagonalPairParams;
use gradint::conformal::ConformalMatrix;
use gradint::realize::{audit_map, build_staircase_map, RealizeConfig, StaircaseMap};
use gradint::staircase::{beta_residual_max, iterate, m_const, step, theta_functions};
use gradint::targets::TargetSpec;

fn to_py(e: gradint::Error) -> PyErr {
    let msg = e.to_string();
    match e {
        gradint::Error::InvalidInput(_) | gradint::Error::Io(_) => PyValueError::new_err(msg),
        gradint::Error::Unsupported(_) => PyNotImplementedError::new_err(msg),
        gradint::Error::Invariant(_) | gradint::Error::BudgetExhausted(_) => {
            PyRuntimeError::new_err(msg)
        }
    }
}

/// Critical-exponent report for a coefficient pair.
#[pyclass(frozen)]
pub struct Exponents {
    /// "two-phase-normal-form", "two-phase-general" or "single-phase".
    #[pyo3(get)]
    pub case: String,
    #[pyo3(get)]
    pub invariant_m: f64,
    #[pyo3(get)]
    pub invariant_n: f64,
    /// Critical distortion K* of the pair.
    #[pyo3(get)]
    pub k_star: f64,
    /// Lower critical exponent q = 2K*/(K*+1).
    #[pyo3(get)]
    pub q: f64,
    /// Upper critical exponent p = 2K*/(K*−1); None when K* = 1.
    #[pyo3(get)]
    pub p: Option<f64>,
    #[pyo3(get)]
    pub sigma1_distortion: f64,
    #[pyo3(get)]
    pub sigma2_distortion: f64,
    /// Normal-form scalars k, s₁, s₂, s, S when the pair is diagonal.
    #[pyo3(get)]
    pub k: Option<f64>,
    #[pyo3(get)]
    pub s1: Option<f64>,
    #[pyo3(get)]
    pub s2: Option<f64>,
    #[pyo3(get)]
    pub s: Option<f64>,
    #[pyo3(get)]
    pub big_s: Option<f64>,
}

#[pymethods]
impl Exponents {
    fn __repr__(&self) -> String {
        format!(
            "Exponents(case={:?}, k_star={}, q={}, p={:?})",
            self.case, self.k_star, self.q, self.p
        )
    }
}

fn report_to_exponents(cfg: &RunConfig) -> PyResult<Exponents> {
    let r = cmd_exponents(cfg).map_err(to_py)?;
    Ok(Exponents {
        case: r.case,
        invariant_m: r.invariant_m,
        invariant_n: r.invariant_n,
        k_star: r.k_star,
        q: r.q,
        p: r.p,
        sigma1_distortion: r.sigma1_distortion,
        sigma2_distortion: r.sigma2_distortion,
        k: r.k,
        s1: r.s1,
        s2: r.s2,
        s: r.s,
        big_s: r.big_s,
    })
}

/// Critical exponents for the diagonal normal form
/// σ₁ = diag(1/K, 1/S₁), σ₂ = diag(K, S₂).
#[pyfunction]
fn exponents(big_k: f64, big_s1: f64, big_s2: f64) -> PyResult<Exponents> {
    let cfg = RunConfig {
        big_k,
        big_s1,
        big_s2,
        ..RunConfig::default()
    };
    report_to_exponents(&cfg)
}

/// Critical exponents for a general elliptic pair given as 2×2 row-major
/// matrices, e.g. `exponents_for_matrices([[0.5, 0], [0, 0.5]], [[2, 0], [0, 2]])`.
#[pyfunction]
fn exponents_for_matrices(sigma1: [[f64; 2]; 2], sigma2: [[f64; 2]; 2]) -> PyResult<Exponents> {
    let cfg = RunConfig {
        sigma1: Some(sigma1),
        sigma2: Some(sigma2),
        ..RunConfig::default()
    };
    report_to_exponents(&cfg)
}

/// θ-dependent staircase data: connection weights and the distribution
/// exponent p(θ) of the staircase climbing along the ray direction θ.
#[pyclass(frozen)]
pub struct ThetaInfo {
    #[pyo3(get)]
    pub theta: f64,
    #[pyo3(get)]
    pub lambda1: f64,
    #[pyo3(get)]
    pub lambda2: f64,
    #[pyo3(get)]
    pub m1: f64,
    #[pyo3(get)]
    pub m2: f64,
    /// Mean connection scalar l ∈ [s, k].
    #[pyo3(get)]
    pub l: f64,
    /// L = (1+l)/(1−l).
    #[pyo3(get)]
    pub big_l: f64,
    /// Distribution exponent p(θ) = 1 + l ∈ (1, 2).
    #[pyo3(get)]
    pub p: f64,
}

#[pymethods]
impl ThetaInfo {
    fn __repr__(&self) -> String {
        format!("ThetaInfo(theta={}, p={}, l={})", self.theta, self.p, self.l)
    }
}

/// One staircase step at level n: splitting weights and the replacing atoms.
#[pyclass(frozen)]
pub struct StepInfo {
    #[pyo3(get)]
    pub n: u32,
    #[pyo3(get)]
    pub theta: f64,
    #[pyo3(get)]
    pub mu1: f64,
    #[pyo3(get)]
    pub mu2: f64,
    #[pyo3(get)]
    pub mu3: f64,
    /// Mass continuing to level n+1.
    #[pyo3(get)]
    pub mass_up: f64,
    /// Atoms as ((plus_re, plus_im), (minus_re, minus_im), weight) in
    /// conformal coordinates.
    #[pyo3(get)]
    pub atoms: Vec<((f64, f64), (f64, f64), f64)>,
}

#[pymethods]
impl StepInfo {
    fn __repr__(&self) -> String {
        format!(
            "StepInfo(n={}, mu=({}, {}, {}), mass_up={}, atoms={})",
            self.n,
            self.mu1,
            self.mu2,
            self.mu3,
            self.mass_up,
            self.atoms.len()
        )
    }
}

/// Re-measured invariants of a realized map.
#[pyclass(frozen)]
pub struct Audit {
    /// True when no invariant is violated (at the γ the audit ran with).
    #[pyo3(get)]
    pub passes: bool,
    /// Human-readable list of violated invariants, empty when sound.
    #[pyo3(get)]
    pub failures: Vec<String>,
    #[pyo3(get)]
    pub partition_err: f64,
    #[pyo3(get)]
    pub continuity_max: f64,
    #[pyo3(get)]
    pub boundary_max: f64,
    #[pyo3(get)]
    pub retired_max_dist: f64,
    #[pyo3(get)]
    pub retired_cells: u64,
    #[pyo3(get)]
    pub mean_grad_err: f64,
    #[pyo3(get)]
    pub omega_nested: bool,
    #[pyo3(get)]
    pub sandwich_excess: f64,
    #[pyo3(get)]
    pub frozen_area: f64,
}

#[pymethods]
impl Audit {
    fn __repr__(&self) -> String {
        format!(
            "Audit(passes={}, boundary_max={:e}, retired_max_dist={:e})",
            self.passes, self.boundary_max, self.retired_max_dist
        )
    }
}

/// Weak-form residual of the realized two-phase field over a hat-function
/// grid: worst |∫σ∇f¹·∇φ| and its ratio to γ·‖∇φ‖_L¹.
#[pyclass(frozen)]
pub struct Residual {
    #[pyo3(get)]
    pub hats: u32,
    #[pyo3(get)]
    pub worst_residual: f64,
    #[pyo3(get)]
    pub worst_ratio: f64,
    #[pyo3(get)]
    pub grad_l1: f64,
}

#[pymethods]
impl Residual {
    fn __repr__(&self) -> String {
        format!(
            "Residual(hats={}, worst_residual={:e}, worst_ratio={:e})",
            self.hats, self.worst_residual, self.worst_ratio
        )
    }
}

/// A coefficient pair in diagonal normal form σ₁ = diag(1/K, 1/S₁),
/// σ₂ = diag(K, S₂); the entry point for staircase and realization calls.
#[pyclass(frozen)]
pub struct Pair {
    params: DiagonalPairParams,
    spec: TargetSpec,
}

#[pymethods]
impl Pair {
    #[new]
    fn new(big_k: f64, big_s1: f64, big_s2: f64) -> PyResult<Self> {
        let params = DiagonalPairParams::new(big_k, big_s1, big_s2).map_err(to_py)?;
        Ok(Self {
            params,
            spec: TargetSpec::new(params),
        })
    }

    #[getter]
    fn big_k(&self) -> f64 {
        self.params.big_k
    }

    #[getter]
    fn big_s1(&self) -> f64 {
        self.params.big_s1
    }

    #[getter]
    fn big_s2(&self) -> f64 {
        self.params.big_s2
    }

    /// Critical exponents of this pair.
    fn exponents(&self) -> PyResult<Exponents> {
        exponents(self.params.big_k, self.params.big_s1, self.params.big_s2)
    }

    /// Connection weights and distribution exponent at ray angle θ.
    fn theta_functions(&self, theta: f64) -> PyResult<ThetaInfo> {
        let tf = theta_functions(&self.spec, theta).map_err(to_py)?;
        Ok(ThetaInfo {
            theta,
            lambda1: tf.lambda1,
            lambda2: tf.lambda2,
            m1: tf.m1,
            m2: tf.m2,
            l: tf.l,
            big_l: tf.big_l,
            p: tf.p,
        })
    }

    /// The staircase step at A = n·J·R_θ exactly on the ray.
    fn step_at_level(&self, n: u32, theta: f64) -> PyResult<StepInfo> {
        let m_bound = m_const(&self.spec).map_err(to_py)?;
        let jr = ConformalMatrix::conj_rotation(theta);
        let a = ConformalMatrix::new(jr.plus * n as f64, jr.minus * n as f64);
        let st = step(&self.spec, a, n, 0.0, 0.7, m_bound).map_err(to_py)?;
        let atoms = st
            .laminate
            .atoms()
            .iter()
            .map(|at| {
                (
                    (at.matrix.plus.re, at.matrix.plus.im),
                    (at.matrix.minus.re, at.matrix.minus.im),
                    at.weight,
                )
            })
            .collect();
        Ok(StepInfo {
            n,
            theta,
            mu1: st.mu1,
            mu2: st.mu2,
            mu3: st.mu3,
            mass_up: st.mass_up,
            atoms,
        })
    }

    /// (n, mass arriving at level n) for the iterated staircase up to n_max.
    #[pyo3(signature = (theta = 0.0, n_max = 256))]
    fn levels(&self, theta: f64, n_max: u32) -> PyResult<Vec<(u32, f64)>> {
        let seq = iterate(&self.spec, theta, n_max).map_err(to_py)?;
        Ok(seq
            .levels
            .iter()
            .map(|row| (row.n, row.mass_at_level))
            .collect())
    }

    /// sup_{n ≤ n_max} |log Π β_j + p(θ)·log n|: distance of the level
    /// masses from the ideal power law n^{−p}.
    #[pyo3(signature = (theta = 0.0, n_max = 100_000))]
    fn beta_residual(&self, theta: f64, n_max: u32) -> PyResult<f64> {
        let tf = theta_functions(&self.spec, theta).map_err(to_py)?;
        Ok(beta_residual_max(&tf, n_max))
    }

    /// Build the piecewise-affine realization of the staircase to the given
    /// depth on the unit square, boundary condition f = Jx.
    #[pyo3(signature = (depth = 8, gamma = 0.05, budget = 1_000_000, seed = 1))]
    fn realize(&self, depth: u32, gamma: f64, budget: u64, seed: u64) -> PyResult<Map> {
        let cfg = RealizeConfig {
            n_levels: depth,
            gamma,
            budget,
            seed,
            ..RealizeConfig::default()
        };
        let inner = build_staircase_map(&self.spec, &cfg).map_err(to_py)?;
        Ok(Map {
            inner,
            spec: self.spec,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Pair(big_k={}, big_s1={}, big_s2={})",
            self.params.big_k, self.params.big_s1, self.params.big_s2
        )
    }
}

/// A realized piecewise-affine map: the cell mesh plus audit and analysis.
#[pyclass(frozen)]
pub struct Map {
    inner: StaircaseMap,
    spec: TargetSpec,
}

#[pymethods]
impl Map {
    /// Number of mesh cells.
    #[getter]
    fn cells(&self) -> usize {
        self.inner.cells.len()
    }

    #[getter]
    fn depth(&self) -> u32 {
        self.inner.config.n_levels
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.config.gamma
    }

    #[getter]
    fn retired_area(&self) -> f64 {
        self.inner.retired_area
    }

    #[getter]
    fn frozen_area(&self) -> f64 {
        self.inner.frozen_area
    }

    #[getter]
    fn climbing_area(&self) -> f64 {
        self.inner.climbing_area
    }

    /// Re-measure every mesh invariant. γ defaults to the γ the map was
    /// built with.
    #[pyo3(signature = (gamma = None))]
    fn audit(&self, gamma: Option<f64>) -> Audit {
        let gamma = gamma.unwrap_or(self.inner.config.gamma);
        let a = audit_map(&self.inner, &self.spec);
        Audit {
            passes: a.passes(gamma),
            failures: a.failures(gamma),
            partition_err: a.partition_err,
            continuity_max: a.continuity_max,
            boundary_max: a.boundary_max,
            retired_max_dist: a.retired_max_dist,
            retired_cells: a.retired_cells,
            mean_grad_err: a.mean_grad_err,
            omega_nested: a.omega_nested,
            sandwich_excess: a.sandwich_excess,
            frozen_area: a.frozen_area,
        }
    }

    /// (area, |∇f|) over all cells.
    fn gradient_samples(&self) -> Vec<(f64, f64)> {
        self.inner.gradient_samples()
    }

    /// Log-log slope of the gradient distribution |{|∇f| > t}| fitted over
    /// [t_lo, t_hi]; approaches −p at depth for the critical pair.
    #[pyo3(signature = (t_lo = 2.0, t_hi = 8.0))]
    fn distribution_slope(&self, t_lo: f64, t_hi: f64) -> PyResult<f64> {
        let ts = threshold_grid(0.5, 512.0, 121).map_err(to_py)?;
        let curve = distribution_curve(&self.inner.gradient_samples(), &ts);
        log_log_slope(&curve, t_lo, t_hi).map_err(to_py)
    }

    /// ∫ min(|∇f|, cap)^p over the mesh.
    fn truncated_lp(&self, p: f64, cap: f64) -> f64 {
        lp_integral_truncated(&self.inner.gradient_samples(), p, cap)
    }

    /// Weak-form residual over the interior hat functions of a
    /// grid×grid partition of the domain.
    #[pyo3(signature = (grid = 6))]
    fn weak_residual(&self, grid: u32) -> PyResult<Residual> {
        let r = weak_residual(&self.inner, &self.spec, grid).map_err(to_py)?;
        Ok(Residual {
            hats: r.hats,
            worst_residual: r.worst_residual,
            worst_ratio: r.worst_ratio,
            grad_l1: r.grad_l1,
        })
    }

    /// Write the mesh (cells, levels, climb regions, parameters) as JSON.
    fn save(&self, path: &str) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(|e| to_py(e.into()))?;
        self.inner.write_json(f).map_err(to_py)
    }

    /// Load a mesh written by `save` (or by the CLI's `realize`).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Map> {
        let f = std::fs::File::open(path).map_err(|e| to_py(e.into()))?;
        let inner = StaircaseMap::read_json(f).map_err(to_py)?;
        let params = DiagonalPairParams::new(inner.big_k, inner.big_s1, inner.big_s2)
            .map_err(to_py)?;
        Ok(Map {
            inner,
            spec: TargetSpec::new(params),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Map(depth={}, cells={}, retired_area={:.4})",
            self.inner.config.n_levels,
            self.inner.cells.len(),
            self.inner.retired_area
        )
    }
}

/// Staircase laminates and their piecewise-affine realizations for
/// two-phase elliptic coefficient pairs.
#[pymodule]
fn gradint_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Exponents>()?;
    m.add_class::<ThetaInfo>()?;
    m.add_class::<StepInfo>()?;
    m.add_class::<Audit>()?;
    m.add_class::<Residual>()?;
    m.add_class::<Pair>()?;
    m.add_class::<Map>()?;
    m.add_function(wrap_pyfunction!(exponents, m)?)?;
    m.add_function(wrap_pyfunction!(exponents_for_matrices, m)?)?;
    Ok(())
}
