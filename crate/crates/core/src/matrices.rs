//! Model matrices and the model-implied covariance matrix.
//!
//! Indicators split into latent-variable indicators (yˡ, including wrapped
//! covariates) and composite indicators (yᶜ). Composite loadings are never
//! parameters: they follow from the weights and the composite-indicator
//! covariances as Λᶜ = T W (W′T W)⁻¹. Composite (residual) variances are
//! derived so that the structural model reproduces diag(W′T W).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::ptable::{ConstructKind, ParameterTable, Role, Status};

/// Parameter matrices in the partitioned layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrices {
    /// Pˡ × Mˡ factor loadings.
    pub lambda_l: DMatrix<f64>,
    /// Pᶜ × Mᶜ composite weights.
    pub w: DMatrix<f64>,
    /// M × M structural coefficients; `b[(i, j)]` is the effect of j on i.
    pub b: DMatrix<f64>,
    /// M × M covariance of the structural errors, V(ζ).
    pub psi: DMatrix<f64>,
    /// Pˡ × Pˡ measurement-error covariances.
    pub theta_l: DMatrix<f64>,
    /// Pᶜ × Pᶜ composite-indicator covariances, block-diagonal by composite.
    pub t: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    LambdaL(usize, usize),
    W(usize, usize),
    B(usize, usize),
    Psi(usize, usize),
    ThetaL(usize, usize),
    T(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Free(usize),
    Fixed(f64),
    Derived,
}

/// Immutable evaluation plan built once from a parameter table.
#[derive(Debug, Clone)]
pub struct ModelStructure {
    pub observed: Vec<String>,
    pub constructs: Vec<String>,
    /// Positions (in `observed`) of latent-variable indicators.
    pub latent_indicators: Vec<usize>,
    /// Positions (in `observed`) of composite indicators.
    pub composite_indicators: Vec<usize>,
    /// Construct indices of latent variables (including wrapped covariates).
    pub latents: Vec<usize>,
    /// Construct indices of composites.
    pub composites: Vec<usize>,
    /// Composite block (position in `composites`) of each composite indicator.
    pub block_of: Vec<usize>,
    pub cells: Vec<Cell>,
    sources: Vec<Source>,
    n_free: usize,
}

/// Everything computed on the way to Σ(θ).
#[derive(Debug, Clone)]
pub struct Implied {
    /// Parameter matrices with the derived Ψ entries filled in.
    pub matrices: ModelMatrices,
    /// Pᶜ × Mᶜ composite loadings.
    pub lambda_c: DMatrix<f64>,
    /// Mᶜ × Mᶜ composite covariance W′T W.
    pub composite_cov: DMatrix<f64>,
    /// (I − B)⁻¹.
    pub resolvent: DMatrix<f64>,
    /// M × M construct covariance V(η).
    pub v_eta: DMatrix<f64>,
    /// Pᶜ × Pᶜ composite residual covariance Θᶜ.
    pub theta_c: DMatrix<f64>,
    /// P × M full loading matrix.
    pub lambda: DMatrix<f64>,
    /// P × P full residual covariance.
    pub theta: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl Implied {
    /// Derived Ψ diagonal per composite, in `ModelStructure::composites` order.
    pub fn derived_variances(&self, structure: &ModelStructure) -> Vec<f64> {
        structure
            .composites
            .iter()
            .map(|&m| self.matrices.psi[(m, m)])
            .collect()
    }
}

impl ModelStructure {
    pub fn new(table: &ParameterTable) -> Result<Self> {
        let observed = table.observed.clone();
        let constructs: Vec<String> = table.constructs.iter().map(|c| c.name.clone()).collect();
        let p = observed.len();

        let mut latents = Vec::new();
        let mut composites = Vec::new();
        let mut side = vec![None; p]; // Some(false): latent side, Some(true): composite side
        let mut block = vec![usize::MAX; p];
        for (ci, c) in table.constructs.iter().enumerate() {
            let composite = c.kind == ConstructKind::Composite;
            if composite {
                composites.push(ci);
            } else {
                latents.push(ci);
            }
            for ind in &c.indicators {
                let oi = table
                    .observed_index(ind)
                    .ok_or_else(|| Error::UnknownVariable(ind.clone()))?;
                if side[oi].is_some_and(|s| s != composite) {
                    return Err(Error::InvalidModel(format!(
                        "`{ind}` is both a latent-variable and a composite indicator"
                    )));
                }
                side[oi] = Some(composite);
                if composite {
                    block[oi] = composites.len() - 1;
                }
            }
        }
        let latent_indicators: Vec<usize> = (0..p).filter(|&i| side[i] == Some(false)).collect();
        let composite_indicators: Vec<usize> = (0..p).filter(|&i| side[i] == Some(true)).collect();
        let block_of = composite_indicators.iter().map(|&i| block[i]).collect();

        let pos = |list: &[usize], x: usize| list.iter().position(|&v| v == x);
        let obs = |name: &str| {
            table
                .observed_index(name)
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))
        };
        let con = |name: &str| {
            table
                .construct_index(name)
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))
        };
        let missing = |what: &str, name: &str| Error::InvalidModel(format!("`{name}` is not a {what}"));

        let mut cells = Vec::with_capacity(table.rows.len());
        let mut sources = Vec::with_capacity(table.rows.len());
        for r in &table.rows {
            let cell = match r.role {
                Role::Loading => {
                    let i = pos(&latent_indicators, obs(&r.rhs)?)
                        .ok_or_else(|| missing("latent-variable indicator", &r.rhs))?;
                    let j = pos(&latents, con(&r.lhs)?).ok_or_else(|| missing("latent variable", &r.lhs))?;
                    Cell::LambdaL(i, j)
                }
                Role::Weight => {
                    let i = pos(&composite_indicators, obs(&r.rhs)?)
                        .ok_or_else(|| missing("composite indicator", &r.rhs))?;
                    let j = pos(&composites, con(&r.lhs)?).ok_or_else(|| missing("composite", &r.lhs))?;
                    Cell::W(i, j)
                }
                Role::Regression => Cell::B(con(&r.lhs)?, con(&r.rhs)?),
                Role::ConstructCovariance => Cell::Psi(con(&r.lhs)?, con(&r.rhs)?),
                Role::ErrorCovariance => {
                    let i = pos(&latent_indicators, obs(&r.lhs)?)
                        .ok_or_else(|| missing("latent-variable indicator", &r.lhs))?;
                    let j = pos(&latent_indicators, obs(&r.rhs)?)
                        .ok_or_else(|| missing("latent-variable indicator", &r.rhs))?;
                    Cell::ThetaL(i, j)
                }
                Role::IndicatorCovariance => {
                    let i = pos(&composite_indicators, obs(&r.lhs)?)
                        .ok_or_else(|| missing("composite indicator", &r.lhs))?;
                    let j = pos(&composite_indicators, obs(&r.rhs)?)
                        .ok_or_else(|| missing("composite indicator", &r.rhs))?;
                    if block[composite_indicators[i]] != block[composite_indicators[j]] {
                        return Err(Error::InvalidModel(format!(
                            "`{}` spans two composite blocks",
                            r.name()
                        )));
                    }
                    Cell::T(i, j)
                }
            };
            let source = match r.status {
                Status::Free => Source::Free(r.free_index.expect("free row without index")),
                Status::Fixed => Source::Fixed(r.fixed_value.unwrap_or(0.0)),
                Status::Derived => {
                    match cell {
                        Cell::Psi(i, j) if i == j && composites.contains(&i) => {}
                        _ => {
                            return Err(Error::InvalidModel(format!(
                                "`{}` cannot be derived",
                                r.name()
                            )))
                        }
                    }
                    Source::Derived
                }
            };
            cells.push(cell);
            sources.push(source);
        }

        Ok(ModelStructure {
            observed,
            constructs,
            latent_indicators,
            composite_indicators,
            latents,
            composites,
            block_of,
            cells,
            sources,
            n_free: table.n_free(),
        })
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    /// Per-row values for θ; derived rows are `NaN`.
    pub fn row_values(&self, theta: &[f64]) -> Vec<f64> {
        self.sources
            .iter()
            .map(|s| match *s {
                Source::Free(k) => theta[k],
                Source::Fixed(v) => v,
                Source::Derived => f64::NAN,
            })
            .collect()
    }

    /// Writes per-row values into the parameter matrices. Derived entries are
    /// left at zero.
    pub fn matrices(&self, values: &[f64]) -> Result<ModelMatrices> {
        let (pl, pc) = (self.latent_indicators.len(), self.composite_indicators.len());
        let (ml, mc, m) = (self.latents.len(), self.composites.len(), self.constructs.len());
        let mut mats = ModelMatrices {
            lambda_l: DMatrix::zeros(pl, ml),
            w: DMatrix::zeros(pc, mc),
            b: DMatrix::zeros(m, m),
            psi: DMatrix::zeros(m, m),
            theta_l: DMatrix::zeros(pl, pl),
            t: DMatrix::zeros(pc, pc),
        };
        for ((cell, source), &v) in self.cells.iter().zip(&self.sources).zip(values) {
            if *source == Source::Derived {
                continue;
            }
            if !v.is_finite() {
                return Err(Error::InvalidModel("non-finite parameter value".into()));
            }
            match *cell {
                Cell::LambdaL(i, j) => mats.lambda_l[(i, j)] = v,
                Cell::W(i, j) => mats.w[(i, j)] = v,
                Cell::B(i, j) => mats.b[(i, j)] = v,
                Cell::Psi(i, j) => {
                    mats.psi[(i, j)] = v;
                    mats.psi[(j, i)] = v;
                }
                Cell::ThetaL(i, j) => {
                    mats.theta_l[(i, j)] = v;
                    mats.theta_l[(j, i)] = v;
                }
                Cell::T(i, j) => {
                    mats.t[(i, j)] = v;
                    mats.t[(j, i)] = v;
                }
            }
        }
        Ok(mats)
    }

    /// Evaluates the model at free-parameter vector θ.
    pub fn implied(&self, theta: &[f64]) -> Result<Implied> {
        if theta.len() != self.n_free {
            return Err(Error::InvalidModel(format!(
                "expected {} free parameters, got {}",
                self.n_free,
                theta.len()
            )));
        }
        self.implied_from_values(&self.row_values(theta))
    }

    /// Evaluates the model at explicit per-row values (derived rows ignored).
    pub fn implied_from_values(&self, values: &[f64]) -> Result<Implied> {
        let mut mats = self.matrices(values)?;
        let mc = self.composites.len();

        let (lambda_c, composite_cov) = if mc > 0 {
            let ctc = mats.w.transpose() * &mats.t * &mats.w;
            (composite_loadings(&mats.t, &mats.w)?, ctc)
        } else {
            (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
        };

        let m = self.constructs.len();
        let i_minus_b = DMatrix::identity(m, m) - &mats.b;
        let resolvent = linalg::solve(&i_minus_b, &DMatrix::identity(m, m), "I - B")?;
        if mc > 0 {
            fill_derived_variances(self, &mut mats.psi, &resolvent, &composite_cov)?;
        }
        let mut v_eta = &resolvent * &mats.psi * resolvent.transpose();
        linalg::symmetrize(&mut v_eta);

        let theta_c = if mc > 0 {
            let mut tc = &mats.t - &lambda_c * &composite_cov * lambda_c.transpose();
            linalg::symmetrize(&mut tc);
            tc
        } else {
            DMatrix::zeros(0, 0)
        };

        let p = self.observed.len();
        let mut lambda = DMatrix::zeros(p, m);
        let mut theta = DMatrix::zeros(p, p);
        for (i, &oi) in self.latent_indicators.iter().enumerate() {
            for (j, &cj) in self.latents.iter().enumerate() {
                lambda[(oi, cj)] = mats.lambda_l[(i, j)];
            }
            for (j, &oj) in self.latent_indicators.iter().enumerate() {
                theta[(oi, oj)] = mats.theta_l[(i, j)];
            }
        }
        for (i, &oi) in self.composite_indicators.iter().enumerate() {
            for (j, &cj) in self.composites.iter().enumerate() {
                lambda[(oi, cj)] = lambda_c[(i, j)];
            }
            for (j, &oj) in self.composite_indicators.iter().enumerate() {
                theta[(oi, oj)] = theta_c[(i, j)];
            }
        }
        let mut sigma = &lambda * &v_eta * lambda.transpose() + &theta;
        linalg::symmetrize(&mut sigma);

        Ok(Implied {
            matrices: mats,
            lambda_c,
            composite_cov,
            resolvent,
            v_eta,
            theta_c,
            lambda,
            theta,
            sigma,
        })
    }
}

/// Composite loadings Λᶜ = T W (W′T W)⁻¹.
pub fn composite_loadings(t: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let tw = t * w;
    let ctc = w.transpose() * &tw;
    // (W'TW) Λᶜ' = (TW)'
    let lt = linalg::solve(&ctc, &tw.transpose(), "composite covariance W'TW")?;
    Ok(lt.transpose())
}

/// Construct covariance V(η) = (I − B)⁻¹ Ψ (I − B)⁻ᵀ.
pub fn structural_covariance(b: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = b.nrows();
    let a = linalg::solve(&(DMatrix::identity(m, m) - b), &DMatrix::identity(m, m), "I - B")?;
    let mut v = &a * psi * a.transpose();
    linalg::symmetrize(&mut v);
    Ok(v)
}

/// Fills the derived Ψ diagonal of every composite so that
/// diag((I − B)⁻¹ Ψ (I − B)⁻ᵀ) reproduces diag(W′T W) on the composites.
/// Returns the derived values in `structure.composites` order.
pub fn apply_composite_variance_constraints(
    structure: &ModelStructure,
    matrices: &mut ModelMatrices,
) -> Result<Vec<f64>> {
    let m = structure.constructs.len();
    let a = linalg::solve(
        &(DMatrix::identity(m, m) - &matrices.b),
        &DMatrix::identity(m, m),
        "I - B",
    )?;
    let ctc = matrices.w.transpose() * &matrices.t * &matrices.w;
    fill_derived_variances(structure, &mut matrices.psi, &a, &ctc)?;
    Ok(structure
        .composites
        .iter()
        .map(|&c| matrices.psi[(c, c)])
        .collect())
}

fn fill_derived_variances(
    structure: &ModelStructure,
    psi: &mut DMatrix<f64>,
    a: &DMatrix<f64>,
    composite_cov: &DMatrix<f64>,
) -> Result<()> {
    let comps = &structure.composites;
    let k = comps.len();
    for &c in comps {
        psi[(c, c)] = 0.0;
    }
    // diag(AΨAᵀ) is linear in the unknown diagonal entries:
    // V_mm = Σ_j A_mj² ψ_jj + (contribution of known entries)
    let v0 = a * &*psi * a.transpose();
    let mut system = DMatrix::zeros(k, k);
    let mut rhs = DMatrix::zeros(k, 1);
    for (r, &mr) in comps.iter().enumerate() {
        for (c, &mc) in comps.iter().enumerate() {
            system[(r, c)] = a[(mr, mc)] * a[(mr, mc)];
        }
        rhs[(r, 0)] = composite_cov[(r, r)] - v0[(mr, mr)];
    }
    let names: Vec<&str> = comps.iter().map(|&c| structure.constructs[c].as_str()).collect();
    let x = linalg::solve(
        &system,
        &rhs,
        &format!("composite variance system for {}", names.join(", ")),
    )?;
    for (r, &c) in comps.iter().enumerate() {
        psi[(c, c)] = x[(r, 0)];
    }
    Ok(())
}

/// Model-implied covariance Σ(θ) in `structure.observed` order.
pub fn implied_covariance(structure: &ModelStructure, theta: &[f64]) -> Result<DMatrix<f64>> {
    Ok(structure.implied(theta)?.sigma)
}
