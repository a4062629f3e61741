//! Lifted problem builders for the two relaxed subproblems.
//!
//! The beam/zone selection step lifts the binary vector
//! `v = [y_1..y_N, r_1..r_Q, 1]` to `V = v v^T` and maximizes `tr(F V)` under
//! per-zone SNR constraints and binariness-encoding equalities; the phase
//! step lifts the unit-modulus vector `t_bar = [t; 1]` to `T = t_bar t_bar^H`
//! and is posed either as pure feasibility or as residual-SNR maximization
//! with auxiliary per-zone scalars. Both are emitted as standard-form SDPs
//! with the rank-one constraint dropped; the phase problems go through the
//! Hermitian-to-real embedding (all trace bounds pre-scaled by the factor 2
//! the embedding introduces), and all channel powers are normalized by the
//! noise power so the solver sees data in SNR units.

use crate::scenario::CellScenario;
use crate::sdp::{hermitian_to_real, real_to_hermitian, Constraint, SdpError, SdpProblem, Sense};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Zones already activated in earlier timeslots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageState {
    covered: Vec<bool>,
}

impl CoverageState {
    pub fn new(num_zones: usize) -> Self {
        CoverageState {
            covered: vec![false; num_zones],
        }
    }

    pub fn all_covered(num_zones: usize) -> Self {
        CoverageState {
            covered: vec![true; num_zones],
        }
    }

    pub fn is_covered(&self, q: usize) -> bool {
        self.covered[q]
    }

    pub fn cover(&mut self, q: usize) {
        self.covered[q] = true;
    }

    pub fn covered(&self) -> &[bool] {
        &self.covered
    }

    /// Zone weight with covered zones zeroed out.
    pub fn effective_weight(&self, scenario: &CellScenario, q: usize) -> f64 {
        if self.covered[q] {
            0.0
        } else {
            scenario.zones[q].weight
        }
    }

    pub fn uncovered_weight(&self, scenario: &CellScenario) -> f64 {
        (0..self.covered.len())
            .map(|q| self.effective_weight(scenario, q))
            .sum()
    }

    /// Diagonal objective matrix F = diag([0_N, w_1..w_Q, 0]) over the lifted
    /// selection variable, with covered weights zeroed.
    pub fn weight_matrix(&self, scenario: &CellScenario) -> DMatrix<f64> {
        let n = scenario.num_beams();
        let q = scenario.num_zones();
        let mut f = DMatrix::zeros(n + q + 1, n + q + 1);
        for k in 0..q {
            f[(n + k, n + k)] = self.effective_weight(scenario, k);
        }
        f
    }
}

/// Binary beam indicators `y` and zone indicators `r`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionVector {
    pub y: Vec<bool>,
    pub r: Vec<bool>,
}

impl SelectionVector {
    pub fn empty(num_beams: usize, num_zones: usize) -> Self {
        SelectionVector {
            y: vec![false; num_beams],
            r: vec![false; num_zones],
        }
    }

    pub fn num_active_beams(&self) -> usize {
        self.y.iter().filter(|&&b| b).count()
    }

    pub fn claims_any_zone(&self) -> bool {
        self.r.iter().any(|&b| b)
    }

    /// Lifted vector [y; r; 1] of length S + 1.
    pub fn lifted(&self) -> DVector<f64> {
        let s = self.y.len() + self.r.len();
        let mut v = DVector::zeros(s + 1);
        for (i, &b) in self.y.iter().chain(self.r.iter()).enumerate() {
            v[i] = if b { 1.0 } else { 0.0 };
        }
        v[s] = 1.0;
        v
    }

    /// Sum of effective weights of the claimed zones.
    pub fn claimed_weight(&self, scenario: &CellScenario, coverage: &CoverageState) -> f64 {
        self.r
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(q, _)| coverage.effective_weight(scenario, q))
            .sum()
    }
}

/// RIS phase shifts and their unit-modulus lift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub theta: Vec<f64>,
}

impl PhaseConfig {
    pub fn zero(m: usize) -> Self {
        PhaseConfig { theta: vec![0.0; m] }
    }

    /// t = [e^{j theta_1}, ..., e^{j theta_M}]^H, i.e. t_m = e^{-j theta_m}.
    pub fn t(&self) -> DVector<Complex64> {
        DVector::from_fn(self.theta.len(), |m, _| {
            Complex64::from_polar(1.0, -self.theta[m])
        })
    }

    /// Lifted vector [t; 1].
    pub fn t_bar(&self) -> DVector<Complex64> {
        let m = self.theta.len();
        let mut v = DVector::zeros(m + 1);
        v.rows_mut(0, m).copy_from(&self.t());
        v[m] = Complex64::new(1.0, 0.0);
        v
    }

    /// Rank-one lift T = t_bar t_bar^H.
    pub fn t_matrix(&self) -> DMatrix<Complex64> {
        let tb = self.t_bar();
        let tbh = tb.adjoint();
        &tb * tbh
    }
}

/// Selection subproblem over the lifted matrix V of size (S+1) x (S+1):
/// maximize tr(F V) subject to per-zone SNR constraints
/// tr((A_q - C_q) V) >= 0, binariness equalities tr(H_p V) = 0, and the
/// corner pin V[S,S] = 1. The rank-one constraint is dropped.
pub fn build_p2(
    scenario: &CellScenario,
    phases: &PhaseConfig,
    coverage: &CoverageState,
) -> SdpProblem {
    let n = scenario.num_beams();
    let nq = scenario.num_zones();
    let s = n + nq;
    let tau = scenario.params.snr_threshold;
    let sigma2 = scenario.params.noise_power;

    let mut prob = SdpProblem::new(s + 1, coverage.weight_matrix(scenario));
    for q in 0..nq {
        let h = scenario.effective_channel(q, &phases.theta);
        let mut m = DMatrix::zeros(s + 1, s + 1);
        for (bn, beam) in scenario.codebook.beams.iter().enumerate() {
            // A_q: beam powers against the lifted one-entry, in SNR units.
            let p = h.dotc(beam).norm_sqr() / sigma2;
            m[(bn, s)] += p / 2.0;
            m[(s, bn)] += p / 2.0;
            // C_q: threshold coupling between r_q and each y_n.
            m[(n + q, bn)] -= tau / 2.0;
            m[(bn, n + q)] -= tau / 2.0;
        }
        prob.constraints.push(Constraint {
            matrix: m,
            sense: Sense::Ge,
            bound: 0.0,
        });
    }
    for p in 0..s {
        let mut hmat = DMatrix::zeros(s + 1, s + 1);
        hmat[(p, p)] = 1.0;
        hmat[(p, s)] = -0.5;
        hmat[(s, p)] = -0.5;
        prob.constraints.push(Constraint {
            matrix: hmat,
            sense: Sense::Eq,
            bound: 0.0,
        });
    }
    // At least one beam per slot. The binary problem assumes the BS transmits
    // something; without this row the relaxation admits the degenerate point
    // y = 0, r = 1, where every SNR row is vacuously satisfied.
    let mut beam_row = DMatrix::zeros(s + 1, s + 1);
    for bn in 0..n {
        beam_row[(bn, s)] = 0.5;
        beam_row[(s, bn)] = 0.5;
    }
    prob.constraints.push(Constraint {
        matrix: beam_row,
        sense: Sense::Ge,
        bound: 1.0,
    });
    prob.fixed_entries.push((s, s, 1.0));
    prob
}

/// Quadratic-form matrix Z_{q,n} of size (M+1) with
/// t_bar^H Z_{q,n} t_bar = |(t^H Omega_q + h_{d,q}^H) b_n|^2.
pub fn build_z(scenario: &CellScenario, q: usize, n: usize) -> DMatrix<Complex64> {
    let omega = scenario.omega(q);
    let beam = &scenario.codebook.beams[n];
    let u = &omega * beam; // M-vector
    let c = scenario.channels.direct[q].dotc(beam); // h_{d,q}^H b_n
    let m = u.len();
    DMatrix::from_fn(m + 1, m + 1, |i, j| match (i == m, j == m) {
        (false, false) => u[i] * u[j].conj(),
        (false, true) => c.conj() * u[i],
        (true, false) => c * u[j].conj(),
        (true, true) => Complex64::new(c.norm_sqr(), 0.0),
    })
}

fn active_z_sum(scenario: &CellScenario, selection: &SelectionVector, q: usize) -> DMatrix<Complex64> {
    let m = scenario.num_ris_elements();
    let sigma2 = scenario.params.noise_power;
    let mut acc = DMatrix::zeros(m + 1, m + 1);
    for (n, &on) in selection.y.iter().enumerate() {
        if on {
            acc += build_z(scenario, q, n) / Complex64::new(sigma2, 0.0);
        }
    }
    acc
}

fn unit_diag_pins(prob: &mut SdpProblem, m_plus_1: usize) {
    // Diagonal of the embedded T is one; the imaginary-part diagonal is zero.
    for i in 0..2 * m_plus_1 {
        prob.fixed_entries.push((i, i, 1.0));
    }
    for i in 0..m_plus_1 {
        prob.fixed_entries.push((i, m_plus_1 + i, 0.0));
    }
}

/// Phase feasibility subproblem over the embedded lift of T (dimension
/// 2(M+1)): zero objective, one SNR trace inequality per zone, unit-diagonal
/// pins. Requires `hermitian_to_real` only internally; bounds carry the
/// embedding's factor 2.
pub fn build_p3(
    scenario: &CellScenario,
    selection: &SelectionVector,
) -> Result<SdpProblem, SdpError> {
    let m1 = scenario.num_ris_elements() + 1;
    let tau = scenario.params.snr_threshold;
    let active = selection.num_active_beams() as f64;
    let mut prob = SdpProblem::new(2 * m1, DMatrix::zeros(2 * m1, 2 * m1));
    if active > 0.0 {
        for q in 0..scenario.num_zones() {
            let zsum = active_z_sum(scenario, selection, q);
            let r = if selection.r[q] { 1.0 } else { 0.0 };
            prob.constraints.push(Constraint {
                matrix: hermitian_to_real(&zsum)?,
                sense: Sense::Ge,
                bound: 2.0 * tau * r * active,
            });
        }
    }
    unit_diag_pins(&mut prob, m1);
    Ok(prob)
}

/// Residual-SNR subproblem: same feasible set in T as [`build_p3`], plus one
/// auxiliary scalar per zone carried as an extra diagonal entry of the
/// decision matrix (indices `2(M+1) + q`), clamped nonnegative by the PSD
/// cone. Maximizes the covered-weighted sum of the residuals of unclaimed
/// zones while keeping claimed zones above the threshold.
pub fn build_p4(
    scenario: &CellScenario,
    selection: &SelectionVector,
    coverage: &CoverageState,
) -> Result<SdpProblem, SdpError> {
    let m1 = scenario.num_ris_elements() + 1;
    let nq = scenario.num_zones();
    let dim = 2 * m1 + nq;
    let tau = scenario.params.snr_threshold;
    let active = selection.num_active_beams() as f64;

    let mut objective = DMatrix::zeros(dim, dim);
    for q in 0..nq {
        if !selection.r[q] {
            objective[(2 * m1 + q, 2 * m1 + q)] = coverage.effective_weight(scenario, q);
        }
    }
    let mut prob = SdpProblem::new(dim, objective);
    for q in 0..nq {
        let r = if selection.r[q] { 1.0 } else { 0.0 };
        let mut mat = DMatrix::zeros(dim, dim);
        if active > 0.0 {
            let emb = hermitian_to_real(&active_z_sum(scenario, selection, q))?;
            mat.view_mut((0, 0), (2 * m1, 2 * m1)).copy_from(&emb);
        } else if selection.r[q] {
            continue; // vacuous: no beam and nothing claimed
        }
        if !selection.r[q] {
            mat[(2 * m1 + q, 2 * m1 + q)] = -2.0;
        }
        prob.constraints.push(Constraint {
            matrix: mat,
            sense: Sense::Ge,
            bound: 2.0 * tau * r * active,
        });
    }
    unit_diag_pins(&mut prob, m1);
    Ok(prob)
}

/// Recover the Hermitian T (size M+1) from an embedded solution matrix whose
/// top-left block is the real embedding of T.
pub fn de_embed_t(x: &DMatrix<f64>, m_plus_1: usize) -> Result<DMatrix<Complex64>, SdpError> {
    if x.nrows() < 2 * m_plus_1 || x.ncols() < 2 * m_plus_1 {
        return Err(SdpError::DimensionMismatch("embedded T block".into()));
    }
    let block = x.view((0, 0), (2 * m_plus_1, 2 * m_plus_1)).into_owned();
    real_to_hermitian(&block, m_plus_1)
}
