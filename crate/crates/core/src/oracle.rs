//! Exact divergences and identities over finite joint distributions.
//!
//! A [`DiscreteModel`] carries the encoder `q(z|x)`, decoder `p(x|z)`, the
//! anchors `P(x)`, `P(z)` and the model priors `q(x)`, `p(z)` as explicit
//! tables. From these it builds the anchored joints `q(z|x)P(x)` and
//! `p(x|z)P(z)`, their equal mixture `M_S`, the model joints `q(z|x)q(x)`
//! and `p(x|z)p(z)` and their equal mixture `M_θ`, and evaluates every
//! quantity by direct summation in nats.
//!
//! Conventions: `0 · log 0 = 0`; a KL or cross-entropy whose first argument
//! puts mass where the second has none is `+∞`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-12;

/// Probability table over `X × Z`, indexed `[x][z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    table: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        let cols = table.first().map_or(0, Vec::len);
        if table.is_empty() || cols == 0 || table.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidDistribution("joint table must be a non-empty matrix".into()));
        }
        let flat: Vec<f64> = table.iter().flatten().copied().collect();
        check_simplex(&flat, "joint")?;
        Ok(Self { table })
    }

    fn from_fn(nx: usize, nz: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        Self {
            table: (0..nx).map(|x| (0..nz).map(|z| f(x, z)).collect()).collect(),
        }
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn nx(&self) -> usize {
        self.table.len()
    }

    pub fn nz(&self) -> usize {
        self.table[0].len()
    }

    fn cells(&self) -> impl Iterator<Item = f64> + '_ {
        self.table.iter().flatten().copied()
    }

    pub fn entropy(&self) -> f64 {
        entropy(self.cells())
    }

    pub fn cross_entropy(&self, other: &DiscreteJoint) -> f64 {
        cross_entropy(self.cells(), other.cells())
    }

    pub fn kl(&self, other: &DiscreteJoint) -> f64 {
        kl(self.cells(), other.cells())
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        self.table.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_z(&self) -> Vec<f64> {
        (0..self.nz()).map(|z| self.table.iter().map(|r| r[z]).sum()).collect()
    }

    pub fn mutual_information(&self) -> f64 {
        let px = self.marginal_x();
        let pz = self.marginal_z();
        let mut mi = 0.0;
        for (x, row) in self.table.iter().enumerate() {
            for (z, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    mi += p * (p / (px[x] * pz[z])).ln();
                }
            }
        }
        mi
    }

    /// `½(self + other)`.
    pub fn mix(&self, other: &DiscreteJoint) -> DiscreteJoint {
        Self::from_fn(self.nx(), self.nz(), |x, z| 0.5 * (self.table[x][z] + other.table[x][z]))
    }
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidDistribution(format!("{what}: entry {v} is not a probability")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidDistribution(format!("{what}: sums to {s}")));
    }
    Ok(())
}

pub fn entropy(p: impl IntoIterator<Item = f64>) -> f64 {
    p.into_iter().filter(|&v| v > 0.0).map(|v| -v * v.ln()).sum()
}

/// `H(p, q) = −Σ p log q`.
pub fn cross_entropy(p: impl IntoIterator<Item = f64>, q: impl IntoIterator<Item = f64>) -> f64 {
    let mut h = 0.0;
    for (a, b) in p.into_iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            h -= a * b.ln();
        }
    }
    h
}

/// `KL(p ‖ q)`.
pub fn kl(p: impl IntoIterator<Item = f64>, q: impl IntoIterator<Item = f64>) -> f64 {
    let mut d = 0.0;
    for (a, b) in p.into_iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            d += a * (a / b).ln();
        }
    }
    d
}

/// Encoder, decoder, anchors and model priors over finite `X` and `Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteModel {
    /// `q(z|x)` as `[z][x]`; each column sums to one.
    pub enc_cond: Vec<Vec<f64>>,
    /// `p(x|z)` as `[x][z]`; each column sums to one.
    pub dec_cond: Vec<Vec<f64>>,
    /// `P(x)`.
    pub anchor_x: Vec<f64>,
    /// `P(z)`.
    pub anchor_z: Vec<f64>,
    /// `q(x)`.
    pub model_prior_x: Vec<f64>,
    /// `p(z)`.
    pub model_prior_z: Vec<f64>,
}

fn dirichlet<R: Rng + ?Sized>(rng: &mut R, n: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("valid gamma");
    let mut v: Vec<f64> = (0..n).map(|_| gamma.sample(rng).max(1e-300)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// `[rows][cols]` with every column an independent Dirichlet draw.
fn column_stochastic<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, alpha: f64) -> Vec<Vec<f64>> {
    let columns: Vec<Vec<f64>> = (0..cols).map(|_| dirichlet(rng, rows, alpha)).collect();
    (0..rows).map(|r| (0..cols).map(|c| columns[c][r]).collect()).collect()
}

impl DiscreteModel {
    pub fn validate(&self) -> Result<()> {
        let nx = self.anchor_x.len();
        let nz = self.anchor_z.len();
        if nx == 0 || nz == 0 {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if self.model_prior_x.len() != nx || self.model_prior_z.len() != nz {
            return Err(Error::InvalidDistribution("prior sizes disagree with anchors".into()));
        }
        if self.enc_cond.len() != nz || self.enc_cond.iter().any(|r| r.len() != nx) {
            return Err(Error::InvalidDistribution("enc_cond must be |Z|×|X|".into()));
        }
        if self.dec_cond.len() != nx || self.dec_cond.iter().any(|r| r.len() != nz) {
            return Err(Error::InvalidDistribution("dec_cond must be |X|×|Z|".into()));
        }
        for x in 0..nx {
            let col: Vec<f64> = (0..nz).map(|z| self.enc_cond[z][x]).collect();
            check_simplex(&col, "q(z|x) column")?;
        }
        for z in 0..nz {
            let col: Vec<f64> = (0..nx).map(|x| self.dec_cond[x][z]).collect();
            check_simplex(&col, "p(x|z) column")?;
        }
        check_simplex(&self.anchor_x, "P(x)")?;
        check_simplex(&self.anchor_z, "P(z)")?;
        check_simplex(&self.model_prior_x, "q(x)")?;
        check_simplex(&self.model_prior_z, "p(z)")?;
        Ok(())
    }

    /// Every table drawn from a symmetric Dirichlet(1).
    pub fn random<R: Rng + ?Sized>(rng: &mut R, nx: usize, nz: usize) -> Self {
        Self {
            enc_cond: column_stochastic(rng, nz, nx, 1.0),
            dec_cond: column_stochastic(rng, nx, nz, 1.0),
            anchor_x: dirichlet(rng, nx, 1.0),
            anchor_z: dirichlet(rng, nz, 1.0),
            model_prior_x: dirichlet(rng, nx, 1.0),
            model_prior_z: dirichlet(rng, nz, 1.0),
        }
    }

    /// Every table uniform.
    pub fn uniform(nx: usize, nz: usize) -> Self {
        Self {
            enc_cond: vec![vec![1.0 / nz as f64; nx]; nz],
            dec_cond: vec![vec![1.0 / nx as f64; nz]; nx],
            anchor_x: vec![1.0 / nx as f64; nx],
            anchor_z: vec![1.0 / nz as f64; nz],
            model_prior_x: vec![1.0 / nx as f64; nx],
            model_prior_z: vec![1.0 / nz as f64; nz],
        }
    }

    /// Same conditionals with the model priors replaced by the anchors.
    pub fn with_anchored_priors(&self) -> Self {
        Self {
            model_prior_x: self.anchor_x.clone(),
            model_prior_z: self.anchor_z.clone(),
            ..self.clone()
        }
    }

    /// Model prior `q(x)` set to the decoding marginal `Σ_z p(x|z) p(z)`.
    pub fn with_marginal_decoding_prior(&self) -> Self {
        let qx = (0..self.nx())
            .map(|x| (0..self.nz()).map(|z| self.dec_cond[x][z] * self.model_prior_z[z]).sum())
            .collect();
        Self {
            model_prior_x: qx,
            ..self.clone()
        }
    }

    pub fn nx(&self) -> usize {
        self.anchor_x.len()
    }

    pub fn nz(&self) -> usize {
        self.anchor_z.len()
    }

    /// `q(z|x) P(x)`.
    pub fn enc_anchored(&self) -> DiscreteJoint {
        DiscreteJoint::from_fn(self.nx(), self.nz(), |x, z| self.enc_cond[z][x] * self.anchor_x[x])
    }

    /// `p(x|z) P(z)`.
    pub fn dec_anchored(&self) -> DiscreteJoint {
        DiscreteJoint::from_fn(self.nx(), self.nz(), |x, z| self.dec_cond[x][z] * self.anchor_z[z])
    }

    /// `q(z|x) q(x)`.
    pub fn enc_model(&self) -> DiscreteJoint {
        DiscreteJoint::from_fn(self.nx(), self.nz(), |x, z| self.enc_cond[z][x] * self.model_prior_x[x])
    }

    /// `p(x|z) p(z)`.
    pub fn dec_model(&self) -> DiscreteJoint {
        DiscreteJoint::from_fn(self.nx(), self.nz(), |x, z| self.dec_cond[x][z] * self.model_prior_z[z])
    }

    /// `M_S`, the equal mixture of the anchored joints.
    pub fn sample_mixture(&self) -> DiscreteJoint {
        self.enc_anchored().mix(&self.dec_anchored())
    }

    /// Exact expectation of the VAE negative ELBO over `x ~ P(x)`.
    pub fn vae_loss(&self) -> f64 {
        let enc = self.enc_anchored();
        let mut loss = 0.0;
        for x in 0..self.nx() {
            for z in 0..self.nz() {
                let w = enc.table[x][z];
                if w > 0.0 {
                    let log_q = self.enc_cond[z][x].ln();
                    let log_p = self.dec_cond[x][z].ln();
                    let log_prior = self.anchor_z[z].ln();
                    loss += w * (log_q - log_p - log_prior);
                }
            }
        }
        loss
    }

    pub fn divergence_suite(&self) -> Result<DivergenceReport> {
        self.validate()?;
        let enc_a = self.enc_anchored();
        let dec_a = self.dec_anchored();
        let ms = enc_a.mix(&dec_a);
        let q_joint = self.enc_model();
        let p_joint = self.dec_model();
        let m_theta = q_joint.mix(&p_joint);

        let kl_dec_enc = dec_a.kl(&enc_a);
        let kl_enc_dec = enc_a.kl(&dec_a);
        let jsd = 0.5 * (dec_a.kl(&ms) + enc_a.kl(&ms));
        let h_ms = ms.entropy();
        let r_h = 0.5 * (enc_a.entropy() + dec_a.entropy());
        let ce_q = ms.cross_entropy(&q_joint);
        let ce_p = ms.cross_entropy(&p_joint);
        let l_ce = ms.cross_entropy(&m_theta);
        let l_mim = 0.5 * (ce_q + ce_p);
        Ok(DivergenceReport {
            kl_dec_enc,
            kl_enc_dec,
            skl: 0.5 * (kl_dec_enc + kl_enc_dec),
            jsd,
            h_ms,
            r_h,
            h_ms_q: ce_q,
            h_ms_p: ce_p,
            l_ce,
            l_mim,
            r_mim: l_mim - l_ce,
            kl_ms_enc: ms.kl(&enc_a),
            kl_ms_dec: ms.kl(&dec_a),
            kl_prior_z: kl(self.anchor_z.iter().copied(), self.model_prior_z.iter().copied()),
            kl_prior_x: kl(self.anchor_x.iter().copied(), self.model_prior_x.iter().copied()),
            kl_enc_p_joint: enc_a.kl(&p_joint),
            kl_dec_q_joint: dec_a.kl(&q_joint),
            h_ms_x: entropy(ms.marginal_x()),
            h_ms_z: entropy(ms.marginal_z()),
            i_ms: ms.mutual_information(),
        })
    }

    /// Checks every identity and inequality, returning residuals.
    pub fn verify_identities(&self) -> Result<IdentityReport> {
        let r = self.divergence_suite()?;
        let anchored = self.with_anchored_priors().divergence_suite()?;
        let checks = vec![
            IdentityCheck::inequality("a1: H(M_S) <= L_CE", r.l_ce - r.h_ms),
            IdentityCheck::inequality("a2: L_CE <= L_MIM", r.l_mim - r.l_ce),
            IdentityCheck::equality("b: L_MIM = L_CE + R_MIM", r.l_mim, r.l_ce + r.r_mim),
            IdentityCheck::inequality("b: R_MIM >= 0", r.r_mim),
            IdentityCheck::equality("c: JSD + R_H = H(M_S)", r.jsd + r.r_h, r.h_ms),
            IdentityCheck::inequality("d: JSD <= SKL/2", 0.5 * r.skl - r.jsd),
            IdentityCheck::equality(
                "d': SKL/2 = (KL(M_S||enc)+KL(M_S||dec))/2 + JSD",
                0.5 * r.skl,
                0.5 * (r.kl_ms_enc + r.kl_ms_dec) + r.jsd,
            ),
            IdentityCheck::equality(
                "e: L_MIM = SKL/2 + R_H (anchored priors)",
                anchored.l_mim,
                0.5 * anchored.skl + anchored.r_h,
            ),
            IdentityCheck::equality(
                "f: L_MIM = R_H + prior KLs/4 + joint KLs/4",
                r.l_mim,
                r.r_h
                    + 0.25 * (r.kl_prior_z + r.kl_prior_x)
                    + 0.25 * (r.kl_enc_p_joint + r.kl_dec_q_joint),
            ),
            IdentityCheck::equality("g: H(M_S) = H(x) + H(z) - I(x;z)", r.h_ms, r.h_ms_x + r.h_ms_z - r.i_ms),
        ];
        Ok(IdentityReport { report: r, checks })
    }
}

/// Every exact quantity for one model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceReport {
    /// `KL(p(x|z)P(z) ‖ q(z|x)P(x))`.
    pub kl_dec_enc: f64,
    /// `KL(q(z|x)P(x) ‖ p(x|z)P(z))`, the joint form of the VAE loss.
    pub kl_enc_dec: f64,
    /// Half the sum of both directed KLs.
    pub skl: f64,
    pub jsd: f64,
    pub h_ms: f64,
    /// Mean entropy of the two anchored joints.
    pub r_h: f64,
    /// `H(M_S, q(z|x)q(x))`.
    pub h_ms_q: f64,
    /// `H(M_S, p(x|z)p(z))`.
    pub h_ms_p: f64,
    /// `H(M_S, M_θ)`.
    pub l_ce: f64,
    pub l_mim: f64,
    pub r_mim: f64,
    pub kl_ms_enc: f64,
    pub kl_ms_dec: f64,
    /// `KL(P(z) ‖ p(z))`.
    pub kl_prior_z: f64,
    /// `KL(P(x) ‖ q(x))`.
    pub kl_prior_x: f64,
    /// `KL(q(z|x)P(x) ‖ p(x|z)p(z))`.
    pub kl_enc_p_joint: f64,
    /// `KL(p(x|z)P(z) ‖ q(z|x)q(x))`.
    pub kl_dec_q_joint: f64,
    pub h_ms_x: f64,
    pub h_ms_z: f64,
    pub i_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CheckKind {
    Equality,
    Inequality,
}

/// Equalities carry `|lhs − rhs|`; inequalities carry the slack `rhs − lhs`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub kind: CheckKind,
    pub residual: f64,
}

pub const EQUALITY_TOL: f64 = 1e-10;
pub const SLACK_TOL: f64 = -1e-12;

impl IdentityCheck {
    fn equality(name: &'static str, lhs: f64, rhs: f64) -> Self {
        let residual = if lhs.is_infinite() && lhs == rhs { 0.0 } else { (lhs - rhs).abs() };
        Self {
            name,
            kind: CheckKind::Equality,
            residual,
        }
    }

    fn inequality(name: &'static str, slack: f64) -> Self {
        // ∞ − ∞ arises only when both sides diverge together.
        let slack = if slack.is_nan() { 0.0 } else { slack };
        Self {
            name,
            kind: CheckKind::Inequality,
            residual: slack,
        }
    }

    pub fn passed(&self) -> bool {
        match self.kind {
            CheckKind::Equality => self.residual <= EQUALITY_TOL,
            CheckKind::Inequality => self.residual >= SLACK_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub report: DivergenceReport,
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(IdentityCheck::passed)
    }
}
