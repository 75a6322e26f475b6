//! Layer geometries: norm, dual norm and the unit-ball LMO direction.
//!
//! For a ball of radius `r` centred at `X`, the linear minimization oracle
//! `argmin_{||Y - X|| <= r} <M, Y>` equals `X - r * lmo_direction(M)`, where
//! the direction maximises `<M, D>` over the unit ball and attains the dual
//! norm of `M`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Dense row-major-agnostic `f64` matrix used for every parameter block.
pub type Matrix = DMatrix<f64>;

/// Relative cutoff under which a singular value is treated as zero.
pub const SINGULAR_VALUE_CUTOFF: f64 = 1e-10;

/// Coefficients `(a, b, c)` of the Muon quintic `aX + b(XX^T)X + c(XX^T)^2 X`.
pub const MUON_QUINTIC: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

/// Convergent quintic used once the spectrum is close to one.
const POLISH_QUINTIC: (f64, f64, f64) = (15.0 / 8.0, -10.0 / 8.0, 3.0 / 8.0);

/// The Muon quintic is only applied while the bound on sigma_max stays below this.
const QUINTIC_SWITCH: f64 = 0.8;

pub const DEFAULT_NEWTON_SCHULZ_ITERS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    /// Largest singular value; dual is the nuclear norm.
    Spectral,
    /// Frobenius norm; self-dual.
    Euclidean,
    /// Entrywise max; dual is the entrywise l1 sum.
    MaxEntry,
}

impl NormKind {
    pub const ALL: [NormKind; 3] = [NormKind::Spectral, NormKind::Euclidean, NormKind::MaxEntry];

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Spectral => "spectral",
            NormKind::Euclidean => "euclidean",
            NormKind::MaxEntry => "max_entry",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spectral" => Ok(NormKind::Spectral),
            "euclidean" | "frobenius" => Ok(NormKind::Euclidean),
            "max_entry" | "maxentry" | "linf" => Ok(NormKind::MaxEntry),
            other => Err(Error::invalid(format!("unknown norm kind `{other}`"))),
        }
    }
}

pub fn ensure_finite(x: &Matrix) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("matrix has non-finite entries"))
    }
}

/// Frobenius inner product `<A, B> = tr(A^T B)`.
pub fn inner(a: &Matrix, b: &Matrix) -> f64 {
    a.dot(b)
}

pub fn euclidean_norm(x: &Matrix) -> f64 {
    x.norm()
}

/// Singular values in non-increasing order.
pub fn singular_values(x: &Matrix) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = x.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn norm(kind: NormKind, x: &Matrix) -> Result<f64> {
    ensure_finite(x)?;
    Ok(match kind {
        NormKind::Spectral => singular_values(x).first().copied().unwrap_or(0.0),
        NormKind::Euclidean => x.norm(),
        NormKind::MaxEntry => x.amax(),
    })
}

pub fn dual_norm(kind: NormKind, x: &Matrix) -> Result<f64> {
    ensure_finite(x)?;
    Ok(match kind {
        NormKind::Spectral => singular_values(x).iter().sum(),
        NormKind::Euclidean => x.norm(),
        NormKind::MaxEntry => x.iter().map(|v| v.abs()).sum(),
    })
}

/// Unit-ball maximiser `D` of `<M, D>`; the zero matrix maps to the zero direction.
pub fn lmo_direction(kind: NormKind, m: &Matrix) -> Result<Matrix> {
    ensure_finite(m)?;
    Ok(match kind {
        NormKind::Spectral => polar_factor_svd(m)?,
        NormKind::Euclidean => {
            let n = m.norm();
            if n == 0.0 {
                Matrix::zeros(m.nrows(), m.ncols())
            } else {
                m / n
            }
        }
        NormKind::MaxEntry => m.map(sign),
    })
}

/// `sign` with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Polar factor `U V^T` over the singular values above `1e-10 * sigma_max`.
///
/// The all-zero matrix maps to the zero matrix.
pub fn polar_factor_svd(m: &Matrix) -> Result<Matrix> {
    ensure_finite(m)?;
    let (rows, cols) = m.shape();
    if m.iter().all(|&v| v == 0.0) {
        return Ok(Matrix::zeros(rows, cols));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma_max = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = SINGULAR_VALUE_CUTOFF * sigma_max;

    let mut out = Matrix::zeros(rows, cols);
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            out += u.column(j) * v_t.row(j);
        }
    }
    Ok(out)
}

/// Approximate polar factor by polynomial iteration, no SVD.
///
/// `M` is first scaled by its Frobenius norm so every singular value lies in
/// `(0, 1]`. While an upper bound on the largest singular value of the iterate
/// is at most 0.8 the Muon quintic ([`MUON_QUINTIC`]) is applied; it inflates
/// small singular values quickly but does not converge to one. After that the
/// iterate is polished with `(15X - 10(XX^T)X + 3(XX^T)^2 X) / 8`, which
/// converges to the polar factor. The choice depends only on the current
/// iterate, so the output for `n` iterations is a prefix of the output for
/// `n + 1`.
pub fn polar_factor_newton_schulz(m: &Matrix, iters: usize) -> Result<Matrix> {
    ensure_finite(m)?;
    if iters == 0 {
        return Err(Error::invalid("newton-schulz needs at least one iteration"));
    }
    let fro = m.norm();
    if fro == 0.0 {
        return Ok(Matrix::zeros(m.nrows(), m.ncols()));
    }
    // Iterate on the wide orientation so the Gram matrix is the small one.
    let transposed = m.nrows() > m.ncols();
    let mut x = if transposed { m.transpose() } else { m.clone() } / fro;

    for _ in 0..iters {
        let gram = &x * x.transpose();
        let gram2 = &gram * &gram;
        let gram4_trace = (&gram2 * &gram2).trace().max(0.0);
        let sigma_max_bound = gram4_trace.powf(0.125);
        let (a, b, c) = if sigma_max_bound <= QUINTIC_SWITCH {
            MUON_QUINTIC
        } else {
            POLISH_QUINTIC
        };
        let poly = gram * b + gram2 * c;
        x = &x * a + poly * &x;
    }
    Ok(if transposed { x.transpose() } else { x })
}

/// Constant `rho` with `dual_norm(X) <= rho * ||X||_F` for every `rows x cols` matrix.
pub fn rho_bound(kind: NormKind, rows: usize, cols: usize) -> f64 {
    match kind {
        NormKind::Spectral => (rows.min(cols) as f64).sqrt(),
        NormKind::Euclidean => 1.0,
        NormKind::MaxEntry => ((rows * cols) as f64).sqrt(),
    }
}

/// Outcome of one family of checks in [`lmo_property_suite`].
#[derive(Clone, Debug)]
pub struct PropertyCheck {
    pub kind: NormKind,
    pub name: &'static str,
    pub trials: usize,
    /// Largest observed violation; `<= 0` means the property held everywhere.
    pub max_violation: f64,
}

impl PropertyCheck {
    pub fn passed(&self) -> bool {
        self.max_violation <= 0.0
    }
}

/// Runs the LMO sharpness, unit-norm, Hoelder and rho checks on random matrices.
///
/// `direction` is the LMO rule under test, normally [`lmo_direction`]; taking
/// it as a parameter lets callers check a substitute rule against the same
/// suite.
pub fn lmo_property_suite<R, F>(
    trials: usize,
    max_dim: usize,
    rng: &mut R,
    direction: F,
) -> Result<Vec<PropertyCheck>>
where
    R: rand::Rng + ?Sized,
    F: Fn(NormKind, &Matrix) -> Result<Matrix>,
{
    use rand_distr::{Distribution, StandardNormal};

    let max_dim = max_dim.max(1);
    let mut out = Vec::new();
    for kind in NormKind::ALL {
        let mut sharp = f64::NEG_INFINITY;
        let mut unit = f64::NEG_INFINITY;
        let mut holder = f64::NEG_INFINITY;
        let mut rho = f64::NEG_INFINITY;
        for _ in 0..trials {
            let rows = rng.random_range(1..=max_dim);
            let cols = rng.random_range(1..=max_dim);
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let m = Matrix::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(&mut *rng);
                scale * z
            });
            let y = Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng));

            let dual = dual_norm(kind, &m)?;
            let d = direction(kind, &m)?;
            sharp = sharp.max((inner(&m, &d) - dual).abs() - 1e-8 * (1.0 + dual));
            unit = unit.max(norm(kind, &d)? - (1.0 + 1e-9));

            let pairing = inner(&m, &y).abs();
            let bound = dual * norm(kind, &y)?;
            holder = holder.max(pairing - bound - 1e-12 * (1.0 + bound));

            let rb = rho_bound(kind, rows, cols) * euclidean_norm(&m);
            rho = rho.max(dual - rb - 1e-9 * (1.0 + rb));
        }
        for (name, v) in [
            ("lmo_sharpness", sharp),
            ("direction_unit_norm", unit),
            ("holder_pairing", holder),
            ("rho_validity", rho),
        ] {
            out.push(PropertyCheck {
                kind,
                name,
                trials,
                max_violation: v.max(0.0),
            });
        }
    }
    Ok(out)
}
