#![allow(dead_code)]

use irs_gbd::channel::{CMat, CVec, ChannelSet, ScenarioConfig};
use irs_gbd::conic::{hermitian_psd_rows, solve, AffineExpr, ComplexExpr, Cone, ConeProgram, ConicSettings, ConicStatus, Layout};
use irs_gbd::gbd::Instance;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn desk(seed: u64) -> ScenarioConfig {
    ScenarioConfig { seed, ..ScenarioConfig::desk() }
}

pub fn instance(cfg: &ScenarioConfig) -> Instance {
    Instance::from_config(cfg).expect("valid scenario")
}

/// Three elements, two BS antennas, two users at `γ = 2`. The two
/// effective channels are collinear whenever elements 1 and 2 (zero-based)
/// take different levels, so 4 of the 8 selections admit no design.
pub fn collinear_instance() -> Instance {
    let r = |v: f64| Complex64::new(v, 0.0);
    let f = CMat::from_row_slice(3, 2, &[r(1.0), r(0.0), r(1.0), r(1.0), r(-1.0), r(1.0)]);
    let h = vec![CVec::from_vec(vec![r(1.0), r(0.0), r(0.0)]), CVec::from_vec(vec![r(0.0), r(1.0), r(1.0)])];
    Instance::new(&ChannelSet { f, h }, 2, &[2.0, 2.0], &[1e-12, 1e-12]).expect("valid instance")
}

pub fn cgauss<R: Rng>(rng: &mut R, r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |_, _| {
        Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) / 2f64.sqrt()
    })
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Hermitian `d × d` variable stored as `d` diagonal reals followed by
/// `(re, im)` pairs of the strict upper triangle, row by row.
fn herm(base: usize, d: usize, i: usize, j: usize) -> ComplexExpr {
    if i == j {
        return ComplexExpr { re: AffineExpr::var(base + i), im: AffineExpr::default() };
    }
    let (a, b, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
    let pos = a * d - a * (a + 1) / 2 + (b - a - 1);
    ComplexExpr { re: AffineExpr::var(base + d + 2 * pos), im: AffineExpr::term(base + d + 2 * pos + 1, sign) }
}

/// `min Tr(S)` over `S, T` with `[[S, X, G], [Xᴴ, T, Wᴴ], [Gᴴ, W, I]] ⪰ 0`
/// and `Tr(T) ≤ tau`, for fixed `G, X, W`.
pub fn min_trace_s(g: &CMat, x: &CMat, w: &CMat, tau: f64) -> Option<f64> {
    let (n, m, k) = (g.nrows(), g.ncols(), w.ncols());
    let mut layout = Layout::default();
    let s = layout.add("s", n * n);
    let t = layout.add("t", k * k);
    let mut p = ConeProgram::new(layout);
    for i in 0..n {
        p.objective[s + i] = 1.0;
    }
    let d = n + k + m;
    let c = |z: Complex64| ComplexExpr::constant(z);
    let rows = hermitian_psd_rows(d, |i, j| {
        if j < n {
            herm(s, n, i, j)
        } else if j < n + k {
            if i < n {
                c(x[(i, j - n)])
            } else {
                herm(t, k, i - n, j - n)
            }
        } else if i < n {
            c(g[(i, j - n - k)])
        } else if i < n + k {
            c(w[(j - n - k, i - n)].conj())
        } else {
            c(Complex64::new((i == j) as u8 as f64, 0.0))
        }
    });
    p.push("lifting", Cone::Psd(2 * d), rows);
    let mut cap = AffineExpr::constant(tau);
    for i in 0..k {
        cap.add_term(t + i, -1.0);
    }
    p.push("cap", Cone::Nonneg, vec![cap]);
    let sol = solve(&p, &ConicSettings::default()).ok()?;
    (sol.status == ConicStatus::Optimal || sol.near_optimal).then_some(sol.primal_objective)
}

/// Nuclear norm via the eigenvalues of `EᴴE`.
pub fn nuclear_norm(e: &CMat) -> f64 {
    let gram = e.adjoint() * e;
    gram.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
