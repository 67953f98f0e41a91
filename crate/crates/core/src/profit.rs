//! Stationary distributions and exact mean profits.
//!
//! All mean profits are per game played, with a win worth +1 and a loss -1.
//! For the pattern `A^r B^s` four algebraically equivalent routes are
//! available:
//!
//! * `mu1` averages the payoff field `p_{m_i(x)} - q_{m_i(x)}` over the
//!   staged distributions `pi P_A^r P_B^v`, `v = 0..s`.
//! * `mu2` does the same through the joint law of players 1 and 3.
//! * `mu3` uses only one-site marginals of `pi P_A^u` and `pi P_A^r P_B^v`.
//! * `mu4` (only when `s = 1`) is a closed prefactor times the one-site
//!   marginal of `pi P_A^r`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ergodicity;
use crate::error::{invalid, Error, Result};
use crate::kernels::{check_ring, code_counts, Kernel, Params, Pattern, RowBuilder, StateIndex};

/// Largest ring for exact computations.
pub const MAX_EXACT_PLAYERS: usize = 18;
/// Largest ring the dense direct solver accepts.
pub const MAX_DIRECT_PLAYERS: usize = 12;
/// `Method::Auto` switches from the direct solver to power iteration above
/// this ring size.
pub const AUTO_DIRECT_PLAYERS: usize = 10;

/// Agreement required between formulas computing the same mean profit.
pub const FORMULA_TOLERANCE: f64 = 1e-10;
/// Required `||pi K - pi||_1` of every returned stationary vector.
pub const RESIDUAL_TOLERANCE: f64 = 1e-12;

const NEGATIVE_NOISE: f64 = 1e-10;

/// A probability vector over the `2^N` configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct Dist {
    n: usize,
    weights: Vec<f64>,
}

impl Dist {
    /// Validates a weight vector. Entries in `[-1e-16, 0)` are clamped to 0.
    pub fn new(n: usize, mut weights: Vec<f64>) -> Result<Self> {
        check_ring(n)?;
        if weights.len() != 1 << n {
            return Err(Error::DimensionMismatch { expected: 1 << n, actual: weights.len() });
        }
        for w in weights.iter_mut() {
            if !w.is_finite() || *w < -1e-16 {
                return Err(invalid(format!("weight {w} is not a probability")));
            }
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-13 {
            return Err(invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(Dist { n, weights })
    }

    pub(crate) fn from_raw(n: usize, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), 1 << n);
        Dist { n, weights }
    }

    pub fn uniform(n: usize) -> Result<Self> {
        check_ring(n)?;
        let size = 1usize << n;
        Ok(Dist { n, weights: vec![1.0 / size as f64; size] })
    }

    pub fn point_mass(x: StateIndex) -> Result<Self> {
        let mut weights = vec![0.0; 1 << x.n()];
        weights[x.index()] = 1.0;
        Ok(Dist { n: x.n(), weights })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, x: StateIndex) -> f64 {
        self.weights[x.index()]
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `(1/N) sum_k rho_k(self)` over the `N` rotations of the ring.
    pub fn rotation_average(&self) -> Dist {
        let n = self.n;
        let mut out = vec![0.0; self.weights.len()];
        for (x, &w) in self.weights.iter().enumerate() {
            let x = StateIndex::from_raw(x as u32, n);
            for k in 0..n {
                out[x.rotate(k).index()] += w / n as f64;
            }
        }
        Dist::from_raw(n, out)
    }

    pub fn l1_distance(&self, other: &Dist) -> f64 {
        l1(&self.weights, &other.weights)
    }

    /// `(P(x_site = 0), P(x_site = 1))` for a 1-based player index.
    pub fn marginal_1(&self, site: usize) -> Result<(f64, f64)> {
        if site == 0 || site > self.n {
            return Err(invalid(format!("player {site} outside 1..={}", self.n)));
        }
        let bit = 1usize << (site - 1);
        let mut m = [0.0; 2];
        for (x, &w) in self.weights.iter().enumerate() {
            m[usize::from(x & bit != 0)] += w;
        }
        Ok((m[0], m[1]))
    }

    /// Joint law of `(x_1, x_3)`.
    pub fn marginal_13(&self) -> Marginal13 {
        let mut values = [[0.0; 2]; 2];
        for (x, &w) in self.weights.iter().enumerate() {
            values[x & 1][(x >> 2) & 1] += w;
        }
        Marginal13 { values }
    }

    /// `sum_x d(x) (1/N) sum_i (p_{m_i(x)} - q_{m_i(x)})`.
    pub fn payoff_field_mean(&self, params: &Params) -> f64 {
        let pay = [params.payoff(0), params.payoff(1), params.payoff(2), params.payoff(3)];
        let nf = self.n as f64;
        self.weights
            .iter()
            .enumerate()
            .map(|(x, &w)| {
                let c = code_counts(x as u32, self.n);
                let field: f64 = (0..4).map(|m| f64::from(c[m]) * pay[m]).sum();
                w * field / nf
            })
            .sum()
    }

    fn argmax(&self) -> usize {
        self.weights
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &w)| if w > best.1 { (i, w) } else { best })
            .0
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Joint law of two sites; `values[w][z]` is the mass at `(w, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginal13 {
    pub values: [[f64; 2]; 2],
}

impl Marginal13 {
    pub fn get(&self, w: usize, z: usize) -> f64 {
        self.values[w][z]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().flatten().sum()
    }

    /// `sum_{w,z} values[w][z] (p_{2w+z} - q_{2w+z})`.
    pub fn payoff_sum(&self, params: &Params) -> f64 {
        let mut acc = 0.0;
        for w in 0..2 {
            for z in 0..2 {
                acc += self.values[w][z] * params.payoff(2 * w + z);
            }
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Power,
    Auto,
}

impl Method {
    fn resolve(self, n: usize) -> Method {
        match self {
            Method::Auto if n <= AUTO_DIRECT_PLAYERS => Method::Direct,
            Method::Auto => Method::Power,
            m => m,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Method::Direct),
            "power" => Ok(Method::Power),
            "auto" => Ok(Method::Auto),
            other => Err(invalid(format!("unknown solver method {other:?}"))),
        }
    }
}

/// Stopping rules for power iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerOptions {
    /// Stop once successive iterates are this close in L1.
    pub step_tolerance: f64,
    /// The two independent starts must agree this closely in L1.
    pub agreement: f64,
    /// Starts farther apart than this mean the limit is not unique.
    pub non_unique_gap: f64,
    pub max_iterations: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            step_tolerance: 1e-13,
            agreement: 1e-11,
            non_unique_gap: 1e-9,
            max_iterations: 10_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExactOptions {
    pub method: Option<Method>,
    pub power: PowerOptions,
}

impl ExactOptions {
    pub fn with_method(method: Method) -> Self {
        ExactOptions { method: Some(method), ..Default::default() }
    }

    fn method(&self) -> Method {
        self.method.unwrap_or(Method::Auto)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub method: Method,
    /// Power-iteration steps summed over both starts; 0 for the direct solve.
    pub iterations: u64,
    /// `||pi K - pi||_1` of the returned vector.
    pub residual: f64,
    /// L1 gap between the two power-iteration limits.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub start_gap: Option<f64>,
    /// Closed classes of the chain. Above 1 the reported profit is the
    /// common value over all of them.
    pub closed_classes: usize,
}

#[derive(Clone, Debug)]
pub struct Stationary {
    pub dist: Dist,
    pub diagnostics: SolverDiagnostics,
}

pub fn stationary(kernel: &Kernel, method: Method) -> Result<Stationary> {
    stationary_with(kernel, &ExactOptions::with_method(method))
}

pub fn stationary_with(kernel: &Kernel, opts: &ExactOptions) -> Result<Stationary> {
    let n = kernel.n();
    if n > MAX_EXACT_PLAYERS {
        return Err(invalid(format!("exact computations need N <= {MAX_EXACT_PLAYERS}, got {n}")));
    }
    match opts.method().resolve(n) {
        Method::Direct => stationary_direct(kernel),
        _ => stationary_power(kernel, &opts.power),
    }
}

fn residual(kernel: &Kernel, d: &[f64]) -> f64 {
    let mut buf = d.to_vec();
    let mut scratch = vec![0.0; d.len()];
    kernel.apply_in_place(&mut buf, &mut scratch);
    l1(&buf, d)
}

fn stationary_direct(kernel: &Kernel) -> Result<Stationary> {
    let mut classes = stationary_classes(kernel)?;
    if classes.len() != 1 {
        return Err(Error::NonUnique(format!("support graph has {} closed classes", classes.len())));
    }
    Ok(classes.pop().expect("one class"))
}

/// The stationary law carried by each closed class of `kernel`, ordered by
/// the smallest state in the class. Closed classes are read off the support
/// graph, so this needs `N <= 12`.
pub fn stationary_classes(kernel: &Kernel) -> Result<Vec<Stationary>> {
    let n = kernel.n();
    if n > MAX_DIRECT_PLAYERS {
        return Err(invalid(format!("direct solver needs N <= {MAX_DIRECT_PLAYERS}, got {n}")));
    }
    let support = ergodicity::SupportAnalysis::of_kernel(kernel)?;
    let count = support.closed_classes();
    support
        .class_states()
        .iter()
        .map(|states| {
            let mut st = solve_class(kernel, states)?;
            st.diagnostics.closed_classes = count;
            Ok(st)
        })
        .collect()
}

/// Dense LU solve of the balance equations restricted to one closed class.
fn solve_class(kernel: &Kernel, states: &[u32]) -> Result<Stationary> {
    let n = kernel.n();
    let size = kernel.num_states();
    let m = states.len();
    let mut pos = vec![usize::MAX; size];
    for (k, &x) in states.iter().enumerate() {
        pos[x as usize] = k;
    }
    // Column k of (I - K)^T holds row k of I - K; rows never leave the class.
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut rows = RowBuilder::new(kernel);
    for (k, &x) in states.iter().enumerate() {
        for &(y, p) in rows.row(x) {
            a[(pos[y as usize], k)] -= p;
        }
    }
    for k in 0..m {
        a[(m - 1, k)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;
    let lu = a.clone().lu();
    let mut sol = lu.solve(&rhs).ok_or_else(|| Error::Solver("singular balance equations".into()))?;
    for _ in 0..2 {
        let r = &rhs - &a * &sol;
        if let Some(delta) = lu.solve(&r) {
            sol += delta;
        }
    }

    let mut weights = vec![0.0; size];
    for (k, &x) in states.iter().enumerate() {
        weights[x as usize] = sol[k];
    }
    clean(&mut weights)?;
    let mut res = residual(kernel, &weights);
    let mut polish = 0;
    // A few forward steps only contract the error.
    while res > RESIDUAL_TOLERANCE && polish < 1000 {
        let mut scratch = vec![0.0; size];
        kernel.apply_in_place(&mut weights, &mut scratch);
        normalize(&mut weights);
        res = residual(kernel, &weights);
        polish += 1;
    }
    if res > RESIDUAL_TOLERANCE {
        return Err(Error::Solver(format!("direct solve residual {res:e} too large")));
    }
    Ok(Stationary {
        dist: Dist::from_raw(n, weights),
        diagnostics: SolverDiagnostics {
            method: Method::Direct,
            iterations: polish,
            residual: res,
            start_gap: None,
            closed_classes: 1,
        },
    })
}

fn clean(weights: &mut [f64]) -> Result<()> {
    for w in weights.iter_mut() {
        if !w.is_finite() || *w < -NEGATIVE_NOISE {
            return Err(Error::Solver(format!("solution has invalid weight {w:e}")));
        }
        if *w < 0.0 {
            *w = 0.0;
        }
    }
    normalize(weights);
    Ok(())
}

fn normalize(weights: &mut [f64]) {
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
}

/// Iterates `d <- d K` until successive iterates differ by less than
/// `tolerance` in L1, starting from `d`. Returns the number of steps taken.
fn iterate(
    kernel: &Kernel,
    d: &mut Vec<f64>,
    tolerance: f64,
    budget: &mut u64,
) -> Result<u64> {
    let mut scratch = vec![0.0; d.len()];
    let mut prev = d.clone();
    let mut steps = 0;
    loop {
        if *budget == 0 {
            return Err(Error::NoConvergence { iterations: steps, last_step: l1(d, &prev) });
        }
        prev.copy_from_slice(d);
        kernel.apply_in_place(d, &mut scratch);
        normalize(d);
        *budget -= 1;
        steps += 1;
        if l1(d, &prev) < tolerance {
            return Ok(steps);
        }
    }
}

fn stationary_power(kernel: &Kernel, opts: &PowerOptions) -> Result<Stationary> {
    let n = kernel.n();
    let size = kernel.num_states();
    let mut budget = opts.max_iterations;
    let mut tol = opts.step_tolerance;

    let mut first = Dist::uniform(n)?.weights;
    let mut iterations = iterate(kernel, &mut first, tol, &mut budget)?;
    // The heaviest state of the first limit is recurrent.
    let start = Dist::from_raw(n, first.clone()).argmax();
    let mut second = vec![0.0; size];
    second[start] = 1.0;
    iterations += iterate(kernel, &mut second, tol, &mut budget)?;

    loop {
        let gap = l1(&first, &second);
        if gap <= opts.agreement {
            let res = residual(kernel, &first);
            return Ok(Stationary {
                dist: Dist::from_raw(n, first),
                diagnostics: SolverDiagnostics {
                    method: Method::Power,
                    iterations,
                    residual: res,
                    start_gap: Some(gap),
                    closed_classes: 1,
                },
            });
        }
        if gap >= opts.non_unique_gap {
            return Err(Error::NonUnique(format!(
                "power iteration from two starts converged {gap:e} apart in L1"
            )));
        }
        tol /= 10.0;
        if tol < 1e-18 {
            return Err(Error::NoConvergence { iterations, last_step: gap });
        }
        iterations += iterate(kernel, &mut first, tol, &mut budget)?;
        iterations += iterate(kernel, &mut second, tol, &mut budget)?;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formula {
    Mu1,
    Mu2,
    Mu3,
    Mu4,
    All,
}

impl Formula {
    pub fn name(&self) -> &'static str {
        match self {
            Formula::Mu1 => "mu1",
            Formula::Mu2 => "mu2",
            Formula::Mu3 => "mu3",
            Formula::Mu4 => "mu4",
            Formula::All => "all",
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu1" => Ok(Formula::Mu1),
            "mu2" => Ok(Formula::Mu2),
            "mu3" => Ok(Formula::Mu3),
            "mu4" => Ok(Formula::Mu4),
            "all" => Ok(Formula::All),
            other => Err(invalid(format!("unknown formula {other:?}"))),
        }
    }
}

/// An exact mean profit with every route that computed it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfitReport {
    pub mu: f64,
    pub per_formula: BTreeMap<String, f64>,
    pub diagnostics: SolverDiagnostics,
}

impl ProfitReport {
    fn build(values: Vec<(&'static str, f64)>, diagnostics: SolverDiagnostics) -> Result<Self> {
        let (ref_name, reference) = values[0];
        for &(name, value) in &values[1..] {
            // NaN never counts as agreement.
            let close = (value - reference).abs() <= FORMULA_TOLERANCE;
            if !close {
                return Err(Error::FormulaDisagreement {
                    name,
                    value,
                    reference_name: ref_name,
                    reference,
                });
            }
        }
        Ok(ProfitReport {
            mu: reference,
            per_formula: values.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            diagnostics,
        })
    }

    pub fn formula(&self, name: &str) -> Option<f64> {
        self.per_formula.get(name).copied()
    }
}

fn check_exact_ring(n: usize) -> Result<()> {
    check_ring(n)?;
    if n > MAX_EXACT_PLAYERS {
        return Err(invalid(format!("exact computations need N <= {MAX_EXACT_PLAYERS}, got {n}")));
    }
    Ok(())
}

/// Mean profit of game B played forever.
pub fn mu_b(n: usize, params: Params) -> Result<ProfitReport> {
    mu_b_with(n, params, &ExactOptions::default())
}

pub fn mu_b_with(n: usize, params: Params, opts: &ExactOptions) -> Result<ProfitReport> {
    check_exact_ring(n)?;
    over_classes(&Kernel::game_b(n, params)?, opts, |st| {
        let mu1 = st.dist.payoff_field_mean(&params);
        let mu2 = st.dist.marginal_13().payoff_sum(&params);
        ProfitReport::build(vec![("mu1", mu1), ("mu2", mu2)], st.diagnostics.clone())
    })
}

/// Evaluates `profit` on the stationary law of `kernel`. When that law is
/// not unique (and `N <= 12`), evaluates it on every closed class instead
/// and succeeds only if all classes give the same mean profit, which is then
/// the long-run profit from any start.
fn over_classes<F>(kernel: &Kernel, opts: &ExactOptions, profit: F) -> Result<ProfitReport>
where
    F: Fn(&Stationary) -> Result<ProfitReport>,
{
    match stationary_with(kernel, opts) {
        Ok(st) => profit(&st),
        Err(Error::NonUnique(msg)) if kernel.n() <= MAX_DIRECT_PLAYERS => {
            // Marginal formulas assume rotation invariance; averaging a class
            // law over rotations keeps it stationary and keeps the profit.
            let reports = stationary_classes(kernel)?
                .into_iter()
                .map(|mut st| {
                    st.dist = st.dist.rotation_average();
                    profit(&st)
                })
                .collect::<Result<Vec<_>>>()?;
            let first = reports[0].mu;
            if reports.iter().all(|r| (r.mu - first).abs() <= FORMULA_TOLERANCE) {
                Ok(reports.into_iter().next().expect("at least one class"))
            } else {
                let values: Vec<String> = reports.iter().map(|r| format!("{:e}", r.mu)).collect();
                Err(Error::NonUnique(format!(
                    "{msg}; mean profit differs across closed classes: {}",
                    values.join(", ")
                )))
            }
        }
        Err(e) => Err(e),
    }
}

/// Mean profit of the random mixture `gamma A + (1 - gamma) B`, computed as
/// game B at the mapped biases `p_m(gamma)`.
pub fn mu_mixed(n: usize, params: Params, gamma: f64) -> Result<ProfitReport> {
    mu_mixed_with(n, params, gamma, &ExactOptions::default())
}

pub fn mu_mixed_with(n: usize, params: Params, gamma: f64, opts: &ExactOptions) -> Result<ProfitReport> {
    check_exact_ring(n)?;
    let mapped = params.mixed(gamma)?;
    over_classes(&Kernel::game_b(n, mapped)?, opts, |st| {
        let mu1 = st.dist.payoff_field_mean(&mapped);
        let m13 = st.dist.marginal_13();
        let mu2 = m13.payoff_sum(&mapped);
        // p_m(gamma) - q_m(gamma) = (1 - gamma)(p_m - q_m)
        let scaled = (1.0 - gamma) * m13.payoff_sum(&params);
        ProfitReport::build(vec![("mu1", mu1), ("mu2", mu2), ("scaled", scaled)], st.diagnostics.clone())
    })
}

/// The distributions seen at each phase of one period of `A^r B^s`, started
/// from the stationary law of `P_A^r P_B^s`.
#[derive(Clone, Debug)]
pub struct PatternStages {
    /// `pi P_A^u` for `u = 0..=r`.
    pub after_a: Vec<Dist>,
    /// `pi P_A^r P_B^v` for `v = 0..s`.
    pub after_b: Vec<Dist>,
    pub diagnostics: SolverDiagnostics,
}

pub fn pattern_stages(n: usize, params: Params, pattern: Pattern, opts: &ExactOptions) -> Result<PatternStages> {
    check_exact_ring(n)?;
    let st = stationary_with(&Kernel::pattern(n, params, pattern)?, opts)?;
    stages_from(n, params, pattern, &st)
}

fn stages_from(n: usize, params: Params, pattern: Pattern, st: &Stationary) -> Result<PatternStages> {
    let a = Kernel::game_a(n)?;
    let b = Kernel::game_b(n, params)?;
    let mut after_a = vec![st.dist.clone()];
    for _ in 0..pattern.r() {
        let next = a.apply(after_a.last().unwrap())?;
        after_a.push(next);
    }
    let mut after_b = vec![after_a.last().unwrap().clone()];
    for _ in 1..pattern.s() {
        let next = b.apply(after_b.last().unwrap())?;
        after_b.push(next);
    }
    Ok(PatternStages { after_a, after_b, diagnostics: st.diagnostics.clone() })
}

fn one_site_bias(d: &Dist) -> f64 {
    let (zero, one) = d.marginal_1(1).expect("site 1 always exists");
    one - zero
}

/// `N [1 - (1 - 1/N)^{r+1}] / ((r + 1)(1 - 1/N)^r)`.
pub fn mu4_prefactor(n: usize, r: u32) -> f64 {
    let nf = n as f64;
    let keep = 1.0 - 1.0 / nf;
    let r = r as i32;
    nf * (1.0 - keep.powi(r + 1)) / (f64::from(r + 1) * keep.powi(r))
}

/// Mean profit of the pattern `A^r B^s` by the requested formula(s).
pub fn mu_pattern(n: usize, params: Params, pattern: Pattern, formula: Formula) -> Result<ProfitReport> {
    mu_pattern_with(n, params, pattern, formula, &ExactOptions::default())
}

pub fn mu_pattern_with(
    n: usize,
    params: Params,
    pattern: Pattern,
    formula: Formula,
    opts: &ExactOptions,
) -> Result<ProfitReport> {
    if formula == Formula::Mu4 && pattern.s() != 1 {
        return Err(invalid(format!("formula mu4 needs s = 1, pattern is ({pattern})")));
    }
    check_exact_ring(n)?;
    over_classes(&Kernel::pattern(n, params, pattern)?, opts, |st| {
        pattern_profit(&stages_from(n, params, pattern, st)?, n, params, pattern, formula)
    })
}

fn pattern_profit(stages: &PatternStages, n: usize, params: Params, pattern: Pattern, formula: Formula) -> Result<ProfitReport> {
    let period = f64::from(pattern.period());
    let wanted = |f: Formula| formula == f || formula == Formula::All;

    let mut values = Vec::new();
    if wanted(Formula::Mu1) {
        let sum: f64 = stages.after_b.iter().map(|d| d.payoff_field_mean(&params)).sum();
        values.push(("mu1", sum / period));
    }
    if wanted(Formula::Mu2) {
        let sum: f64 = stages.after_b.iter().map(|d| d.marginal_13().payoff_sum(&params)).sum();
        values.push(("mu2", sum / period));
    }
    if wanted(Formula::Mu3) {
        let r = pattern.r() as usize;
        let a_part: f64 = stages.after_a[..r].iter().map(one_site_bias).sum();
        let b_part: f64 = stages.after_b.iter().map(one_site_bias).sum();
        values.push(("mu3", (a_part + b_part) / period));
    }
    if pattern.s() == 1 && wanted(Formula::Mu4) {
        let bias = one_site_bias(stages.after_a.last().unwrap());
        values.push(("mu4", mu4_prefactor(n, pattern.r()) * bias));
    }
    ProfitReport::build(values, stages.diagnostics.clone())
}

/// `(p0, p1, p2, p3) -> (q3, q2, q1, q0)`; mean profits change sign under it.
pub fn lambda_map(params: Params) -> Params {
    params.lambda()
}

/// Closed form of the pattern `[r, 1]` mean profit when `p0 = 1`,
/// `p1 = p2` and `p3 = 0`:
/// `2(2 p1 - 1)/(r + 1) * (1 + (1 - 1/N)^r / (N [1 - (1 - 1/N)^{r+1}]))^{-1} * pi13(0, 1)`
/// where `pi13` is the joint law of players 1 and 3 under `pi P_A^r`.
pub fn mu_r1_closed_form(n: usize, params: Params, r: u32) -> Result<f64> {
    mu_r1_closed_form_with(n, params, r, &ExactOptions::default())
}

pub fn mu_r1_closed_form_with(n: usize, params: Params, r: u32, opts: &ExactOptions) -> Result<f64> {
    let p = params.as_array();
    if p[0] != 1.0 || p[1] != p[2] || p[3] != 0.0 {
        return Err(invalid(format!("closed form needs p0 = 1, p1 = p2, p3 = 0; got {params}")));
    }
    let pattern = Pattern::new(r, 1)?;
    let stages = pattern_stages(n, params, pattern, opts)?;
    let pi13 = stages.after_a.last().unwrap().marginal_13();
    let nf = n as f64;
    let keep = 1.0 - 1.0 / nf;
    let ri = r as i32;
    let correction = keep.powi(ri) / (nf * (1.0 - keep.powi(ri + 1)));
    Ok(2.0 * (2.0 * p[1] - 1.0) / f64::from(r + 1) / (1.0 + correction) * pi13.get(0, 1))
}
