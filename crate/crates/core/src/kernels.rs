//! State encoding and the one-step operators of games A and B on a ring of
//! `N` players.
//!
//! Player `i` (1-based) lives in bit `i - 1` of a [`StateIndex`]. Bit value 1
//! means the player won their most recent game. Neighbors wrap around the
//! ring: player 0 is player `N` and player `N + 1` is player 1.
//!
//! Kernels are never stored as matrices. A [`Kernel`] is a recipe for
//! generating rows on demand and for pushing a distribution forward one
//! (possibly composite) step.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::profit::Dist;

/// Smallest ring the model is defined on.
pub const MIN_PLAYERS: usize = 3;
/// Largest ring a [`StateIndex`] can encode.
pub const MAX_PLAYERS: usize = 30;

/// Below this many states a kernel step runs on the calling thread.
const PARALLEL_THRESHOLD: usize = 1 << 12;
const CHUNK: usize = 1 << 10;

/// The coin biases `(p0, p1, p2, p3)` of game B. `p_m` is the chance of heads
/// when the neighbor code is `m`; `q_m = 1 - p_m` is always derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Params([f64; 4]);

impl Params {
    pub fn new(p0: f64, p1: f64, p2: f64, p3: f64) -> Result<Self> {
        Self::from_array([p0, p1, p2, p3])
    }

    pub fn from_array(p: [f64; 4]) -> Result<Self> {
        for (m, &v) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("p{m} = {v} is not a probability in [0, 1]")));
            }
        }
        Ok(Params(p))
    }

    /// Game A: every coin is fair.
    pub const fn fair() -> Self {
        Params([0.5; 4])
    }

    #[inline]
    pub fn p(&self, m: usize) -> f64 {
        self.0[m]
    }

    #[inline]
    pub fn q(&self, m: usize) -> f64 {
        1.0 - self.0[m]
    }

    /// Expected payoff `p_m - q_m` of one play with neighbor code `m`.
    #[inline]
    pub fn payoff(&self, m: usize) -> f64 {
        self.p(m) - self.q(m)
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }

    pub fn is_fair(&self) -> bool {
        self.0 == [0.5; 4]
    }

    /// The coupling map `(p0, p1, p2, p3) -> (q3, q2, q1, q0)`.
    pub fn lambda(&self) -> Params {
        Params([self.q(3), self.q(2), self.q(1), self.q(0)])
    }

    /// Biases of the random mixture `gamma A + (1 - gamma) B` seen as a single
    /// game B: `p_m(gamma) = gamma / 2 + (1 - gamma) p_m`.
    pub fn mixed(&self, gamma: f64) -> Result<Params> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid(format!("mixing weight gamma = {gamma} must lie in (0, 1)")));
        }
        let mut out = [0.0; 4];
        for (m, o) in out.iter_mut().enumerate() {
            *o = (gamma * 0.5 + (1.0 - gamma) * self.0[m]).clamp(0.0, 1.0);
        }
        Ok(Params(out))
    }
}

impl TryFrom<[f64; 4]> for Params {
    type Error = Error;

    fn try_from(p: [f64; 4]) -> Result<Self> {
        Params::from_array(p)
    }
}

impl From<Params> for [f64; 4] {
    fn from(p: Params) -> Self {
        p.0
    }
}

impl FromStr for Params {
    type Err = Error;

    /// Parses `p0,p1,p2,p3`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(invalid(format!("expected four comma-separated probabilities, got {s:?}")));
        }
        let mut p = [0.0; 4];
        for (slot, part) in p.iter_mut().zip(&parts) {
            *slot = part
                .parse::<f64>()
                .map_err(|e| invalid(format!("bad probability {part:?}: {e}")))?;
        }
        Params::from_array(p)
    }
}

impl fmt::Display for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "{a},{b},{c},{d}")
    }
}

/// The periodic schedule `A^r B^s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pattern {
    r: u32,
    s: u32,
}

impl Pattern {
    pub fn new(r: u32, s: u32) -> Result<Self> {
        if r == 0 || s == 0 {
            return Err(invalid(format!("pattern ({r},{s}) needs r >= 1 and s >= 1")));
        }
        Ok(Pattern { r, s })
    }

    pub fn r(&self) -> u32 {
        self.r
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn period(&self) -> u32 {
        self.r + self.s
    }

    /// Fraction of plays that are game A.
    pub fn gamma(&self) -> f64 {
        f64::from(self.r) / f64::from(self.r + self.s)
    }

    /// Whether turn `t` (0-based, counted from the start of a period) is a
    /// game-A play.
    #[inline]
    pub fn is_a_turn(&self, t: u64) -> bool {
        t % u64::from(self.period()) < u64::from(self.r)
    }
}

impl FromStr for Pattern {
    type Err = Error;

    /// Parses `r,s`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| invalid(format!("expected pattern as r,s, got {s:?}")))?;
        let r = a.trim().parse().map_err(|e| invalid(format!("bad r {a:?}: {e}")))?;
        let s = b.trim().parse().map_err(|e| invalid(format!("bad s {b:?}: {e}")))?;
        Pattern::new(r, s)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.r, self.s)
    }
}

pub(crate) fn check_ring(n: usize) -> Result<()> {
    if !(MIN_PLAYERS..=MAX_PLAYERS).contains(&n) {
        return Err(invalid(format!(
            "ring size N = {n} outside [{MIN_PLAYERS}, {MAX_PLAYERS}]"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn state_mask(n: usize) -> u32 {
    if n >= 32 {
        u32::MAX
    } else {
        (1u32 << n) - 1
    }
}

/// Bit `k` of the result holds the left neighbor (bit `k - 1`, cyclic).
#[inline]
pub(crate) fn left_neighbors(bits: u32, n: usize) -> u32 {
    ((bits << 1) | (bits >> (n - 1))) & state_mask(n)
}

/// Bit `k` of the result holds the right neighbor (bit `k + 1`, cyclic).
#[inline]
pub(crate) fn right_neighbors(bits: u32, n: usize) -> u32 {
    (bits >> 1) | ((bits & 1) << (n - 1))
}

/// Number of sites carrying each (own status, neighbor code) pair, indexed
/// `4 * x_i + m_i`.
#[inline]
pub(crate) fn site_categories(bits: u32, n: usize) -> [u32; 8] {
    let mask = state_mask(n);
    let l = left_neighbors(bits, n);
    let r = right_neighbors(bits, n);
    let mut out = [0u32; 8];
    for (c, slot) in out.iter_mut().enumerate() {
        let own = if c & 4 != 0 { bits } else { !bits };
        let lm = if c & 2 != 0 { l } else { !l };
        let rm = if c & 1 != 0 { r } else { !r };
        *slot = (own & lm & rm & mask).count_ones();
    }
    out
}

/// Number of sites with each neighbor code `m`.
#[inline]
pub(crate) fn code_counts(bits: u32, n: usize) -> [u32; 4] {
    let c = site_categories(bits, n);
    [c[0] + c[4], c[1] + c[5], c[2] + c[6], c[3] + c[7]]
}

/// A configuration of win/loss statuses on a ring of `n` players.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateIndex {
    bits: u32,
    n: u8,
}

impl StateIndex {
    pub fn new(bits: u32, n: usize) -> Result<Self> {
        check_ring(n)?;
        if bits & !state_mask(n) != 0 {
            return Err(invalid(format!("state {bits:#b} has bits beyond N = {n}")));
        }
        Ok(StateIndex { bits, n: n as u8 })
    }

    #[inline]
    pub(crate) fn from_raw(bits: u32, n: usize) -> Self {
        debug_assert!(bits & !state_mask(n) == 0);
        StateIndex { bits, n: n as u8 }
    }

    /// Builds a state from `x_1, ..., x_N`.
    pub fn from_players(players: &[u8]) -> Result<Self> {
        let mut bits = 0u32;
        for (k, &x) in players.iter().enumerate() {
            match x {
                0 => {}
                1 => bits |= 1 << k,
                other => return Err(invalid(format!("player status {other} is not 0 or 1"))),
            }
        }
        StateIndex::new(bits, players.len())
    }

    pub fn zeros(n: usize) -> Result<Self> {
        StateIndex::new(0, n)
    }

    pub fn ones(n: usize) -> Result<Self> {
        check_ring(n)?;
        StateIndex::new(state_mask(n), n)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }

    pub fn index(&self) -> usize {
        self.bits as usize
    }

    fn check_player(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.n() {
            return Err(invalid(format!("player {i} outside 1..={}", self.n)));
        }
        Ok(())
    }

    /// Status `x_i` of player `i` (1-based).
    pub fn player(&self, i: usize) -> Result<u8> {
        self.check_player(i)?;
        Ok(((self.bits >> (i - 1)) & 1) as u8)
    }

    /// `m_i(x) = 2 x_{i-1} + x_{i+1}` with cyclic boundary.
    pub fn neighbor_code(&self, i: usize) -> Result<u8> {
        self.check_player(i)?;
        let n = self.n();
        let k = i - 1;
        let left = (self.bits >> ((k + n - 1) % n)) & 1;
        let right = (self.bits >> ((k + 1) % n)) & 1;
        Ok((2 * left + right) as u8)
    }

    /// `x^i`: the state with player `i`'s status toggled.
    pub fn flip(&self, i: usize) -> Result<Self> {
        self.check_player(i)?;
        Ok(StateIndex { bits: self.bits ^ (1 << (i - 1)), n: self.n })
    }

    /// `x_sigma` for the rotation `sigma(i) = i + k`: new player `i` carries
    /// the old status of player `i + k`.
    pub fn rotate(&self, k: usize) -> Self {
        let n = self.n();
        let k = k % n;
        if k == 0 {
            return *self;
        }
        let bits = ((self.bits >> k) | (self.bits << (n - k))) & state_mask(n);
        StateIndex { bits, n: self.n }
    }

    /// `x_sigma` for the order-reversing permutation `sigma(i) = N + 1 - i`.
    pub fn reflect(&self) -> Self {
        let n = self.n();
        let bits = self.bits.reverse_bits() >> (32 - n);
        StateIndex { bits, n: self.n }
    }
}

impl fmt::Display for StateIndex {
    /// Player 1 first, e.g. `0110` for `x = (0, 1, 1, 0)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.n() {
            f.write_str(if (self.bits >> k) & 1 == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for StateIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let players = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(invalid(format!("unexpected character {other:?} in state {s:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        StateIndex::from_players(&players)
    }
}

/// Probability that a site ends in status `b` given neighbor code `m`,
/// indexed `4 * b + m`: `q_m` for `b = 0`, `p_m` for `b = 1`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SiteWeights([f64; 8]);

impl SiteWeights {
    pub(crate) fn new(params: &Params) -> Self {
        let mut w = [0.0; 8];
        for m in 0..4 {
            w[m] = params.q(m);
            w[4 + m] = params.p(m);
        }
        SiteWeights(w)
    }

    #[inline]
    pub(crate) fn get(&self, category: usize) -> f64 {
        self.0[category]
    }

    /// `N * P(x, x)`. Terms are grouped by neighbor code, with codes 1 and 2
    /// added as a pair, so the result is exactly invariant under rotations
    /// and, when `p1 == p2`, reflections.
    #[inline]
    pub(crate) fn stay_weight(&self, bits: u32, n: usize) -> f64 {
        let c = site_categories(bits, n);
        let t = |m: usize| f64::from(c[m]) * self.0[m] + f64::from(c[4 + m]) * self.0[4 + m];
        (t(0) + (t(1) + t(2))) + t(3)
    }
}

fn step_row(n: usize, w: &SiteWeights, bits: u32, mut emit: impl FnMut(u32, f64)) {
    let nf = n as f64;
    let stay = w.stay_weight(bits, n) / nf;
    if stay > 0.0 {
        emit(bits, stay);
    }
    let l = left_neighbors(bits, n);
    let r = right_neighbors(bits, n);
    for k in 0..n {
        let m = (2 * ((l >> k) & 1) + ((r >> k) & 1)) as usize;
        let to = 1 - ((bits >> k) & 1) as usize;
        let pr = w.get(4 * to + m) / nf;
        if pr > 0.0 {
            emit(bits ^ (1 << k), pr);
        }
    }
}

/// Row `P_B(x, .)`: the diagonal entry first, then flips of players
/// `1..=N` in order. Zero entries are omitted.
pub fn row_b(n: usize, params: &Params, x: StateIndex) -> Result<Vec<(StateIndex, f64)>> {
    check_ring(n)?;
    if x.n() != n {
        return Err(invalid(format!("state has N = {}, kernel has N = {n}", x.n())));
    }
    let w = SiteWeights::new(params);
    let mut out = Vec::with_capacity(n + 1);
    step_row(n, &w, x.bits(), |b, p| out.push((StateIndex::from_raw(b, n), p)));
    Ok(out)
}

/// Row `P_A(x, .)`: `1/2` on the diagonal and `1/(2N)` per flip.
pub fn row_a(n: usize, x: StateIndex) -> Result<Vec<(StateIndex, f64)>> {
    row_b(n, &Params::fair(), x)
}

/// Pushes `src` forward one step of game B with the given weights:
/// `dst[y] = (1/N) sum_i w_i(y) (src[y] + src[y^i])`, where `w_i(y)` is the
/// chance that player `i` ends with status `y_i`.
pub(crate) fn step_into(n: usize, w: &SiteWeights, src: &[f64], dst: &mut [f64]) {
    let nf = n as f64;
    let kernel = |y: usize| -> f64 {
        let bits = y as u32;
        let l = left_neighbors(bits, n);
        let r = right_neighbors(bits, n);
        let own = src[y];
        let mut acc = 0.0;
        for k in 0..n {
            let cat = 4 * ((bits >> k) & 1) + 2 * ((l >> k) & 1) + ((r >> k) & 1);
            acc += w.get(cat as usize) * (own + src[y ^ (1 << k)]);
        }
        acc / nf
    };
    if dst.len() < PARALLEL_THRESHOLD {
        for (y, out) in dst.iter_mut().enumerate() {
            *out = kernel(y);
        }
    } else {
        dst.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (j, out) in chunk.iter_mut().enumerate() {
                *out = kernel(base + j);
            }
        });
    }
}

/// A one-step transition operator on `{0,1}^N`.
#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    GameA { n: usize },
    GameB { n: usize, params: Params },
    /// Product of the factors taken left to right, each repeated by its
    /// multiplicity.
    Composition { n: usize, factors: Vec<(Kernel, usize)> },
}

impl Kernel {
    pub fn game_a(n: usize) -> Result<Self> {
        check_ring(n)?;
        Ok(Kernel::GameA { n })
    }

    pub fn game_b(n: usize, params: Params) -> Result<Self> {
        check_ring(n)?;
        Ok(Kernel::GameB { n, params })
    }

    pub fn compose(factors: Vec<(Kernel, usize)>) -> Result<Self> {
        let n = factors
            .first()
            .map(|(k, _)| k.n())
            .ok_or_else(|| invalid("composition needs at least one factor"))?;
        if let Some((k, _)) = factors.iter().find(|(k, _)| k.n() != n) {
            return Err(invalid(format!("composition mixes N = {n} with N = {}", k.n())));
        }
        if factors.iter().all(|&(_, m)| m == 0) {
            return Err(invalid("composition has no factor with positive multiplicity"));
        }
        Ok(Kernel::Composition { n, factors })
    }

    /// `P_A^r P_B^s`.
    pub fn pattern(n: usize, params: Params, pattern: Pattern) -> Result<Self> {
        Kernel::compose(vec![
            (Kernel::game_a(n)?, pattern.r() as usize),
            (Kernel::game_b(n, params)?, pattern.s() as usize),
        ])
    }

    /// The `which`-th cyclic permutation of `P_A^r P_B^s` (1-based): the
    /// product of the period's factors starting at factor `which`, so that
    /// `which = 1` is `P_A^{r-1} P_B^s P_A` and `which = r + s` is
    /// `P_A^r P_B^s` itself.
    pub fn cyclic_permutation(n: usize, params: Params, pattern: Pattern, which: usize) -> Result<Self> {
        let period = pattern.period() as usize;
        if which == 0 || which > period {
            return Err(invalid(format!("cyclic index {which} outside 1..={period}")));
        }
        let a = Kernel::game_a(n)?;
        let b = Kernel::game_b(n, params)?;
        let r = pattern.r() as usize;
        let factors = (0..period)
            .map(|k| (which + k) % period)
            .map(|j| if j < r { (a.clone(), 1) } else { (b.clone(), 1) })
            .collect();
        Kernel::compose(factors)
    }

    pub fn n(&self) -> usize {
        match self {
            Kernel::GameA { n } | Kernel::GameB { n, .. } | Kernel::Composition { n, .. } => *n,
        }
    }

    pub fn num_states(&self) -> usize {
        1usize << self.n()
    }

    /// The single steps this kernel performs, in application order.
    pub fn steps(&self) -> Vec<Params> {
        let mut out = Vec::new();
        self.collect_steps(&mut out);
        out
    }

    fn collect_steps(&self, out: &mut Vec<Params>) {
        match self {
            Kernel::GameA { .. } => out.push(Params::fair()),
            Kernel::GameB { params, .. } => out.push(*params),
            Kernel::Composition { factors, .. } => {
                for (k, mult) in factors {
                    for _ in 0..*mult {
                        k.collect_steps(out);
                    }
                }
            }
        }
    }

    /// Row `K(x, .)` with zero entries omitted. Single-game kernels list the
    /// diagonal first and then flips in player order; composite rows list
    /// states in order of first discovery.
    pub fn row(&self, x: StateIndex) -> Result<Vec<(StateIndex, f64)>> {
        let n = self.n();
        if x.n() != n {
            return Err(invalid(format!("state has N = {}, kernel has N = {n}", x.n())));
        }
        let mut builder = RowBuilder::new(self);
        Ok(builder
            .row(x.bits())
            .iter()
            .map(|&(b, p)| (StateIndex::from_raw(b, n), p))
            .collect())
    }

    /// `d K` in the row-vector convention.
    pub fn apply(&self, d: &Dist) -> Result<Dist> {
        if d.n() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.num_states(), actual: d.len() });
        }
        let mut src = d.weights().to_vec();
        let mut dst = vec![0.0; src.len()];
        self.apply_in_place(&mut src, &mut dst);
        Ok(Dist::from_raw(self.n(), src))
    }

    /// Applies every step, leaving the result in `buf`. `scratch` must have
    /// the same length and its contents are overwritten.
    pub(crate) fn apply_in_place(&self, buf: &mut Vec<f64>, scratch: &mut Vec<f64>) {
        let n = self.n();
        for step in self.steps() {
            step_into(n, &SiteWeights::new(&step), buf, scratch);
            std::mem::swap(buf, scratch);
        }
    }
}

/// Sparse row generator with a reusable dense scratch area.
pub(crate) struct RowBuilder {
    n: usize,
    steps: Vec<SiteWeights>,
    acc: Vec<f64>,
    seen: Vec<bool>,
    cur: Vec<(u32, f64)>,
    next: Vec<(u32, f64)>,
}

impl RowBuilder {
    pub(crate) fn new(kernel: &Kernel) -> Self {
        let size = kernel.num_states();
        RowBuilder {
            n: kernel.n(),
            steps: kernel.steps().iter().map(SiteWeights::new).collect(),
            acc: vec![0.0; size],
            seen: vec![false; size],
            cur: Vec::new(),
            next: Vec::new(),
        }
    }

    pub(crate) fn row(&mut self, x: u32) -> &[(u32, f64)] {
        let n = self.n;
        self.cur.clear();
        self.cur.push((x, 1.0));
        for w in &self.steps {
            self.next.clear();
            for &(from, mass) in &self.cur {
                let acc = &mut self.acc;
                let seen = &mut self.seen;
                let next = &mut self.next;
                step_row(n, w, from, |to, p| {
                    if !seen[to as usize] {
                        seen[to as usize] = true;
                        next.push((to, 0.0));
                    }
                    acc[to as usize] += mass * p;
                });
            }
            for entry in self.next.iter_mut() {
                let i = entry.0 as usize;
                entry.1 = self.acc[i];
                self.acc[i] = 0.0;
                self.seen[i] = false;
            }
            std::mem::swap(&mut self.cur, &mut self.next);
        }
        &self.cur
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(s: &str) -> StateIndex {
        s.parse().unwrap()
    }

    #[test]
    fn neighbor_code_examples() {
        assert_eq!(st("000").neighbor_code(1).unwrap(), 0);
        assert_eq!(st("111").neighbor_code(2).unwrap(), 3);
        // x = (0,1,0,1): m_1 = 2 x_4 + x_2 = 3
        assert_eq!(st("0101").neighbor_code(1).unwrap(), 3);
        assert_eq!(st("0101").neighbor_code(2).unwrap(), 0);
        assert!(st("000").neighbor_code(0).is_err());
        assert!(st("000").neighbor_code(4).is_err());
    }

    #[test]
    fn flip_examples() {
        assert_eq!(st("000").flip(1).unwrap(), st("100"));
        assert_eq!(st("101").flip(3).unwrap(), st("100"));
        assert!(st("101").flip(4).is_err());
        for bits in 0..16 {
            let x = StateIndex::new(bits, 4).unwrap();
            for i in 1..=4 {
                assert_eq!(x.flip(i).unwrap().flip(i).unwrap(), x);
            }
        }
    }

    #[test]
    fn display_puts_player_one_first() {
        let x = StateIndex::from_players(&[1, 0, 0, 1, 1]).unwrap();
        assert_eq!(x.to_string(), "10011");
        assert_eq!(x.bits(), 0b11001);
        assert_eq!(st("10011"), x);
    }

    #[test]
    fn rotation_and_reflection() {
        let x = st("110100");
        // new player i holds old player i + 1
        assert_eq!(x.rotate(1), st("101001"));
        assert_eq!(x.rotate(6), x);
        assert_eq!(x.reflect(), st("001011"));
        assert_eq!(x.reflect().reflect(), x);
    }

    #[test]
    fn bulk_codes_match_definition() {
        for n in 3..=7 {
            for bits in 0..(1u32 << n) {
                let x = StateIndex::new(bits, n).unwrap();
                let mut counts = [0u32; 8];
                for i in 1..=n {
                    let c = 4 * x.player(i).unwrap() + x.neighbor_code(i).unwrap();
                    counts[c as usize] += 1;
                }
                assert_eq!(site_categories(bits, n), counts, "N={n} x={x}");
            }
        }
    }

    #[test]
    fn row_b_examples() {
        let p = Params::new(0.9, 0.3, 0.4, 0.2).unwrap();
        let row = row_b(3, &p, st("000")).unwrap();
        let flip1 = row.iter().find(|(s, _)| *s == st("100")).unwrap().1;
        assert!((flip1 - 0.9 / 3.0).abs() < 1e-15);

        let p = Params::new(0.3, 0.6, 0.2, 0.0).unwrap();
        let row = row_b(3, &p, st("111")).unwrap();
        assert!(row.iter().all(|(s, _)| *s != st("111")), "zero diagonal must be omitted");

        let row = row_b(3, &Params::fair(), st("010")).unwrap();
        assert_eq!(row.len(), 4);
        assert_eq!(row[0], (st("010"), 0.5));
        for (_, pr) in &row[1..] {
            assert!((pr - 1.0 / 6.0).abs() < 1e-16);
        }
    }

    #[test]
    fn row_a_is_fair_row_b() {
        for bits in 0..16 {
            let x = StateIndex::new(bits, 4).unwrap();
            let a = row_a(4, x).unwrap();
            assert_eq!(a, row_b(4, &Params::fair(), x).unwrap());
            assert_eq!(a.len(), 5);
            assert_eq!(a.iter().map(|e| e.1).sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn params_validation_and_parsing() {
        assert!(Params::new(1.1, 0.0, 0.0, 0.0).is_err());
        assert!(Params::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
        let p: Params = "1, 0.6,0.6,0".parse().unwrap();
        assert_eq!(p.as_array(), [1.0, 0.6, 0.6, 0.0]);
        assert!("1,2,3".parse::<Params>().is_err());
        assert_eq!(p.lambda().as_array(), [1.0, 1.0 - 0.6, 1.0 - 0.6, 0.0]);
        assert!(p.mixed(0.0).is_err());
        assert!(p.mixed(1.0).is_err());
    }

    #[test]
    fn pattern_parsing_and_schedule() {
        let pat: Pattern = "2,3".parse().unwrap();
        assert_eq!((pat.r(), pat.s(), pat.period()), (2, 3, 5));
        assert!((pat.gamma() - 0.4).abs() < 1e-16);
        let turns: Vec<bool> = (0..5).map(|t| pat.is_a_turn(t)).collect();
        assert_eq!(turns, [true, true, false, false, false]);
        assert!("0,1".parse::<Pattern>().is_err());
    }

    #[test]
    fn cyclic_permutation_order() {
        let p = Params::new(0.2, 0.3, 0.4, 0.6).unwrap();
        let pat = Pattern::new(2, 1).unwrap();
        let a = Params::fair();
        let steps = |w| Kernel::cyclic_permutation(4, p, pat, w).unwrap().steps();
        assert_eq!(steps(1), vec![a, p, a]);
        assert_eq!(steps(2), vec![p, a, a]);
        assert_eq!(steps(3), vec![a, a, p]);
        assert_eq!(Kernel::pattern(4, p, pat).unwrap().steps(), steps(3));
    }

    #[test]
    fn composition_row_matches_dense_product() {
        let p = Params::new(0.1, 0.6, 0.7, 0.75).unwrap();
        let n = 4;
        let k = Kernel::pattern(n, p, Pattern::new(1, 2).unwrap()).unwrap();
        let dense = |kern: &Kernel| {
            let mut m = vec![vec![0.0; 16]; 16];
            for x in 0..16 {
                for (y, pr) in kern.row(StateIndex::new(x, n).unwrap()).unwrap() {
                    m[x as usize][y.index()] += pr;
                }
            }
            m
        };
        let a = dense(&Kernel::game_a(n).unwrap());
        let b = dense(&Kernel::game_b(n, p).unwrap());
        let mul = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| {
            let mut z = vec![vec![0.0; 16]; 16];
            for i in 0..16 {
                for j in 0..16 {
                    z[i][j] = (0..16).map(|l| x[i][l] * y[l][j]).sum();
                }
            }
            z
        };
        let expected = mul(&mul(&a, &b), &b);
        let got = dense(&k);
        for i in 0..16 {
            for j in 0..16 {
                assert!((expected[i][j] - got[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn apply_point_mass_through_b() {
        let p = Params::new(0.35, 0.2, 0.9, 0.4).unwrap();
        let k = Kernel::game_b(3, p).unwrap();
        let d = Dist::point_mass(st("000")).unwrap();
        let out = k.apply(&d).unwrap();
        for s in ["100", "010", "001"] {
            assert!((out.weight(st(s)) - 0.35 / 3.0).abs() < 1e-16);
        }
        assert!((out.weight(st("000")) - 0.65).abs() < 1e-15);
    }

    #[test]
    fn apply_uniform_through_a_and_unit_composition() {
        let n = 5;
        let u = Dist::uniform(n).unwrap();
        let a = Kernel::game_a(n).unwrap();
        let out = a.apply(&u).unwrap();
        for &w in out.weights() {
            assert!((w - 1.0 / 32.0).abs() < 1e-17);
        }
        let p = Params::new(0.1, 0.6, 0.6, 0.75).unwrap();
        let comp = Kernel::compose(vec![(a.clone(), 1), (Kernel::game_b(n, p).unwrap(), 0)]).unwrap();
        let d = Dist::point_mass(StateIndex::new(0b10110, n).unwrap()).unwrap();
        assert_eq!(comp.apply(&d).unwrap(), a.apply(&d).unwrap());
    }

    #[test]
    fn apply_rejects_wrong_size() {
        let k = Kernel::game_a(4).unwrap();
        let d = Dist::uniform(5).unwrap();
        assert!(matches!(k.apply(&d), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn parallel_apply_is_deterministic() {
        let n = 14;
        let p = Params::new(0.1, 0.6, 0.6, 0.75).unwrap();
        let k = Kernel::pattern(n, p, Pattern::new(1, 1).unwrap()).unwrap();
        let d = Dist::point_mass(StateIndex::new(0b1011, n).unwrap()).unwrap();
        let mut a = d.clone();
        let mut b = d;
        for _ in 0..3 {
            a = k.apply(&a).unwrap();
            b = k.apply(&b).unwrap();
        }
        assert_eq!(a.weights(), b.weights());
    }
}
