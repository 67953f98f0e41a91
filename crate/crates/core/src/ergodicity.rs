//! Transient-state classification for the pattern chains, a brute-force
//! support-graph oracle for it, and the arithmetic ergodicity conditions of
//! the infinite-lattice spin system.

use std::collections::BTreeSet;
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{check_ring, state_mask, Kernel, Params, Pattern, SiteWeights, StateIndex};

/// Largest ring the support-graph oracle will enumerate.
pub const MAX_BRUTE_FORCE_PLAYERS: usize = 12;
/// Largest ring for which the pattern-family transient sets are enumerated.
pub const MAX_ENUMERATED_PLAYERS: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransientCase {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

impl fmt::Display for TransientCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TransientCase::A => "a",
            TransientCase::B => "b",
            TransientCase::C => "c",
            TransientCase::D => "d",
            TransientCase::E => "e",
            TransientCase::F => "f",
            TransientCase::G => "g",
        };
        f.write_str(s)
    }
}

/// States that the pattern chains leave for good.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransientSet {
    pub case: TransientCase,
    pub exception: bool,
    pub states: BTreeSet<StateIndex>,
}

impl TransientSet {
    pub fn label(&self) -> String {
        if self.exception {
            format!("{} (exception)", self.case)
        } else {
            self.case.to_string()
        }
    }

    pub fn contains(&self, x: StateIndex) -> bool {
        self.states.contains(&x)
    }
}

/// `x_i = motif[(i - 1) mod len]`, e.g. `[0, 1, 1]` gives `011011...`.
fn periodic_state(n: usize, motif: &[u8]) -> StateIndex {
    let bits = (0..n).filter(|k| motif[k % motif.len()] == 1).fold(0u32, |b, k| b | 1 << k);
    StateIndex::from_raw(bits, n)
}

fn periodic_family(n: usize, motifs: &[&[u8]]) -> BTreeSet<StateIndex> {
    motifs.iter().map(|m| periodic_state(n, m)).collect()
}

/// Maximal runs of equal statuses around the ring, as `(status, length)`.
/// A constant state is one run of length `n`.
pub(crate) fn cyclic_runs(bits: u32, n: usize) -> Vec<(u8, usize)> {
    let mask = state_mask(n);
    if bits == 0 || bits == mask {
        return vec![(u8::from(bits != 0), n)];
    }
    // start at a site whose left neighbor differs
    let start = (0..n).find(|&k| (bits >> k) & 1 != (bits >> ((k + n - 1) % n)) & 1).unwrap();
    let mut runs = Vec::new();
    let mut k = start;
    let mut seen = 0;
    while seen < n {
        let v = ((bits >> k) & 1) as u8;
        let mut len = 0;
        while seen < n && ((bits >> k) & 1) as u8 == v {
            len += 1;
            seen += 1;
            k = (k + 1) % n;
        }
        runs.push((v, len));
    }
    runs
}

/// All states whose runs of `single` have length 1 and whose runs of the
/// other status have length 1 or 2.
fn singleton_pair_family(n: usize, single: u8) -> Result<BTreeSet<StateIndex>> {
    if n > MAX_ENUMERATED_PLAYERS {
        return Err(invalid(format!(
            "enumerating this transient family needs N <= {MAX_ENUMERATED_PLAYERS}, got {n}"
        )));
    }
    Ok((0..=state_mask(n))
        .filter(|&bits| {
            cyclic_runs(bits, n)
                .iter()
                .all(|&(v, len)| if v == single { len == 1 } else { len <= 2 })
        })
        .map(|bits| StateIndex::from_raw(bits, n))
        .collect())
}

/// The transient set of the pattern chains, by cases on `p0` and `p3`.
pub fn classify_transient(n: usize, params: Params) -> Result<TransientSet> {
    check_ring(n)?;
    let [p0, p1, p2, p3] = params.as_array();
    let interior = |p: f64| p > 0.0 && p < 1.0;
    let zeros = StateIndex::from_raw(0, n);
    let ones = StateIndex::from_raw(state_mask(n), n);
    let by3 = n.is_multiple_of(3);

    let (case, exception, states) = if interior(p0) && interior(p3) {
        (TransientCase::A, false, BTreeSet::new())
    } else if p0 == 1.0 && p3 == 0.0 {
        (TransientCase::F, false, BTreeSet::from([zeros, ones]))
    } else if p0 == 1.0 {
        if by3 && [p1, p2, p3] == [0.0, 0.0, 1.0] {
            let mut t = periodic_family(n, &[&[0, 1, 1], &[1, 0, 1], &[1, 1, 0]]);
            t.insert(zeros);
            (TransientCase::B, true, t)
        } else {
            (TransientCase::B, false, BTreeSet::from([zeros]))
        }
    } else if p3 == 0.0 {
        if by3 && [p0, p1, p2] == [0.0, 1.0, 1.0] {
            let mut t = periodic_family(n, &[&[0, 0, 1], &[0, 1, 0], &[1, 0, 0]]);
            t.insert(ones);
            (TransientCase::D, true, t)
        } else {
            (TransientCase::D, false, BTreeSet::from([ones]))
        }
    } else if p0 == 0.0 && p3 == 1.0 {
        if p1 == 0.0 && p2 == 0.0 {
            (TransientCase::G, true, singleton_pair_family(n, 0)?)
        } else if p1 == 1.0 && p2 == 1.0 {
            (TransientCase::G, true, singleton_pair_family(n, 1)?)
        } else if n.is_multiple_of(2) {
            (TransientCase::G, false, periodic_family(n, &[&[0, 1], &[1, 0]]))
        } else {
            (TransientCase::G, false, BTreeSet::new())
        }
    } else if p0 == 0.0 {
        if by3 && p1 == 1.0 && p2 == 1.0 {
            (TransientCase::C, true, periodic_family(n, &[&[0, 0, 1], &[0, 1, 0], &[1, 0, 0]]))
        } else {
            (TransientCase::C, false, BTreeSet::new())
        }
    } else if by3 && p1 == 0.0 && p2 == 0.0 {
        (TransientCase::E, true, periodic_family(n, &[&[0, 1, 1], &[1, 0, 1], &[1, 1, 0]]))
    } else {
        (TransientCase::E, false, BTreeSet::new())
    };
    Ok(TransientSet { case, exception, states })
}

/// Support graph of a multi-step kernel, unrolled over one period.
///
/// Node `phase * 2^N + x` means "at `x`, about to apply step `phase`".
/// Edges exist exactly where the step's transition probability is
/// positive. A composite chain started at phase `j` is the `j`-th cyclic
/// permutation of the kernel; its closed classes are the sink components of
/// this graph restricted to phase `j`.
pub struct SupportAnalysis {
    n: usize,
    period: usize,
    closed_classes: usize,
    /// Membership of each node in the (first) sink component.
    recurrent: Vec<bool>,
    /// Phase-0 states of every sink component, each sorted.
    classes: Vec<Vec<u32>>,
    /// Period of the composite chain on its recurrent class (0 when the
    /// class is not unique).
    composite_period: usize,
}

impl SupportAnalysis {
    pub fn of_kernel(kernel: &Kernel) -> Result<Self> {
        let n = kernel.n();
        if n > MAX_BRUTE_FORCE_PLAYERS {
            return Err(invalid(format!(
                "support-graph analysis needs N <= {MAX_BRUTE_FORCE_PLAYERS}, got {n}"
            )));
        }
        let steps: Vec<SiteWeights> = kernel.steps().iter().map(SiteWeights::new).collect();
        let period = steps.len();
        let size = 1usize << n;
        let node = |phase: usize, x: u32| NodeIndex::new(phase * size + x as usize);

        let mut graph: DiGraph<(), ()> = DiGraph::with_capacity(period * size, period * size * (n + 1));
        for _ in 0..period * size {
            graph.add_node(());
        }
        for (phase, w) in steps.iter().enumerate() {
            let next = (phase + 1) % period;
            for x in 0..size as u32 {
                for y in support_row(n, w, x) {
                    graph.add_edge(node(phase, x), node(next, y), ());
                }
            }
        }

        let components = tarjan_scc(&graph);
        let mut comp_of = vec![0usize; graph.node_count()];
        for (c, members) in components.iter().enumerate() {
            for v in members {
                comp_of[v.index()] = c;
            }
        }
        let mut is_sink = vec![true; components.len()];
        for e in graph.raw_edges() {
            let (a, b) = (comp_of[e.source().index()], comp_of[e.target().index()]);
            if a != b {
                is_sink[a] = false;
            }
        }
        let sinks: Vec<usize> = (0..components.len()).filter(|&c| is_sink[c]).collect();
        let mut classes: Vec<Vec<u32>> = sinks
            .iter()
            .map(|&c| {
                let mut xs: Vec<u32> =
                    components[c].iter().filter(|v| v.index() < size).map(|v| v.index() as u32).collect();
                xs.sort_unstable();
                xs
            })
            .collect();
        classes.sort();
        let first = sinks[0];
        let recurrent: Vec<bool> = comp_of.iter().map(|&c| c == first).collect();

        let composite_period = if sinks.len() == 1 {
            // A state whose every step can stay put closes a cycle of length
            // `period`, which certifies aperiodicity of the composite chain.
            let stays = (0..size as u32).any(|x| {
                recurrent[x as usize] && steps.iter().all(|w| w.stay_weight(x, n) > 0.0)
            });
            if stays {
                1
            } else {
                component_period(&graph, &components[first], &recurrent) / period
            }
        } else {
            0
        };

        Ok(SupportAnalysis { n, period, closed_classes: sinks.len(), recurrent, classes, composite_period })
    }

    pub fn closed_classes(&self) -> usize {
        self.closed_classes
    }

    /// States of each closed class of the chain started at phase 0, ordered
    /// by smallest member.
    pub fn class_states(&self) -> &[Vec<u32>] {
        &self.classes
    }

    pub fn is_aperiodic(&self) -> bool {
        self.composite_period == 1
    }

    pub fn composite_period(&self) -> usize {
        self.composite_period
    }

    /// Recurrent states of the chain started at `phase` (0-based).
    pub fn recurrent_at(&self, phase: usize) -> Result<BTreeSet<StateIndex>> {
        self.require_unique()?;
        let size = 1usize << self.n;
        let base = (phase % self.period) * size;
        Ok((0..size)
            .filter(|&x| self.recurrent[base + x])
            .map(|x| StateIndex::from_raw(x as u32, self.n))
            .collect())
    }

    /// Complement of [`Self::recurrent_at`].
    pub fn transient_at(&self, phase: usize) -> Result<BTreeSet<StateIndex>> {
        self.require_unique()?;
        let size = 1usize << self.n;
        let base = (phase % self.period) * size;
        Ok((0..size)
            .filter(|&x| !self.recurrent[base + x])
            .map(|x| StateIndex::from_raw(x as u32, self.n))
            .collect())
    }

    fn require_unique(&self) -> Result<()> {
        if self.closed_classes != 1 {
            return Err(Error::MultipleClosedClasses { count: self.closed_classes });
        }
        Ok(())
    }
}

fn support_row(n: usize, w: &SiteWeights, x: u32) -> impl Iterator<Item = u32> + '_ {
    let stay = (w.stay_weight(x, n) > 0.0).then_some(x);
    let l = crate::kernels::left_neighbors(x, n);
    let r = crate::kernels::right_neighbors(x, n);
    let flips = (0..n).filter_map(move |k| {
        let m = (2 * ((l >> k) & 1) + ((r >> k) & 1)) as usize;
        let to = 1 - ((x >> k) & 1) as usize;
        (w.get(4 * to + m) > 0.0).then_some(x ^ (1 << k))
    });
    stay.into_iter().chain(flips)
}

/// Period of a strongly connected component: the gcd of
/// `level(u) + 1 - level(v)` over its internal edges, with BFS levels from
/// an arbitrary member.
fn component_period(graph: &DiGraph<(), ()>, members: &[NodeIndex], inside: &[bool]) -> usize {
    let mut level = vec![usize::MAX; graph.node_count()];
    let root = members[0];
    level[root.index()] = 0;
    let mut queue = std::collections::VecDeque::from([root]);
    let mut g = 0usize;
    while let Some(u) = queue.pop_front() {
        for v in graph.neighbors(u) {
            if !inside[v.index()] {
                continue;
            }
            if level[v.index()] == usize::MAX {
                level[v.index()] = level[u.index()] + 1;
                queue.push_back(v);
            } else {
                let diff = (level[u.index()] + 1).abs_diff(level[v.index()]);
                g = gcd(g, diff);
            }
        }
    }
    g
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn check_brute_force_ring(n: usize) -> Result<()> {
    check_ring(n)?;
    if n > MAX_BRUTE_FORCE_PLAYERS {
        return Err(invalid(format!(
            "brute-force analysis needs N <= {MAX_BRUTE_FORCE_PLAYERS}, got {n}"
        )));
    }
    Ok(())
}

/// States outside the unique closed class of `P_A^r P_B^s`, found from the
/// support graph alone. Fails if there is more than one closed class or the
/// recurrent class is periodic.
pub fn brute_force_transient(n: usize, params: Params, pattern: Pattern) -> Result<BTreeSet<StateIndex>> {
    check_brute_force_ring(n)?;
    let analysis = SupportAnalysis::of_kernel(&Kernel::pattern(n, params, pattern)?)?;
    let transient = analysis.transient_at(0)?;
    if !analysis.is_aperiodic() {
        return Err(Error::Periodic { period: analysis.composite_period() });
    }
    Ok(transient)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CyclicErgodicity {
    pub which: usize,
    pub ergodic: bool,
    pub aperiodic: bool,
    /// The recurrent class is all of `{0,1}^N`.
    pub full_space: bool,
    pub recurrent: BTreeSet<StateIndex>,
}

/// Ergodicity of the `which`-th cyclic permutation of `P_A^r P_B^s`
/// (1-based; `which = r + s` is the pattern kernel itself).
pub fn check_cyclic_ergodicity(n: usize, params: Params, pattern: Pattern, which: usize) -> Result<CyclicErgodicity> {
    check_brute_force_ring(n)?;
    let period = pattern.period() as usize;
    if which == 0 || which > period {
        return Err(invalid(format!("cyclic index {which} outside 1..={period}")));
    }
    let kernel = Kernel::cyclic_permutation(n, params, pattern, which)?;
    let analysis = SupportAnalysis::of_kernel(&kernel)?;
    let recurrent = analysis.recurrent_at(0)?;
    let aperiodic = analysis.is_aperiodic();
    Ok(CyclicErgodicity {
        which,
        ergodic: aperiodic,
        aperiodic,
        full_space: recurrent.len() == 1 << n,
        recurrent,
    })
}

/// Which of the four sufficient conditions for ergodicity of the spin
/// system hold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinErgodicityReport {
    pub condition_a: bool,
    pub condition_b: bool,
    pub condition_c: bool,
    pub condition_d: bool,
    /// Mean bias `(p0 + p1 + p2 + p3) / 4`.
    pub pbar: f64,
}

impl SpinErgodicityReport {
    pub fn any(&self) -> bool {
        self.condition_a || self.condition_b || self.condition_c || self.condition_d
    }
}

pub fn check_spin_ergodicity(params: Params) -> SpinErgodicityReport {
    let [p0, p1, p2, p3] = params.as_array();

    let condition_a = (p0 - p1).abs().max((p2 - p3).abs()) + (p0 - p2).abs().max((p1 - p3).abs()) < 1.0;

    let lo = p0.min(p3);
    let hi = p0.max(p3);
    let condition_b = 0.0 < lo && lo <= p1.min(p2) && p1.max(p2) <= hi && hi < 1.0;

    let skew = p1 + p2 - p3;
    let upper = p1.max(p2).max(p3).max(skew) - p3;
    let lower = p1.min(p2).min(p3).min(skew);
    let condition_c = upper < p0 / 2.0 && p0 / 2.0 < lower;

    let pbar = (p0 + p1 + p2 + p3) / 4.0;
    let (lo_d, hi_d) = ((2.0 * pbar - 1.0).max(0.0), (2.0 * pbar).min(1.0));
    let condition_d = [p0, p1, p2, p3].iter().all(|&p| lo_d < p && p < hi_d);

    SpinErgodicityReport { condition_a, condition_b, condition_c, condition_d, pbar }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: [f64; 4]) -> Params {
        Params::from_array(p).unwrap()
    }

    fn states(list: &[&str]) -> BTreeSet<StateIndex> {
        list.iter().map(|s| s.parse().unwrap()).collect()
    }

    #[test]
    fn runs_wrap_around() {
        let x: StateIndex = "110010".parse().unwrap();
        let mut runs = cyclic_runs(x.bits(), 6);
        runs.sort();
        // 1s at players 1,2 and 5 are separate; players 6 and 1 are adjacent.
        assert_eq!(runs, vec![(0, 1), (0, 2), (1, 1), (1, 2)]);
        assert_eq!(cyclic_runs(0, 5), vec![(0, 5)]);
    }

    #[test]
    fn case_examples() {
        let t = classify_transient(5, Params::fair()).unwrap();
        assert_eq!((t.case, t.exception), (TransientCase::A, false));
        assert!(t.states.is_empty());

        let t = classify_transient(6, params([1.0, 0.6, 0.6, 0.0])).unwrap();
        assert_eq!(t.case, TransientCase::F);
        assert_eq!(t.states, states(&["000000", "111111"]));

        let t = classify_transient(6, params([0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!((t.case, t.exception), (TransientCase::D, true));
        assert_eq!(t.states, states(&["001001", "010010", "100100", "111111"]));
        assert_eq!(t.label(), "d (exception)");

        let t = classify_transient(6, params([0.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!((t.case, t.exception), (TransientCase::G, true));
        assert!(t.contains("010101".parse().unwrap()));
        assert!(t.contains("011011".parse().unwrap()));
        assert!(t.contains("101101".parse().unwrap()));
        assert!(!t.contains("001011".parse().unwrap()));
        assert!(!t.contains("011101".parse().unwrap()));
    }

    #[test]
    fn brute_force_examples() {
        let p = params([0.0, 0.3, 0.3, 1.0]);
        let pat = Pattern::new(1, 1).unwrap();
        assert_eq!(brute_force_transient(4, p, pat).unwrap(), states(&["0101", "1010"]));
        for (r, s) in [(2, 1), (1, 2)] {
            assert_eq!(
                brute_force_transient(4, p, Pattern::new(r, s).unwrap()).unwrap(),
                states(&["0101", "1010"])
            );
        }
        assert!(brute_force_transient(13, p, pat).is_err());
    }

    #[test]
    fn cyclic_examples() {
        let p = params([1.0, 0.6, 0.6, 0.0]);
        let pat = Pattern::new(1, 1).unwrap();
        let c1 = check_cyclic_ergodicity(4, p, pat, 1).unwrap();
        assert!(c1.ergodic && c1.full_space);
        let c2 = check_cyclic_ergodicity(4, p, pat, 2).unwrap();
        assert!(c2.ergodic && !c2.full_space);
        assert_eq!(c2.recurrent.len(), 14);
        assert!(!c2.recurrent.contains(&"0000".parse().unwrap()));
        assert!(!c2.recurrent.contains(&"1111".parse().unwrap()));
        for which in 1..=5 {
            let c = check_cyclic_ergodicity(3, Params::fair(), Pattern::new(2, 3).unwrap(), which).unwrap();
            assert!(c.ergodic && c.full_space);
        }
        assert!(check_cyclic_ergodicity(4, p, pat, 3).is_err());
    }

    #[test]
    fn multiple_closed_classes_are_an_error() {
        // Game B alone with p0 = 0, p3 = 1 has two absorbing states.
        let k = Kernel::game_b(4, params([0.0, 0.5, 0.5, 1.0])).unwrap();
        let a = SupportAnalysis::of_kernel(&k).unwrap();
        assert_eq!(a.closed_classes(), 2);
        assert!(matches!(a.transient_at(0), Err(Error::MultipleClosedClasses { count: 2 })));
    }

    #[test]
    fn period_detection() {
        let mut g: DiGraph<(), ()> = DiGraph::new();
        let v: Vec<_> = (0..4).map(|_| g.add_node(())).collect();
        for k in 0..4 {
            g.add_edge(v[k], v[(k + 1) % 4], ());
        }
        assert_eq!(component_period(&g, &v, &[true; 4]), 4);
        g.add_edge(v[0], v[2], ());
        assert_eq!(component_period(&g, &v, &[true; 4]), 1);
    }

    #[test]
    fn spin_conditions() {
        let r = check_spin_ergodicity(Params::fair());
        assert!(r.condition_a && r.condition_b && r.condition_d);
        assert_eq!(r.pbar, 0.5);

        let r = check_spin_ergodicity(params([0.1, 0.6, 0.6, 0.75]));
        assert!(!r.condition_a);
        assert!(r.condition_b);

        let r = check_spin_ergodicity(params([0.1, 0.6, 0.6, 0.75]).mixed(0.5).unwrap());
        assert!(r.condition_b);
    }

    #[test]
    fn gamma_above_half_gives_condition_a() {
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    for &d in &grid {
                        let p = params([a, b, c, d]);
                        for gamma in [0.51, 0.6, 0.75, 0.9] {
                            assert!(check_spin_ergodicity(p.mixed(gamma).unwrap()).condition_a);
                        }
                    }
                }
            }
        }
    }
}
