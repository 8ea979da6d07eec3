//! Partial moments `m_r = E[Y_1^r ; Y <= b]` of a standard normal vector, `r <= 2`.
//!
//! The moments are not normalized by the rectangle mass. They follow the recursion
//!
//! ```text
//! m_r = (r-1) m_{r-2}
//!       - sum_j rho_1j phi(b_j) sum_l C(r-1,l) (rho_1j b_j)^l (1-rho_1j^2)^((r-1-l)/2) m_{r-1-l}[j]
//! ```
//!
//! where `[j]` is the rectangle of the remaining coordinates conditioned on `Y_j = b_j`,
//! re-standardized: bounds `(b_l - rho_lj b_j) / sqrt(1 - rho_lj^2)` and the partial
//! correlations given `Y_j`. Every variable is carried as a unit direction in the
//! space of the underlying independent normals, so conditioning is a projection and
//! partial correlations are dot products of projected directions. A coordinate whose
//! projection vanishes is deterministic given the conditioning values and turns
//! into either an always-true or an always-false constraint.

use super::mvn::rectangle_prob;
use super::IntegrationOptions;
use crate::error::Result;
use crate::normal;
use std::collections::HashMap;

const DEGENERATE_TOL: f64 = 1e-9;
pub(crate) const OWN_ID: usize = usize::MAX;

#[derive(Debug, Clone)]
pub(crate) enum Own {
    /// Standardized direction and upper bound (possibly `+inf`).
    Free { dir: Vec<f64>, bound: f64 },
    /// Deterministic value after conditioning.
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    pub id: usize,
    pub dir: Vec<f64>,
    pub bound: f64,
}

/// One rectangle of the recursion.
#[derive(Debug, Clone)]
pub(crate) struct Node {
    own: Own,
    others: Vec<Constraint>,
    /// Sorted ids of the coordinates conditioned on so far.
    key: Vec<usize>,
    empty: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projects `v` off the unit vector `on`, returning `(rho, residual, residual norm)`.
fn project(v: &[f64], on: &[f64]) -> (f64, Vec<f64>, f64) {
    let rho = dot(v, on);
    let resid: Vec<f64> = v.iter().zip(on).map(|(a, b)| a - rho * b).collect();
    let s = dot(&resid, &resid).sqrt();
    (rho, resid, s)
}

fn exceeds(value: f64, bound: f64) -> bool {
    value > bound + 1e-12 * (1.0 + bound.abs())
}

/// Result of conditioning: the child node plus `Y_own = shift + scale * Y_own_child`.
struct Conditioned {
    node: Node,
    shift: f64,
    scale: f64,
}

impl Node {
    /// Normalizes the supplied directions. Constraints with `+inf` bounds are dropped.
    pub(crate) fn new(own_dir: &[f64], own_bound: f64, others: Vec<Constraint>) -> Node {
        let norm = dot(own_dir, own_dir).sqrt();
        let own = Own::Free { dir: own_dir.iter().map(|v| v / norm).collect(), bound: own_bound };
        let mut kept = Vec::with_capacity(others.len());
        let mut empty = false;
        for c in others {
            if c.bound == f64::INFINITY {
                continue;
            }
            let s = dot(&c.dir, &c.dir).sqrt();
            if s < DEGENERATE_TOL {
                empty |= c.bound < 0.0;
                continue;
            }
            kept.push(Constraint { id: c.id, dir: c.dir.iter().map(|v| v / s).collect(), bound: c.bound / s });
        }
        Node { own, others: kept, key: Vec::new(), empty }
    }

    /// Constraints active for the rectangle probability, with ids.
    fn constraints(&self) -> Vec<(usize, &[f64], f64)> {
        let mut out: Vec<(usize, &[f64], f64)> =
            self.others.iter().map(|c| (c.id, c.dir.as_slice(), c.bound)).collect();
        if let Own::Free { dir, bound } = &self.own {
            if bound.is_finite() {
                out.push((OWN_ID, dir.as_slice(), *bound));
            }
        }
        out
    }

    fn condition(&self, id: usize) -> Conditioned {
        let (dir_j, b_j): (Vec<f64>, f64) = if id == OWN_ID {
            match &self.own {
                Own::Free { dir, bound } => (dir.clone(), *bound),
                Own::Fixed(_) => unreachable!("fixed coordinate is not a constraint"),
            }
        } else {
            let c = self.others.iter().find(|c| c.id == id).expect("unknown constraint id");
            (c.dir.clone(), c.bound)
        };
        let mut empty = self.empty;
        let mut others = Vec::with_capacity(self.others.len().saturating_sub(1));
        for c in self.others.iter().filter(|c| c.id != id) {
            let (rho, resid, s) = project(&c.dir, &dir_j);
            if s < DEGENERATE_TOL {
                empty |= exceeds(rho * b_j, c.bound);
                continue;
            }
            others.push(Constraint {
                id: c.id,
                dir: resid.iter().map(|v| v / s).collect(),
                bound: (c.bound - rho * b_j) / s,
            });
        }
        let (own, shift, scale) = match &self.own {
            Own::Fixed(v) => (Own::Fixed(*v), *v, 0.0),
            Own::Free { .. } if id == OWN_ID => (Own::Fixed(b_j), b_j, 0.0),
            Own::Free { dir, bound } => {
                let (rho, resid, s) = project(dir, &dir_j);
                let shift = rho * b_j;
                if s < DEGENERATE_TOL {
                    empty |= exceeds(shift, *bound);
                    (Own::Fixed(shift), shift, 0.0)
                } else {
                    let own = Own::Free {
                        dir: resid.iter().map(|v| v / s).collect(),
                        bound: (bound - shift) / s,
                    };
                    (own, shift, s)
                }
            }
        };
        let mut key = self.key.clone();
        let pos = key.binary_search(&id).unwrap_or_else(|p| p);
        key.insert(pos, id);
        Conditioned { node: Node { own, others, key, empty }, shift, scale }
    }

    fn own_correlation(&self, dir: &[f64], id: usize) -> f64 {
        match &self.own {
            Own::Free { .. } if id == OWN_ID => 1.0,
            Own::Free { dir: own, .. } => dot(own, dir),
            Own::Fixed(_) => 0.0,
        }
    }
}

/// Memoized evaluator for one recursion tree.
pub(crate) struct Evaluator<'a> {
    opts: &'a IntegrationOptions,
    seed: u64,
    m0_cache: HashMap<Vec<usize>, f64>,
    m1_cache: HashMap<Vec<usize>, f64>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl<'a> Evaluator<'a> {
    pub(crate) fn new(opts: &'a IntegrationOptions, seed: u64) -> Self {
        Evaluator { opts, seed, m0_cache: HashMap::new(), m1_cache: HashMap::new() }
    }

    fn key_seed(&self, key: &[usize]) -> u64 {
        key.iter().fold(splitmix(self.seed), |h, &k| splitmix(h ^ k as u64))
    }

    pub(crate) fn m0(&mut self, node: &Node) -> Result<f64> {
        if node.empty {
            return Ok(0.0);
        }
        if let Some(&v) = self.m0_cache.get(&node.key) {
            return Ok(v);
        }
        let cons = node.constraints();
        let rows: Vec<&[f64]> = cons.iter().map(|c| c.1).collect();
        let bounds: Vec<f64> = cons.iter().map(|c| c.2).collect();
        let p = rectangle_prob(&rows, &bounds, self.opts, self.key_seed(&node.key))?.value;
        self.m0_cache.insert(node.key.clone(), p);
        Ok(p)
    }

    pub(crate) fn m1(&mut self, node: &Node) -> Result<f64> {
        if node.empty {
            return Ok(0.0);
        }
        if let Own::Fixed(v) = node.own {
            return Ok(v * self.m0(node)?);
        }
        if let Some(&v) = self.m1_cache.get(&node.key) {
            return Ok(v);
        }
        let mut total = 0.0;
        for (id, dir, b) in node.constraints() {
            let rho = node.own_correlation(dir, id);
            if rho == 0.0 {
                continue;
            }
            let child = node.condition(id);
            total -= rho * normal::pdf(b) * self.m0(&child.node)?;
        }
        self.m1_cache.insert(node.key.clone(), total);
        Ok(total)
    }

    pub(crate) fn m2(&mut self, node: &Node) -> Result<f64> {
        if node.empty {
            return Ok(0.0);
        }
        let m0 = self.m0(node)?;
        if let Own::Fixed(v) = node.own {
            return Ok(v * v * m0);
        }
        let mut total = m0;
        for (id, dir, b) in node.constraints() {
            let rho = node.own_correlation(dir, id);
            if rho == 0.0 {
                continue;
            }
            let Conditioned { node: child, shift, scale } = node.condition(id);
            let mut inner = shift * self.m0(&child)?;
            if scale > 0.0 {
                inner += scale * self.m1(&child)?;
            }
            total -= rho * normal::pdf(b) * inner;
        }
        Ok(total)
    }

    pub(crate) fn moment(&mut self, r: u8, node: &Node) -> Result<f64> {
        match r {
            0 => self.m0(node),
            1 => self.m1(node),
            _ => self.m2(node),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> IntegrationOptions {
        IntegrationOptions { tol: 1e-6, ..IntegrationOptions::default() }
    }

    #[test]
    fn univariate_partial_moments() {
        // Y_1 itself truncated at b: m1 = -phi(b), m2 = Phi(b) - b phi(b)
        let b = 0.7;
        let node = Node::new(&[1.0], b, vec![]);
        let o = opts();
        let mut ev = Evaluator::new(&o, 1);
        assert!((ev.m0(&node).unwrap() - normal::cdf(b)).abs() < 1e-14);
        assert!((ev.m1(&node).unwrap() + normal::pdf(b)).abs() < 1e-14);
        let want = normal::cdf(b) - b * normal::pdf(b);
        assert!((ev.m2(&node).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn bivariate_unbounded_own() {
        // Y1 = rho Y2 + s e: E[Y1; Y2<=b] = -rho phi(b), E[Y1^2; Y2<=b] = Phi(b) - rho^2 b phi(b)
        let rho: f64 = -0.4;
        let s = (1.0 - rho * rho).sqrt();
        let b = 0.3;
        let node = Node::new(&[rho, s], f64::INFINITY, vec![Constraint { id: 0, dir: vec![1.0, 0.0], bound: b }]);
        let o = opts();
        let mut ev = Evaluator::new(&o, 1);
        assert!((ev.m1(&node).unwrap() + rho * normal::pdf(b)).abs() < 1e-12);
        let want = normal::cdf(b) - rho * rho * b * normal::pdf(b);
        assert!((ev.m2(&node).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn fixed_own_after_degenerate_conditioning() {
        // own direction equals the constraint direction: Y1 = Y2
        let b = -0.2;
        let node = Node::new(&[1.0, 0.0], f64::INFINITY, vec![Constraint { id: 0, dir: vec![1.0, 0.0], bound: b }]);
        let o = opts();
        let mut ev = Evaluator::new(&o, 1);
        assert!((ev.m1(&node).unwrap() + normal::pdf(b)).abs() < 1e-12);
        let want = normal::cdf(b) - b * normal::pdf(b);
        assert!((ev.m2(&node).unwrap() - want).abs() < 1e-12);
    }
}
