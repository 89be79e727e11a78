//! Diagram formula for moments of Hermite polynomials of jointly Gaussian
//! variables.
//!
//! A diagram of order `(l_1, ..., l_p)` is a perfect matching of
//! `l_1 + ... + l_p` vertices, arranged in `p` levels, in which no edge joins
//! two vertices of the same level. Then
//! `E[prod_j H_{l_j}(zeta_j)] = sum_diagrams prod_edges r(level_a, level_b)`.
//!
//! Everything here is exhaustive and exact; it is meant for small orders.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest total vertex count accepted by the enumerators.
pub const MAX_VERTICES: usize = 24;
/// Largest level count for the regularity search.
pub const MAX_REGULAR_LEVELS: usize = 12;

/// A vertex `(level, index within level)`.
pub type Vertex = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Diagram {
    pub levels: Vec<usize>,
    /// Edges `(a, b)` with `a.0 < b.0`.
    pub edges: Vec<(Vertex, Vertex)>,
}

impl Diagram {
    pub fn is_regular(&self) -> bool {
        is_regular(self)
    }

    /// Checks the degree-one and cross-level constraints.
    pub fn is_valid(&self) -> bool {
        let total: usize = self.levels.iter().sum();
        if self.edges.len() * 2 != total {
            return false;
        }
        let mut seen: Vec<Vec<bool>> = self.levels.iter().map(|&l| vec![false; l]).collect();
        for &(a, b) in &self.edges {
            if a.0 >= b.0 || b.0 >= self.levels.len() || a.1 >= self.levels[a.0] || b.1 >= self.levels[b.0] {
                return false;
            }
            for v in [a, b] {
                if std::mem::replace(&mut seen[v.0][v.1], true) {
                    return false;
                }
            }
        }
        true
    }
}

/// Symmetric correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CorrelationMatrix {
    dim: usize,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Domain("correlation matrix must be square".into()));
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        let m = Self { dim, values };
        for i in 0..dim {
            if (m.get(i, i) - 1.0).abs() > 1e-12 {
                return Err(Error::Domain("correlation diagonal must be one".into()));
            }
            for j in 0..dim {
                let v = m.get(i, j);
                if !(-1.0..=1.0).contains(&v) || (v - m.get(j, i)).abs() > 1e-12 {
                    return Err(Error::Domain(format!("invalid correlation entry ({i}, {j}) = {v}")));
                }
            }
        }
        Ok(m)
    }

    /// Every off-diagonal entry equal to `r`.
    pub fn uniform(dim: usize, r: f64) -> Result<Self> {
        Self::new(
            (0..dim)
                .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { r }).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    /// True when the matrix admits a Cholesky factor (up to `1e-12` jitter).
    pub fn is_psd(&self) -> bool {
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.values)
            + DMatrix::<f64>::identity(self.dim, self.dim) * 1e-12;
        m.cholesky().is_some()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.dim.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// Rows and columns reordered by `perm` (new index `i` takes old `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let values = perm
            .iter()
            .flat_map(|&i| perm.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self { dim: self.dim, values }
    }
}

impl TryFrom<Vec<Vec<f64>>> for CorrelationMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<CorrelationMatrix> for Vec<Vec<f64>> {
    fn from(m: CorrelationMatrix) -> Self {
        m.rows()
    }
}

fn check_size(orders: &[usize]) -> Result<usize> {
    let total: usize = orders.iter().sum();
    if total > MAX_VERTICES {
        return Err(Error::SizeLimit {
            total,
            max: MAX_VERTICES,
        });
    }
    Ok(total)
}

/// Flattened vertex list with owning levels.
fn vertex_levels(orders: &[usize]) -> Vec<usize> {
    orders
        .iter()
        .enumerate()
        .flat_map(|(j, &l)| std::iter::repeat_n(j, l))
        .collect()
}

/// Visits every diagram of the given order as a list of vertex-index pairs.
///
/// The lowest unmatched vertex is always matched next, so each perfect
/// matching is produced exactly once.
fn visit<F: FnMut(&[(usize, usize)])>(orders: &[usize], mut f: F) -> Result<()> {
    let total = check_size(orders)?;
    if total % 2 == 1 {
        return Ok(());
    }
    let level = vertex_levels(orders);
    let mut used = vec![false; total];
    let mut remaining = orders.to_vec();
    let mut edges = Vec::with_capacity(total / 2);
    recurse(&level, &mut used, &mut remaining, &mut edges, total, &mut f);
    Ok(())
}

fn recurse<F: FnMut(&[(usize, usize)])>(
    level: &[usize],
    used: &mut [bool],
    remaining: &mut [usize],
    edges: &mut Vec<(usize, usize)>,
    left: usize,
    f: &mut F,
) {
    if left == 0 {
        f(edges);
        return;
    }
    let v = used.iter().position(|u| !u).expect("unmatched vertex");
    let lv = level[v];
    // every remaining vertex of this level needs a partner elsewhere
    if 2 * remaining[lv] > left {
        return;
    }
    used[v] = true;
    remaining[lv] -= 1;
    for w in v + 1..used.len() {
        if used[w] || level[w] == lv {
            continue;
        }
        used[w] = true;
        remaining[level[w]] -= 1;
        edges.push((v, w));
        recurse(level, used, remaining, edges, left - 2, f);
        edges.pop();
        remaining[level[w]] += 1;
        used[w] = false;
    }
    remaining[lv] += 1;
    used[v] = false;
}

/// All diagrams of order `orders`; empty when the vertex count is odd.
pub fn enumerate_diagrams(orders: &[usize]) -> Result<Vec<Diagram>> {
    let offsets: Vec<usize> = orders
        .iter()
        .scan(0, |acc, &l| {
            let start = *acc;
            *acc += l;
            Some(start)
        })
        .collect();
    let level = vertex_levels(orders);
    let to_vertex = |v: usize| (level[v], v - offsets[level[v]]);
    let mut out = Vec::new();
    visit(orders, |edges| {
        out.push(Diagram {
            levels: orders.to_vec(),
            edges: edges.iter().map(|&(a, b)| (to_vertex(a), to_vertex(b))).collect(),
        });
    })?;
    Ok(out)
}

/// Whether the levels split into pairs with no edge between different pairs.
pub fn is_regular(d: &Diagram) -> bool {
    let p = d.levels.len();
    if p % 2 == 1 || p > MAX_REGULAR_LEVELS {
        return false;
    }
    let mut linked = vec![vec![false; p]; p];
    for &(a, b) in &d.edges {
        linked[a.0][b.0] = true;
        linked[b.0][a.0] = true;
    }
    let mut paired = vec![false; p];
    pair_levels(&linked, &mut paired)
}

fn pair_levels(linked: &[Vec<bool>], paired: &mut [bool]) -> bool {
    let Some(i) = paired.iter().position(|x| !x) else {
        return true;
    };
    paired[i] = true;
    for j in i + 1..paired.len() {
        if paired[j] {
            continue;
        }
        let isolated = (0..paired.len())
            .filter(|&k| k != i && k != j)
            .all(|k| !linked[i][k] && !linked[j][k]);
        if isolated {
            paired[j] = true;
            if pair_levels(linked, paired) {
                return true;
            }
            paired[j] = false;
        }
    }
    paired[i] = false;
    false
}

/// `2 m` levels of common cardinality `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelGroup {
    pub cardinality: usize,
    pub pairs: usize,
}

/// Groups the levels of `orders` by cardinality; every cardinality must occur
/// an even number of times.
pub fn level_groups(orders: &[usize]) -> Result<Vec<LevelGroup>> {
    let mut sorted = orders.to_vec();
    sorted.sort_unstable();
    let mut groups: Vec<LevelGroup> = Vec::new();
    for chunk in sorted.chunk_by(|a, b| a == b) {
        if chunk.len() % 2 == 1 {
            return Err(Error::Multiplicity(format!(
                "cardinality {} occurs {} times",
                chunk[0],
                chunk.len()
            )));
        }
        groups.push(LevelGroup {
            cardinality: chunk[0],
            pairs: chunk.len() / 2,
        });
    }
    Ok(groups)
}

fn double_factorial_odd(n: usize) -> u128 {
    // (2n - 1)!!
    (1..=n).map(|k| (2 * k - 1) as u128).product()
}

fn factorial_u128(n: usize) -> u128 {
    (1..=n).map(|k| k as u128).product()
}

/// Number of regular diagrams with `2 m_j` levels of cardinality `r_j`,
/// counted over every assignment of the cardinalities to the `p = 2 nu`
/// level positions: `(2nu - 1)!! nu! / (m_1! ... m_l!) * prod_j (r_j!)^{m_j}`.
///
/// `groups` must describe exactly the multiset of `orders`.
pub fn count_regular(orders: &[usize], groups: &[LevelGroup]) -> Result<u128> {
    let nu: usize = groups.iter().map(|g| g.pairs).sum();
    if 2 * nu != orders.len() {
        return Err(Error::Multiplicity(format!(
            "{} levels but groups describe {}",
            orders.len(),
            2 * nu
        )));
    }
    let mut cards: Vec<usize> = groups.iter().map(|g| g.cardinality).collect();
    cards.sort_unstable();
    if cards.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Multiplicity("group cardinalities must be distinct".into()));
    }
    let expected = level_groups(orders)?;
    for g in groups {
        if !expected.contains(g) {
            return Err(Error::Multiplicity(format!("group {g:?} does not match the orders")));
        }
    }
    let mut count = double_factorial_odd(nu) * factorial_u128(nu);
    for g in groups {
        count /= factorial_u128(g.pairs);
    }
    for g in groups {
        count *= factorial_u128(g.cardinality).pow(g.pairs as u32);
    }
    Ok(count)
}

/// Number of regular diagrams of the fixed order `orders`, by enumeration.
pub fn enumerate_regular(orders: &[usize]) -> Result<u128> {
    Ok(enumerate_diagrams(orders)?.iter().filter(|d| is_regular(d)).count() as u128)
}

/// `E[prod_j H_{l_j}(zeta_j)]` by summing `prod_edges r` over all diagrams.
pub fn hermite_product_moment(orders: &[usize], corr: &CorrelationMatrix) -> Result<f64> {
    if corr.dim() != orders.len() {
        return Err(Error::Domain(format!(
            "{} orders but a {}x{} correlation matrix",
            orders.len(),
            corr.dim(),
            corr.dim()
        )));
    }
    let level = vertex_levels(orders);
    let mut total = 0.0;
    visit(orders, |edges| {
        total += edges
            .iter()
            .map(|&(a, b)| corr.get(level[a], level[b]))
            .product::<f64>();
    })?;
    Ok(total)
}

/// Diagram census used by the `moments` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCensus {
    pub orders: Vec<usize>,
    pub moment: f64,
    pub diagrams: usize,
    pub regular: usize,
}

pub fn census(orders: &[usize], corr: &CorrelationMatrix) -> Result<MomentCensus> {
    let moment = hermite_product_moment(orders, corr)?;
    let all = enumerate_diagrams(orders)?;
    let regular = all.iter().filter(|d| is_regular(d)).count();
    Ok(MomentCensus {
        orders: orders.to_vec(),
        moment,
        diagrams: all.len(),
        regular,
    })
}
