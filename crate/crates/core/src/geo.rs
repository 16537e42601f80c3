//! Coordinate handling, site ordering, and nearest-neighbor conditioning
//! sets for the Vecchia factorization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in km times pi/180: km per degree of latitude.
const KM_PER_DEG: f64 = 111.195_083_724_191_56;

/// How raw coordinates are interpreted before scaling to the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    /// Coordinates are already planar, in km.
    PlanarPassthrough,
    /// Coordinates are (longitude, latitude) degrees; converted to km by an
    /// equirectangular projection about the centroid latitude.
    EquirectangularKm,
}

/// Study sites with coordinates scaled onto the unit square.
///
/// Scaling is aspect-preserving: the longer axis spans [0, 1] and
/// `km_per_unit` records the factor needed to report distances in km.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSet {
    pub ids: Vec<String>,
    /// Raw input coordinates, as supplied.
    pub raw: Vec<[f64; 2]>,
    /// Coordinates scaled into [0,1]^2.
    pub scaled: Vec<[f64; 2]>,
    /// km represented by one unit of scaled distance.
    pub km_per_unit: f64,
}

impl SiteSet {
    pub fn n_sites(&self) -> usize {
        self.scaled.len()
    }

    /// Euclidean distance between two sites on the scaled coordinates.
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        let a = self.scaled[i];
        let b = self.scaled[j];
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// Scaled distance converted to km.
    pub fn dist_km(&self, i: usize, j: usize) -> f64 {
        self.dist(i, j) * self.km_per_unit
    }
}

/// Project raw coordinates and scale them onto the unit square.
///
/// Requires at least two distinct sites so the extent is nondegenerate.
pub fn project_and_scale(
    ids: Vec<String>,
    raw: Vec<[f64; 2]>,
    mode: ProjectionMode,
) -> Result<SiteSet> {
    if raw.len() < 2 {
        return Err(Error::invalid("at least 2 sites are required for unit-square scaling"));
    }
    if ids.len() != raw.len() {
        return Err(Error::invalid("site id and coordinate counts differ"));
    }
    {
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate site id {id:?}")));
            }
        }
    }
    for (k, c) in raw.iter().enumerate() {
        if !(c[0].is_finite() && c[1].is_finite()) {
            return Err(Error::invalid(format!("non-finite coordinate at site index {k}")));
        }
    }

    // Planar km coordinates.
    let planar: Vec<[f64; 2]> = match mode {
        ProjectionMode::PlanarPassthrough => raw.clone(),
        ProjectionMode::EquirectangularKm => {
            let lat0 = raw.iter().map(|c| c[1]).sum::<f64>() / raw.len() as f64;
            let lon0 = raw.iter().map(|c| c[0]).sum::<f64>() / raw.len() as f64;
            let cos_lat0 = lat0.to_radians().cos();
            raw.iter()
                .map(|c| {
                    [
                        (c[0] - lon0) * KM_PER_DEG * cos_lat0,
                        (c[1] - lat0) * KM_PER_DEG,
                    ]
                })
                .collect()
        }
    };

    for i in 0..planar.len() {
        for j in (i + 1)..planar.len() {
            if planar[i] == planar[j] {
                return Err(Error::invalid(format!(
                    "duplicate coordinates for sites {:?} and {:?}",
                    ids[i], ids[j]
                )));
            }
        }
    }

    let min_x = planar.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
    let max_x = planar.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max);
    let min_y = planar.iter().map(|c| c[1]).fold(f64::INFINITY, f64::min);
    let max_y = planar.iter().map(|c| c[1]).fold(f64::NEG_INFINITY, f64::max);
    let extent = (max_x - min_x).max(max_y - min_y);
    if extent <= 0.0 {
        return Err(Error::invalid("degenerate spatial extent (all sites coincide)"));
    }

    let scaled = planar
        .iter()
        .map(|c| [(c[0] - min_x) / extent, (c[1] - min_y) / extent])
        .collect();

    Ok(SiteSet {
        ids,
        raw,
        scaled,
        km_per_unit: extent,
    })
}

/// Build a SiteSet directly from coordinates already on (or near) the unit
/// square, bypassing projection. Used by simulation studies.
pub fn site_set_from_unit_square(coords: Vec<[f64; 2]>) -> Result<SiteSet> {
    if coords.is_empty() {
        return Err(Error::invalid("need at least one site"));
    }
    for (k, c) in coords.iter().enumerate() {
        if !(c[0].is_finite() && c[1].is_finite()) {
            return Err(Error::invalid(format!("non-finite coordinate at site index {k}")));
        }
    }
    let ids = (0..coords.len()).map(|i| format!("s{i:03}")).collect();
    Ok(SiteSet {
        ids,
        raw: coords.clone(),
        scaled: coords,
        km_per_unit: 1.0,
    })
}

/// Order sites by ascending distance from the origin of the scaled square,
/// ties broken by lower original index. Returns original indices in visit
/// order.
pub fn order_sites(sites: &SiteSet) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sites.n_sites()).collect();
    idx.sort_by(|&a, &b| {
        let da = sites.scaled[a][0].hypot(sites.scaled[a][1]);
        let db = sites.scaled[b][0].hypot(sites.scaled[b][1]);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    idx
}

/// Site ordering plus nearest-neighbor conditioning sets.
///
/// `order[k]` is the original index of the k-th visited site. `neighbors[k]`
/// holds visit positions `< k`, sorted by increasing distance to site k
/// (ties by lower visit position).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub order: Vec<usize>,
    pub neighbors: Vec<Vec<usize>>,
    pub m: usize,
    /// For each visit position k, the visit positions j with k in N_j.
    pub dependents: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn n_sites(&self) -> usize {
        self.order.len()
    }

    /// Neighbor sets expressed as original site indices.
    pub fn original_neighbors(&self, k: usize) -> Vec<usize> {
        self.neighbors[k].iter().map(|&j| self.order[j]).collect()
    }
}

/// Build conditioning sets of up to `m` nearest previous sites.
pub fn build_neighbor_sets(sites: &SiteSet, order: &[usize], m: usize) -> Result<NeighborGraph> {
    if m < 1 {
        return Err(Error::invalid("neighbor count m must be >= 1"));
    }
    if order.len() != sites.n_sites() {
        return Err(Error::invalid("ordering length does not match site count"));
    }
    let n = order.len();
    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut prev: Vec<usize> = (0..k).collect();
        prev.sort_by(|&a, &b| {
            let da = sites.dist(order[k], order[a]);
            let db = sites.dist(order[k], order[b]);
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
        prev.truncate(m.min(k));
        neighbors.push(prev);
    }
    let mut dependents = vec![Vec::new(); n];
    for (k, ns) in neighbors.iter().enumerate() {
        for &j in ns {
            dependents[j].push(k);
        }
    }
    Ok(NeighborGraph {
        order: order.to_vec(),
        neighbors,
        m,
        dependents,
    })
}
