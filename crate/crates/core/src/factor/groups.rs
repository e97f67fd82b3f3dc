use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};

use super::linalg::check_symmetric;
use crate::error::{AtlasError, Result};

/// Smallest eigenvalue a target covariance may have.
pub const PSD_TOL: f64 = 1e-10;

/// Margin kept above the equicorrelation feasibility bound when clipping.
pub const RHO_MARGIN: f64 = 1e-6;

/// Lowest feasible common correlation for `size` exchangeable members.
pub fn min_feasible_rho(size: usize) -> f64 {
    if size <= 1 {
        -1.0
    } else {
        -1.0 / (size as f64 - 1.0)
    }
}

/// `rho` clipped into the feasible equicorrelation range for `size` members.
pub fn clip_rho(rho: f64, size: usize) -> f64 {
    rho.max(min_feasible_rho(size) + RHO_MARGIN).min(1.0 - RHO_MARGIN)
}

/// Unit-diagonal matrix with every off-diagonal entry equal to `rho`.
pub fn equicorrelation(size: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(size, size, |a, b| if a == b { 1.0 } else { rho })
}

/// A set of stores (or products) whose latent factors share a target
/// covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub id: String,
    /// Dense entity indices, in the order the covariance is labelled.
    pub members: Vec<usize>,
    pub sigma: DMatrix<f64>,
}

impl Group {
    pub fn new(id: impl Into<String>, members: Vec<usize>, sigma: DMatrix<f64>) -> Result<Self> {
        let g = Self {
            id: id.into(),
            members,
            sigma,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn equicorrelated(id: impl Into<String>, members: Vec<usize>, rho: f64) -> Self {
        let n = members.len();
        Self {
            id: id.into(),
            members,
            sigma: equicorrelation(n, clip_rho(rho, n)),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(AtlasError::Argument(format!("group {} is empty", self.id)));
        }
        if self.sigma.nrows() != self.members.len() || self.sigma.ncols() != self.members.len() {
            return Err(AtlasError::Argument(format!(
                "group {} has {} members but a {}x{} covariance",
                self.id,
                self.members.len(),
                self.sigma.nrows(),
                self.sigma.ncols()
            )));
        }
        check_symmetric(&self.sigma)?;
        if self.sigma.iter().any(|v| !v.is_finite()) {
            return Err(AtlasError::Argument(format!("group {} covariance not finite", self.id)));
        }
        let min = SymmetricEigen::new(self.sigma.clone()).eigenvalues.min();
        if min < -PSD_TOL {
            return Err(AtlasError::Argument(format!(
                "group {} covariance not PSD (min eigenvalue {min:e})",
                self.id
            )));
        }
        Ok(())
    }
}

/// Partition of stores, and optionally products, into demand groups.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupStructure {
    pub store_groups: Vec<Group>,
    pub product_groups: Option<Vec<Group>>,
}

impl GroupStructure {
    /// Every store alone in its group; no product groups. Disables the
    /// demand penalty.
    pub fn singletons(n_stores: usize) -> Self {
        Self {
            store_groups: (0..n_stores)
                .map(|i| Group::equicorrelated(format!("s{i}"), vec![i], 0.0))
                .collect(),
            product_groups: None,
        }
    }

    /// Groups from a label per store, each with equicorrelation `rho`.
    pub fn from_labels(labels: &[usize], rho: f64) -> Self {
        let mut order: Vec<usize> = Vec::new();
        let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, &g) in labels.iter().enumerate() {
            members.entry(g).or_insert_with(|| {
                order.push(g);
                Vec::new()
            });
            members.get_mut(&g).unwrap().push(i);
        }
        Self {
            store_groups: order
                .into_iter()
                .map(|g| Group::equicorrelated(g.to_string(), members.remove(&g).unwrap(), rho))
                .collect(),
            product_groups: None,
        }
    }

    pub fn validate(&self, n_stores: usize, n_products: usize) -> Result<()> {
        check_partition(&self.store_groups, n_stores, "store")?;
        if let Some(pg) = &self.product_groups {
            check_partition(pg, n_products, "product")?;
        }
        Ok(())
    }

    /// Group index of every store.
    pub fn store_labels(&self, n_stores: usize) -> Vec<usize> {
        let mut labels = vec![usize::MAX; n_stores];
        for (g, group) in self.store_groups.iter().enumerate() {
            for &i in &group.members {
                if i < n_stores {
                    labels[i] = g;
                }
            }
        }
        labels
    }
}

fn check_partition(groups: &[Group], n: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; n];
    for g in groups {
        g.validate()?;
        for &m in &g.members {
            if m >= n {
                return Err(AtlasError::Argument(format!("{what} {m} out of range in group {}", g.id)));
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(AtlasError::Argument(format!("{what} {m} appears in more than one group")));
            }
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(AtlasError::Argument(format!("{what} {missing} belongs to no group")));
    }
    Ok(())
}

/// One row of a group assignment file.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    pub member_id: String,
    pub group_id: String,
    pub rho: Option<f64>,
}

/// Parses `<member>,group_id[,rho]` CSV text. The first header column names
/// the member kind (`store_id` or `product_id`).
pub fn parse_group_file(text: &str) -> Result<Vec<GroupAssignment>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| AtlasError::Schema(format!("unreadable group header: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let has_rho = match names.as_slice() {
        [_, "group_id"] => false,
        [_, "group_id", "rho"] => true,
        _ => {
            return Err(AtlasError::Schema(
                "group file header must be <member>,group_id[,rho]".into(),
            ))
        }
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AtlasError::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != names.len() {
            return Err(AtlasError::parse(line, format!("expected {} fields", names.len())));
        }
        let rho = if has_rho {
            let v: f64 = rec[2]
                .trim()
                .parse()
                .map_err(|_| AtlasError::parse(line, "bad rho"))?;
            if !(v > -1.0 && v < 1.0) {
                return Err(AtlasError::parse(line, format!("rho {v} outside (-1, 1)")));
            }
            Some(v)
        } else {
            None
        };
        out.push(GroupAssignment {
            member_id: rec[0].trim().to_string(),
            group_id: rec[1].trim().to_string(),
            rho,
        });
    }
    Ok(out)
}

/// Parses the companion covariance file: one line per group,
/// `group_id,v11,v12,...` with the block in row-major order.
pub fn parse_covariance_file(text: &str) -> Result<HashMap<String, Vec<f64>>> {
    let mut out = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(AtlasError::parse(idx + 1, "missing group id"));
        }
        let values = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| AtlasError::parse(idx + 1, "non-numeric covariance entry"))?;
        if out.insert(id.clone(), values).is_some() {
            return Err(AtlasError::parse(idx + 1, format!("group {id} listed twice")));
        }
    }
    Ok(out)
}

/// Resolves string-level assignments against entity ids. Entities missing
/// from the file become singleton groups. Explicit covariances win over
/// `rho`; groups with neither use `default_rho`.
pub fn resolve_groups(
    ids: &[String],
    assignments: &[GroupAssignment],
    covariances: &HashMap<String, Vec<f64>>,
    default_rho: f64,
) -> Result<Vec<Group>> {
    let lookup: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut order: Vec<String> = Vec::new();
    let mut members: HashMap<String, (Vec<usize>, Option<f64>)> = HashMap::new();
    let mut assigned = vec![false; ids.len()];
    for a in assignments {
        let Some(&idx) = lookup.get(a.member_id.as_str()) else {
            log::warn!("group file names unknown member {:?}; ignored", a.member_id);
            continue;
        };
        if std::mem::replace(&mut assigned[idx], true) {
            return Err(AtlasError::Schema(format!("{} assigned twice", a.member_id)));
        }
        let entry = members.entry(a.group_id.clone()).or_insert_with(|| {
            order.push(a.group_id.clone());
            (Vec::new(), a.rho)
        });
        if entry.1 != a.rho {
            return Err(AtlasError::Schema(format!("inconsistent rho within group {}", a.group_id)));
        }
        entry.0.push(idx);
    }
    let mut groups = Vec::new();
    for id in order {
        let (m, rho) = members.remove(&id).unwrap();
        let n = m.len();
        let group = match covariances.get(&id) {
            Some(values) => {
                if values.len() != n * n {
                    return Err(AtlasError::Schema(format!(
                        "group {id} has {n} members but {} covariance entries",
                        values.len()
                    )));
                }
                Group::new(id, m, DMatrix::from_row_slice(n, n, values))?
            }
            None => Group::equicorrelated(id, m, rho.unwrap_or(default_rho)),
        };
        groups.push(group);
    }
    for (i, done) in assigned.iter().enumerate() {
        if !done {
            groups.push(Group::equicorrelated(format!("__single_{}", ids[i]), vec![i], 0.0));
        }
    }
    Ok(groups)
}

/// Renders a group file in the format [`parse_group_file`] reads.
pub fn render_group_file(member_header: &str, ids: &[String], groups: &[Group], rho: Option<f64>) -> String {
    let mut out = match rho {
        Some(_) => format!("{member_header},group_id,rho\n"),
        None => format!("{member_header},group_id\n"),
    };
    for g in groups {
        for &m in &g.members {
            match rho {
                Some(r) => out.push_str(&format!("{},{},{}\n", ids[m], g.id, r)),
                None => out.push_str(&format!("{},{}\n", ids[m], g.id)),
            }
        }
    }
    out
}
