//! Dimensionality reduction and dense vector construction.
//!
//! Raw product image vectors are reduced with PCA to `k` dimensions
//! (default 50). Query vectors are click-frequency-weighted averages of the
//! reduced vectors of products clicked after the query, and a session is
//! pooled as the plain mean of the reduced vectors of viewed products.
//! Vectors are kept un-normalized at rest; L2 normalization happens only
//! inside cosine similarity, so averages keep their geometric meaning.
//!
//! When two shops must share one vector space, fit the PCA on the
//! concatenation of their catalogs; the pipeline takes that route by
//! default and offers per-shop fitting behind a flag.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::ingest::{CatalogRecord, SearchLogEntry};
use crate::linalg;

/// Reduced dimensionality used throughout unless overridden.
pub const DEFAULT_K: usize = 50;

/// A fitted PCA basis.
///
/// `components` holds the top-k principal directions as rows, pairwise
/// orthonormal within 1e-6. Each row's first nonzero entry is positive,
/// which pins the otherwise arbitrary sign for reproducibility.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    /// Eigenvalue of each kept component divided by the covariance trace;
    /// entries lie in [0, 1] and are non-increasing.
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn d_raw(&self) -> usize {
        self.mean.len()
    }
}

/// Fit a PCA basis on the given vectors.
///
/// The covariance matrix uses the population convention (divide by n);
/// explained variance ratios are invariant to that choice. Data whose total
/// variance is numerically zero (all vectors identical) is rejected.
pub fn fit_pca(raw_vectors: &[Vec<f64>], k: usize) -> Result<PcaModel> {
    let n = raw_vectors.len();
    if n == 0 || k == 0 {
        return Err(Error::Argument("fit_pca: need data and k > 0".into()));
    }
    let d = raw_vectors[0].len();
    for v in raw_vectors {
        if v.len() != d {
            return Err(Error::Dimension { expected: d, got: v.len() });
        }
    }
    if k > d || k > n {
        return Err(Error::Argument(format!(
            "fit_pca: k={k} exceeds dimension {d} or sample count {n}"
        )));
    }

    let mean = linalg::mean(raw_vectors)?;
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for v in raw_vectors {
        for (c, (x, m)) in centered.iter_mut().zip(v.iter().zip(&mean)) {
            *c = x - m;
        }
        for r in 0..d {
            let cr = centered[r];
            let row = &mut cov[r * d..(r + 1) * d];
            for (entry, c) in row.iter_mut().zip(&centered) {
                *entry += cr * c;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for entry in &mut cov {
        *entry *= inv_n;
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if trace <= 1e-12 {
        return Err(Error::Degenerate(
            "fit_pca: zero total variance (all vectors identical)".into(),
        ));
    }

    let eigen = SymmetricEigen::new(DMatrix::from_fn(d, d, |r, c| cov[r * d + c]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].partial_cmp(&eigen.eigenvalues[a]).unwrap());

    let mut components = Vec::with_capacity(k);
    let mut explained_variance_ratio = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut row: Vec<f64> = eigen.eigenvectors.column(idx).iter().copied().collect();
        if let Some(first) = row.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                for v in &mut row {
                    *v = -*v;
                }
            }
        }
        components.push(row);
        explained_variance_ratio.push(eigen.eigenvalues[idx].max(0.0) / trace);
    }
    Ok(PcaModel { mean, components, explained_variance_ratio })
}

/// Project a raw vector: `components · (raw − mean)`.
pub fn transform(model: &PcaModel, raw: &[f64]) -> Result<Vec<f64>> {
    if raw.len() != model.d_raw() {
        return Err(Error::Dimension { expected: model.d_raw(), got: raw.len() });
    }
    let centered: Vec<f64> = raw.iter().zip(&model.mean).map(|(x, m)| x - m).collect();
    Ok(model.components.iter().map(|row| linalg::dot(row, &centered)).collect())
}

/// Map a reduced vector back to raw space: `componentsᵀ · z + mean`. Exact
/// for data of rank ≤ k, lossy otherwise.
pub fn inverse_transform(model: &PcaModel, reduced: &[f64]) -> Result<Vec<f64>> {
    if reduced.len() != model.k() {
        return Err(Error::Dimension { expected: model.k(), got: reduced.len() });
    }
    let mut out = model.mean.clone();
    for (row, z) in model.components.iter().zip(reduced) {
        for (o, r) in out.iter_mut().zip(row) {
            *o += z * r;
        }
    }
    Ok(out)
}

/// Named vectors of one fixed dimension, ordered by name for deterministic
/// serialization. Used for both product vectors and query vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    k: usize,
    map: BTreeMap<String, Vec<f64>>,
}

pub const PRODUCT_VECTOR_KIND: &str = "product-vectors";
pub const QUERY_VECTOR_KIND: &str = "query-vectors";

impl VectorTable {
    pub fn new(k: usize) -> Self {
        VectorTable { k, map: BTreeMap::new() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.map.get(name).map(|v| v.as_slice())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn insert(&mut self, name: String, vec: Vec<f64>) -> Result<()> {
        if vec.len() != self.k {
            return Err(Error::Dimension { expected: self.k, got: vec.len() });
        }
        self.map.insert(name, vec);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.map.iter().map(|(n, v)| (n.as_str(), v.as_slice()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|n| n.as_str())
    }

    /// Write as `# typeahead-<kind> v1` header plus `name<TAB>v1,...` rows.
    pub fn save(&self, path: &Path, kind: &str) -> Result<()> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "# typeahead-{kind} v1")?;
        writeln!(f, "# k={} n={}", self.k, self.map.len())?;
        for (name, vec) in &self.map {
            let joined =
                vec.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            writeln!(f, "{name}\t{joined}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path, kind: &str) -> Result<VectorTable> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let expect_header = format!("# typeahead-{kind} v1");
        match lines.next() {
            Some((_, l)) if l == expect_header => {}
            other => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: other.map(|(i, _)| i).unwrap_or(1),
                    msg: format!("expected header {expect_header:?}"),
                })
            }
        }
        let k = match lines.next() {
            Some((line, l)) => parse_meta(path, line, l, "k")?,
            None => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: 2,
                    msg: "missing metadata line".into(),
                })
            }
        };
        let mut table = VectorTable::new(k);
        for (line_no, line) in lines {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, values) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: line_no,
                msg: "expected name<TAB>values".into(),
            })?;
            let vec = parse_float_list(path, line_no, values)?;
            table.insert(name.to_string(), vec).map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: line_no,
                msg: format!("expected {k} values"),
            })?;
        }
        Ok(table)
    }
}

fn parse_meta(path: &Path, line_no: usize, line: &str, key: &str) -> Result<usize> {
    line.trim_start_matches('#')
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix(&format!("{key}=")))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: line_no,
            msg: format!("missing {key}= in metadata"),
        })
}

fn parse_float_list(path: &Path, line_no: usize, values: &str) -> Result<Vec<f64>> {
    values
        .split(',')
        .map(|t| {
            t.parse::<f64>().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: line_no,
                msg: format!("bad float {t:?}: {e}"),
            })
        })
        .collect()
}

/// Reduce every catalog record through the PCA model.
pub fn reduce_catalog(model: &PcaModel, catalog: &[CatalogRecord]) -> Result<VectorTable> {
    let mut table = VectorTable::new(model.k());
    for record in catalog {
        table.insert(record.sku.clone(), transform(model, &record.raw_vector)?)?;
    }
    Ok(table)
}

/// Build query vectors as click-frequency-weighted averages of product
/// vectors: `vec(q) = Σ_i w_i · vec(p_i)`, `w_i = freq_i / Σ freq`.
/// Weights are a convex combination by construction.
pub fn build_query_vectors(
    search_log: &[SearchLogEntry],
    products: &VectorTable,
) -> Result<VectorTable> {
    let mut table = VectorTable::new(products.k());
    for entry in search_log {
        let total: u64 = entry.clicked_skus.iter().map(|(_, n)| n).sum();
        if total == 0 {
            continue;
        }
        let mut acc = vec![0.0; products.k()];
        for (sku, count) in &entry.clicked_skus {
            let vec = products
                .get(sku)
                .ok_or_else(|| Error::UnknownSku(sku.clone()))?;
            let w = *count as f64 / total as f64;
            for (a, v) in acc.iter_mut().zip(vec) {
                *a += w * v;
            }
        }
        table.insert(entry.query.clone(), acc)?;
    }
    Ok(table)
}

/// How a session's viewed-product vectors are presented to a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    /// Arithmetic mean; order-invariant.
    Average,
    /// The ordered sequence, untouched.
    Sequence,
}

/// A pooled session representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Pooled {
    Vector(Vec<f64>),
    Sequence(Vec<Vec<f64>>),
}

/// Pool the vectors of in-session viewed products.
pub fn pool_session(vectors: &[Vec<f64>], mode: PoolMode) -> Result<Pooled> {
    if vectors.is_empty() {
        return Err(Error::Argument("pool_session: empty view list".into()));
    }
    match mode {
        PoolMode::Average => Ok(Pooled::Vector(linalg::mean(vectors)?)),
        PoolMode::Sequence => Ok(Pooled::Sequence(vectors.to_vec())),
    }
}

pub fn save_pca(path: &Path, model: &PcaModel) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# typeahead-pca v1")?;
    writeln!(f, "# d_raw={} k={}", model.d_raw(), model.k())?;
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    writeln!(f, "mean\t{}", join(&model.mean))?;
    writeln!(f, "evr\t{}", join(&model.explained_variance_ratio))?;
    for row in &model.components {
        writeln!(f, "component\t{}", join(row))?;
    }
    Ok(())
}

pub fn load_pca(path: &Path) -> Result<PcaModel> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, "# typeahead-pca v1")) => {}
        other => {
            return Err(err(
                other.map(|(i, _)| i).unwrap_or(1),
                "expected header \"# typeahead-pca v1\"".to_string(),
            ))
        }
    }
    lines.next();
    let mut mean = None;
    let mut evr = None;
    let mut components = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (tag, values) = line
            .split_once('\t')
            .ok_or_else(|| err(line_no, "expected tag<TAB>values".into()))?;
        let vec = parse_float_list(path, line_no, values)?;
        match tag {
            "mean" => mean = Some(vec),
            "evr" => evr = Some(vec),
            "component" => components.push(vec),
            other => return Err(err(line_no, format!("unknown tag {other:?}"))),
        }
    }
    let mean = mean.ok_or_else(|| err(0, "missing mean row".into()))?;
    let explained_variance_ratio = evr.ok_or_else(|| err(0, "missing evr row".into()))?;
    if components.len() != explained_variance_ratio.len()
        || components.iter().any(|c| c.len() != mean.len())
    {
        return Err(err(0, "inconsistent pca rows".into()));
    }
    Ok(PcaModel { mean, components, explained_variance_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Cyclic Jacobi eigensolver for symmetric matrices; the independent
    /// oracle for the covariance eigendecomposition.
    fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = a.len();
        let mut v = vec![vec![0.0; n]; n];
        for (i, row) in v.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for _ in 0..100 {
            let mut off = 0.0;
            for r in 0..n {
                for c in (r + 1)..n {
                    off += a[r][c] * a[r][c];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q].abs() < 1e-18 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                    for row in v.iter_mut() {
                        let (vp, vq) = (row[p], row[q]);
                        row[p] = c * vp - s * vq;
                        row[q] = s * vp + c * vq;
                    }
                }
            }
        }
        let eigenvalues: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        // Columns of v are eigenvectors; return them as rows.
        let eigenvectors: Vec<Vec<f64>> =
            (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
        (eigenvalues, eigenvectors)
    }

    fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn rank_two_plane_explains_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 10;
        let u: Vec<f64> = (0..d).map(|i| if i == 0 { 3.0 } else { 0.1 * i as f64 }).collect();
        let w: Vec<f64> = (0..d).map(|i| if i == 5 { 2.0 } else { -0.05 * i as f64 }).collect();
        let data: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let a: f64 = rng.random_range(-2.0..2.0);
                let b: f64 = rng.random_range(-2.0..2.0);
                (0..d).map(|i| 0.5 + a * u[i] + b * w[i]).collect()
            })
            .collect();
        let model = fit_pca(&data, 2).unwrap();
        let total: f64 = model.explained_variance_ratio.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "evr sum {total}");
        // Reconstruction property for rank-k data.
        for x in &data {
            let z = transform(&model, x).unwrap();
            let back = inverse_transform(&model, &z).unwrap();
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_vectors_rejected() {
        let data = vec![vec![1.0, 2.0, 3.0]; 10];
        assert!(matches!(fit_pca(&data, 2), Err(Error::Degenerate(_))));
    }

    #[test]
    fn k_larger_than_dim_or_samples_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_data(&mut rng, 5, 3);
        assert!(matches!(fit_pca(&data, 4), Err(Error::Argument(_))));
        let data = random_data(&mut rng, 3, 8);
        assert!(matches!(fit_pca(&data, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn matches_jacobi_oracle_on_random_catalog() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, d, k) = (200, 64, 50);
        let data = random_data(&mut rng, n, d);
        let model = fit_pca(&data, k).unwrap();

        let mean = linalg::mean(&data).unwrap();
        let mut cov = vec![vec![0.0; d]; d];
        for x in &data {
            let c: Vec<f64> = x.iter().zip(&mean).map(|(a, m)| a - m).collect();
            for r in 0..d {
                for j in 0..d {
                    cov[r][j] += c[r] * c[j] / n as f64;
                }
            }
        }
        let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
        let (eigenvalues, eigenvectors) = jacobi_eigen(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());

        for (i, &idx) in order.iter().take(k).enumerate() {
            let want_evr = eigenvalues[idx] / trace;
            assert!(
                (model.explained_variance_ratio[i] - want_evr).abs() < 1e-9,
                "evr {i}: {} vs oracle {want_evr}",
                model.explained_variance_ratio[i]
            );
            // Compare up to sign.
            let got = &model.components[i];
            let oracle = &eigenvectors[idx];
            let sign = if linalg::dot(got, oracle) < 0.0 { -1.0 } else { 1.0 };
            for (g, o) in got.iter().zip(oracle) {
                assert!((g - sign * o).abs() < 1e-6, "component {i} mismatch");
            }
        }
    }

    #[test]
    fn component_rows_orthonormal_and_evr_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = fit_pca(&random_data(&mut rng, 80, 12), 8).unwrap();
        for i in 0..model.k() {
            for j in 0..model.k() {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = linalg::dot(&model.components[i], &model.components[j]);
                assert!((got - want).abs() < 1e-6, "({i},{j}) = {got}");
            }
            let evr = model.explained_variance_ratio[i];
            assert!((0.0..=1.0).contains(&evr));
            if i > 0 {
                assert!(evr <= model.explained_variance_ratio[i - 1]);
            }
        }
        // Sign convention: first nonzero entry of each row positive.
        for row in &model.components {
            let first = row.iter().find(|v| v.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn transform_of_mean_is_zero_and_basis_aligns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = fit_pca(&random_data(&mut rng, 40, 6), 3).unwrap();
        let z = transform(&model, &model.mean).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));

        let shifted: Vec<f64> =
            model.mean.iter().zip(&model.components[0]).map(|(m, c)| m + c).collect();
        let z = transform(&model, &shifted).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-9);
        for v in &z[1..] {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn transform_rejects_wrong_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = fit_pca(&random_data(&mut rng, 20, 5), 2).unwrap();
        assert!(matches!(
            transform(&model, &[1.0, 2.0]),
            Err(Error::Dimension { expected: 5, got: 2 })
        ));
    }

    fn products_fixture() -> VectorTable {
        let mut t = VectorTable::new(3);
        t.insert("A".into(), vec![1.0, 0.0, 2.0]).unwrap();
        t.insert("B".into(), vec![0.0, 4.0, -2.0]).unwrap();
        t.insert("C".into(), vec![-1.0, 1.0, 1.0]).unwrap();
        t
    }

    fn log_entry(query: &str, clicks: &[(&str, u64)]) -> SearchLogEntry {
        SearchLogEntry {
            query: query.into(),
            clicked_skus: clicks.iter().map(|(s, n)| (s.to_string(), *n)).collect(),
            shop_id: "shop_a".into(),
        }
    }

    #[test]
    fn query_vector_single_product_is_exact() {
        let products = products_fixture();
        let table =
            build_query_vectors(&[log_entry("ski", &[("A", 7)])], &products).unwrap();
        assert_eq!(table.get("ski").unwrap(), products.get("A").unwrap());
    }

    #[test]
    fn query_vector_equal_counts_is_midpoint() {
        let products = products_fixture();
        let table =
            build_query_vectors(&[log_entry("ski", &[("A", 2), ("B", 2)])], &products).unwrap();
        assert_eq!(table.get("ski").unwrap(), &[0.5, 2.0, 0.0]);
    }

    #[test]
    fn query_vector_matches_weighted_sum_oracle() {
        let products = products_fixture();
        let table =
            build_query_vectors(&[log_entry("ski", &[("A", 3), ("B", 1)])], &products).unwrap();
        let got = table.get("ski").unwrap();
        // Oracle: accumulate weighted sums the slow way.
        let a = products.get("A").unwrap();
        let b = products.get("B").unwrap();
        for i in 0..3 {
            let want = 0.75 * a[i] + 0.25 * b[i];
            assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn query_vector_missing_sku_named() {
        let products = products_fixture();
        let err = build_query_vectors(&[log_entry("ski", &[("Z", 1)])], &products).unwrap_err();
        assert!(matches!(err, Error::UnknownSku(s) if s == "Z"));
    }

    #[test]
    fn pooling_average_and_sequence() {
        let v1 = vec![1.0, -2.0];
        let v2 = vec![-1.0, 2.0];
        assert_eq!(
            pool_session(&[v1.clone()], PoolMode::Average).unwrap(),
            Pooled::Vector(v1.clone())
        );
        assert_eq!(
            pool_session(&[v1.clone(), v2.clone()], PoolMode::Average).unwrap(),
            Pooled::Vector(vec![0.0, 0.0])
        );
        assert_eq!(
            pool_session(&[v1.clone(), v2.clone()], PoolMode::Sequence).unwrap(),
            Pooled::Sequence(vec![v1, v2])
        );
        assert!(pool_session(&[], PoolMode::Average).is_err());
    }

    #[test]
    fn pooling_average_is_permutation_invariant() {
        let vs = vec![vec![1.0, 2.0], vec![3.0, -4.0], vec![0.5, 0.25]];
        let mut perm = vs.clone();
        perm.rotate_left(1);
        perm.swap(0, 1);
        // Oracle: element-wise mean computed directly.
        let want: Vec<f64> =
            (0..2).map(|i| vs.iter().map(|v| v[i]).sum::<f64>() / 3.0).collect();
        for arrangement in [vs, perm] {
            match pool_session(&arrangement, PoolMode::Average).unwrap() {
                Pooled::Vector(got) => {
                    for (g, w) in got.iter().zip(&want) {
                        assert!((g - w).abs() < 1e-12);
                    }
                }
                Pooled::Sequence(_) => unreachable!(),
            }
        }
    }

    #[test]
    fn pca_serialization_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = fit_pca(&random_data(&mut rng, 30, 7), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pca.tsv");
        save_pca(&path, &model).unwrap();
        let loaded = load_pca(&path).unwrap();
        assert_eq!(loaded, model);
        // Byte-identical on re-save: f64 Display round-trips exactly.
        let first = std::fs::read(&path).unwrap();
        save_pca(&path, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn vector_table_serialization_round_trips() {
        let table = products_fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.tsv");
        table.save(&path, PRODUCT_VECTOR_KIND).unwrap();
        let loaded = VectorTable::load(&path, PRODUCT_VECTOR_KIND).unwrap();
        assert_eq!(loaded, table);
        // Kind mismatch is a parse error.
        assert!(VectorTable::load(&path, QUERY_VECTOR_KIND).is_err());
    }

    #[test]
    fn reduce_catalog_maps_every_sku() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = random_data(&mut rng, 25, 6);
        let model = fit_pca(&data, 3).unwrap();
        let catalog: Vec<CatalogRecord> = data
            .iter()
            .enumerate()
            .map(|(i, v)| CatalogRecord {
                sku: format!("p{i}"),
                shop_id: "shop_a".into(),
                category: "ski".into(),
                raw_vector: v.clone(),
            })
            .collect();
        let table = reduce_catalog(&model, &catalog).unwrap();
        assert_eq!(table.len(), 25);
        assert_eq!(table.get("p3").unwrap(), transform(&model, &data[3]).unwrap().as_slice());
    }
}
