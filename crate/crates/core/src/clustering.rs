//! Lloyd's K-means with Forgy random restarts or mixture-component seeding.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::numcore::{l2_normalize, Tensor, DEGENERACY_EPS};
use crate::rng::{stream_with_index, Rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    RandomRestart,
    Mixem,
    /// No K-means at all: dominant components are the clusters.
    MaxComponent,
}

impl InitKind {
    pub fn name(self) -> &'static str {
        match self {
            InitKind::RandomRestart => "random-restart",
            InitKind::Mixem => "mixem",
            InitKind::MaxComponent => "max-component",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    /// `[K, d]`
    pub centroids: Tensor,
    pub inertia: f64,
    pub init_kind: InitKind,
    pub iterations: usize,
    pub restarts_used: usize,
    /// Inertia after the initial assignment and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams { max_iter: 300, tol: 1e-6 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest index on ties.
fn nearest(point: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.row_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// `Σ_i ‖x_i − c_{a(i)}‖²`.
pub fn inertia(points: &Tensor, centroids: &Tensor, assignments: &[usize]) -> f64 {
    points
        .row_iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, centroids.row(a)))
        .sum()
}

fn assign_all(points: &Tensor, centroids: &Tensor, assignments: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, p) in points.row_iter().enumerate() {
        let (k, _) = nearest(p, centroids);
        if assignments[i] != k {
            assignments[i] = k;
            changed = true;
        }
    }
    changed
}

/// Mean of every cluster; an empty cluster seizes the point farthest from its
/// current centroid (taken only from clusters with more than one member).
fn update_centroids(points: &Tensor, old: &Tensor, assignments: &mut [usize]) -> Tensor {
    let (k, d) = (old.rows(), old.cols());
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.row_iter().enumerate() {
            let a = assignments[i];
            if counts[a] <= 1 {
                continue;
            }
            let dist = sq_dist(p, old.row(a));
            if best.is_none_or(|(_, bd)| dist > bd) {
                best = Some((i, dist));
            }
        }
        if let Some((i, _)) = best {
            counts[assignments[i]] -= 1;
            assignments[i] = empty;
            counts[empty] = 1;
        }
    }

    let mut sums = vec![0.0; k * d];
    for (p, &a) in points.row_iter().zip(assignments.iter()) {
        for (s, x) in sums[a * d..(a + 1) * d].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            // Only reachable when K > N, which kmeans rejects.
            sums[c * d..(c + 1) * d].copy_from_slice(old.row(c));
        } else {
            let inv = 1.0 / n as f64;
            sums[c * d..(c + 1) * d].iter_mut().for_each(|s| *s *= inv);
        }
    }
    Tensor::matrix(k, d, sums).expect("sized")
}

fn check_points(points: &Tensor, k: usize) -> Result<(usize, usize)> {
    let (n, d) = points.dims2()?;
    if k == 0 {
        return Err(Error::contract("K must be >= 1"));
    }
    if k > n {
        return Err(Error::contract(format!("K = {k} exceeds the {n} points")));
    }
    if !points.is_finite() {
        return Err(Error::domain("non-finite point coordinates"));
    }
    Ok((n, d))
}

/// Lloyd iterations from `init_centroids` until no assignment changes, the
/// largest centroid shift drops below `tol`, or `max_iter` is reached.
pub fn kmeans(points: &Tensor, init_centroids: &Tensor, params: &KMeansParams) -> Result<ClusterResult> {
    let (k, cd) = init_centroids.dims2()?;
    let (n, d) = check_points(points, k)?;
    if cd != d {
        return Err(Error::contract(format!("centroids have {cd} columns, points have {d}")));
    }
    let mut centroids = init_centroids.clone();
    let mut assignments = vec![0usize; n];
    assign_all(points, &centroids, &mut assignments);
    let mut history = vec![inertia(points, &centroids, &assignments)];
    let mut iterations = 0;
    while iterations < params.max_iter {
        let next = update_centroids(points, &centroids, &mut assignments);
        let shift = centroids
            .row_iter()
            .zip(next.row_iter())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        let changed = assign_all(points, &centroids, &mut assignments);
        iterations += 1;
        history.push(inertia(points, &centroids, &assignments));
        if !changed || shift < params.tol {
            break;
        }
    }
    Ok(ClusterResult {
        inertia: *history.last().expect("non-empty"),
        assignments,
        centroids,
        init_kind: InitKind::RandomRestart,
        iterations,
        restarts_used: 1,
        inertia_history: history,
    })
}

/// K distinct data points drawn uniformly (Forgy initialization).
pub fn forgy_init(points: &Tensor, k: usize, rng: &mut Rng) -> Result<Tensor> {
    let (n, _) = check_points(points, k)?;
    let idx = sample(rng, n, k).into_vec();
    Ok(points.select_rows(&idx))
}

/// Random stream used by restart `r` of [`random_restart_kmeans`].
pub fn restart_rng(seed: u64, restart: usize) -> Rng {
    stream_with_index(seed, Stream::KMeans, restart as u64)
}

/// Best (minimum-inertia) of `restarts` Forgy-initialized runs; ties keep the
/// earliest restart.
pub fn random_restart_kmeans(
    points: &Tensor,
    k: usize,
    restarts: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<ClusterResult> {
    if restarts == 0 {
        return Err(Error::contract("restarts must be >= 1"));
    }
    let mut best: Option<ClusterResult> = None;
    for r in 0..restarts {
        let init = forgy_init(points, k, &mut restart_rng(seed, r))?;
        let res = kmeans(points, &init, params)?;
        if best.as_ref().is_none_or(|b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    let mut best = best.expect("restarts >= 1");
    best.restarts_used = restarts;
    Ok(best)
}

/// Initial centroids from mixture components: the mean representation of the
/// samples dominated by each of the `k` most frequent components (ordered by
/// component index). A selected component with no members is replaced by the
/// point farthest from the centroids chosen so far.
pub fn mixem_init(representations: &Tensor, dominant: &[usize], num_components: usize, k: usize) -> Result<Tensor> {
    let (n, d) = representations.dims2()?;
    if dominant.len() != n {
        return Err(Error::contract(format!("{} dominant indices for {n} points", dominant.len())));
    }
    if k == 0 || num_components < k {
        return Err(Error::contract(format!(
            "need 1 <= K <= M, got K = {k}, M = {num_components}"
        )));
    }
    if let Some(&bad) = dominant.iter().find(|&&c| c >= num_components) {
        return Err(Error::contract(format!("dominant index {bad} out of range for M = {num_components}")));
    }
    if n < k {
        return Err(Error::contract(format!(
            "only {n} points for K = {k} centroids"
        )));
    }

    let mut counts = vec![0usize; num_components];
    for &c in dominant {
        counts[c] += 1;
    }
    let mut order: Vec<usize> = (0..num_components).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut selected: Vec<usize> = order[..k].to_vec();
    selected.sort_unstable();

    let mut rows: Vec<Option<Vec<f64>>> = selected
        .iter()
        .map(|&c| {
            (counts[c] > 0).then(|| {
                let mut mean = vec![0.0; d];
                for (p, _) in representations.row_iter().zip(dominant).filter(|(_, &dc)| dc == c) {
                    mean.iter_mut().zip(p).for_each(|(m, x)| *m += x);
                }
                let inv = 1.0 / counts[c] as f64;
                mean.iter_mut().for_each(|m| *m *= inv);
                mean
            })
        })
        .collect();

    let mut used = vec![false; n];
    for slot in 0..k {
        if rows[slot].is_some() {
            continue;
        }
        let chosen: Vec<&Vec<f64>> = rows.iter().flatten().collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in representations.row_iter().enumerate() {
            if used[i] {
                continue;
            }
            let dist = chosen.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| dist > bd) {
                best = Some((i, dist));
            }
        }
        let (i, _) = best.ok_or_else(|| Error::contract("fewer than K non-empty components after fallback"))?;
        used[i] = true;
        rows[slot] = Some(representations.row(i).to_vec());
    }
    let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.expect("filled")).collect();
    Tensor::from_rows(&rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterMode {
    RandomRestart { restarts: usize, seed: u64 },
    MixemInit,
    MaxComponent,
}

impl ClusterMode {
    pub fn name(&self) -> &'static str {
        match self {
            ClusterMode::RandomRestart { .. } => "kmeans-random",
            ClusterMode::MixemInit => "kmeans-mixem",
            ClusterMode::MaxComponent => "max-component",
        }
    }
}

/// The matrix a pipeline clusters: `representations`, optionally with every
/// row scaled to unit norm (degenerate rows become zeros).
pub fn prepare_points(representations: &Tensor, normalize: bool) -> Result<Tensor> {
    let (n, d) = representations.dims2()?;
    if !normalize {
        return Ok(representations.clone());
    }
    let mut data = Vec::with_capacity(n * d);
    for r in representations.row_iter() {
        data.extend(l2_normalize(r, DEGENERACY_EPS).vector);
    }
    Tensor::matrix(n, d, data)
}

/// Mixture output needed by the component-based modes.
#[derive(Clone, Copy, Debug)]
pub struct Components<'a> {
    pub dominant: &'a [usize],
    pub num_components: usize,
}

pub fn cluster_pipeline(
    representations: &Tensor,
    components: Option<Components<'_>>,
    k: usize,
    mode: ClusterMode,
    normalize: bool,
    params: &KMeansParams,
) -> Result<ClusterResult> {
    let points = prepare_points(representations, normalize)?;
    let need_components = || components.ok_or_else(|| Error::contract(format!("{} needs mixture components", mode.name())));
    match mode {
        ClusterMode::RandomRestart { restarts, seed } => random_restart_kmeans(&points, k, restarts, seed, params),
        ClusterMode::MixemInit => {
            let c = need_components()?;
            let init = mixem_init(&points, c.dominant, c.num_components, k)?;
            let mut res = kmeans(&points, &init, params)?;
            res.init_kind = InitKind::Mixem;
            Ok(res)
        }
        ClusterMode::MaxComponent => {
            let c = need_components()?;
            let (n, d) = points.dims2()?;
            if c.dominant.len() != n {
                return Err(Error::contract(format!("{} dominant indices for {n} points", c.dominant.len())));
            }
            if let Some(&bad) = c.dominant.iter().find(|&&a| a >= c.num_components) {
                return Err(Error::contract(format!("dominant index {bad} out of range")));
            }
            let mut sums = vec![0.0; c.num_components * d];
            let mut counts = vec![0usize; c.num_components];
            for (p, &a) in points.row_iter().zip(c.dominant) {
                counts[a] += 1;
                sums[a * d..(a + 1) * d].iter_mut().zip(p).for_each(|(s, x)| *s += x);
            }
            for (m, &cnt) in counts.iter().enumerate() {
                if cnt > 0 {
                    let inv = 1.0 / cnt as f64;
                    sums[m * d..(m + 1) * d].iter_mut().for_each(|s| *s *= inv);
                }
            }
            let centroids = Tensor::matrix(c.num_components, d, sums)?;
            let inertia = inertia(&points, &centroids, c.dominant);
            Ok(ClusterResult {
                assignments: c.dominant.to_vec(),
                centroids,
                inertia,
                init_kind: InitKind::MaxComponent,
                iterations: 0,
                restarts_used: 0,
                inertia_history: vec![inertia],
            })
        }
    }
}
