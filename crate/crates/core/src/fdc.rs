//! Feature-domain clustering for pilot selection.
//!
//! Images are mapped to HSV feature vectors, clustered with Lloyd's
//! alternation into `ceil(rho |D|)` groups, and the image nearest each
//! centroid becomes that group's pilot representative.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scenario::{pilot_size, ClientDataset};

pub const MAX_ROUNDS: usize = 300;
const HIST_BINS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// Per-pixel HSV triples, flattened.
    #[default]
    Flattened,
    /// Normalized 16-bin histograms of H, S and V (48 values).
    Histogram,
}

/// HSV of one RGB pixel; hue scaled from degrees to `[0, 1)`.
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue_deg = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    [hue_deg / 360.0, sat, max]
}

pub fn rgb_to_hsv_features(img: &Image, mode: FeatureMode) -> Vec<f64> {
    match mode {
        FeatureMode::Flattened => img.pixels().flat_map(rgb_to_hsv).collect(),
        FeatureMode::Histogram => {
            let mut hist = vec![0.0; 3 * HIST_BINS];
            let count = (img.height() * img.width()) as f64;
            for hsv in img.pixels().map(rgb_to_hsv) {
                for (c, v) in hsv.into_iter().enumerate() {
                    let bin = ((v * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
                    hist[c * HIST_BINS + bin] += 1.0 / count;
                }
            }
            hist
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster label per feature vector.
    pub assignment: Vec<usize>,
    /// Clustering objective after each alternation round.
    pub objective_trace: Vec<f64>,
}

impl ClusterState {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment.iter().enumerate().filter(move |(_, &c)| c == cluster).map(|(i, _)| i)
    }

    pub fn objective(&self, features: &[Vec<f64>]) -> f64 {
        clustering_objective(features, &self.centroids, &self.assignment)
    }
}

pub fn clustering_objective(features: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    features.iter().zip(assignment).map(|(f, &c)| sq_dist(f, &centroids[c])).sum()
}

/// Farthest-point seeding from a random first point: each further centre is
/// the point farthest from all chosen centres, lowest index on ties. Once
/// every remaining point coincides with a centre, the lowest unused index.
fn seed_centroids<R: Rng + ?Sized>(features: &[Vec<f64>], m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![features[first].clone()];
    let mut d2: Vec<f64> = features.iter().map(|f| sq_dist(f, &features[first])).collect();
    while centroids.len() < m {
        let mut pick = chosen.iter().position(|&c| !c).expect("m <= n");
        for (i, &d) in d2.iter().enumerate() {
            if !chosen[i] && d > d2[pick] {
                pick = i;
            }
        }
        chosen[pick] = true;
        centroids.push(features[pick].clone());
        for (i, f) in features.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(f, &features[pick]));
        }
    }
    centroids
}

fn nearest(f: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(f, cen);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Lloyd alternation between nearest-centroid assignment and mean update.
///
/// An empty cluster is re-seeded with the point farthest from its own
/// centroid among clusters that can spare a member, so every returned
/// cluster is nonempty.
pub fn cluster<R: Rng + ?Sized>(features: &[Vec<f64>], m: usize, rng: &mut R) -> Result<ClusterState> {
    let n = features.len();
    if n == 0 {
        return Err(Error::field("features", "no feature vectors to cluster"));
    }
    if m == 0 || m > n {
        return Err(Error::field("m", format!("cluster count {m} not in 1..={n}")));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch("feature vectors differ in length".into()));
    }

    let mut centroids = seed_centroids(features, m, rng);
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..MAX_ROUNDS {
        let next: Vec<usize> = features.iter().map(|f| nearest(f, &centroids)).collect();
        let mut next = next;
        repair_empty(features, &mut centroids, &mut next, m);
        let stable = next == assignment;
        assignment = next;

        let mut sums = vec![vec![0.0; dim]; m];
        let mut counts = vec![0usize; m];
        for (f, &c) in features.iter().zip(&assignment) {
            counts[c] += 1;
            sums[c].iter_mut().zip(f).for_each(|(s, v)| *s += v);
        }
        for (c, sum) in sums.into_iter().enumerate() {
            let cnt = counts[c] as f64;
            centroids[c] = sum.into_iter().map(|s| s / cnt).collect();
        }
        trace.push(clustering_objective(features, &centroids, &assignment));
        if stable {
            break;
        }
    }
    Ok(ClusterState { centroids, assignment, objective_trace: trace })
}

fn repair_empty(features: &[Vec<f64>], centroids: &mut [Vec<f64>], assignment: &mut [usize], m: usize) {
    loop {
        let mut counts = vec![0usize; m];
        for &c in assignment.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut donor = None;
        let mut best = f64::NEG_INFINITY;
        for (i, f) in features.iter().enumerate() {
            let c = assignment[i];
            if counts[c] < 2 {
                continue;
            }
            let d = sq_dist(f, &centroids[c]);
            if d > best {
                best = d;
                donor = Some(i);
            }
        }
        let i = donor.expect("m <= n leaves a cluster with two members");
        assignment[i] = empty;
        centroids[empty] = features[i].clone();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotSet {
    /// Selected image indices, one per cluster, in cluster order.
    pub indices: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
}

impl PilotSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Picks, per cluster, the member closest to the centroid (lowest index on ties).
pub fn select_representatives(state: &ClusterState, features: &[Vec<f64>]) -> PilotSet {
    let mut taken = vec![false; features.len()];
    let mut indices = Vec::with_capacity(state.centroids.len());
    for (c, centroid) in state.centroids.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for i in state.members(c) {
            let d = sq_dist(&features[i], centroid);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let pick = match best {
            Some((i, _)) => i,
            // unreachable after `cluster`, kept for hand-built states
            None => (0..features.len())
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| {
                    let da = sq_dist(&features[a], &state.centroids[state.assignment[a]]);
                    let db = sq_dist(&features[b], &state.centroids[state.assignment[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("more points than clusters"),
        };
        taken[pick] = true;
        indices.push(pick);
    }
    PilotSet { indices, centroids: state.centroids.clone(), assignment: state.assignment.clone() }
}

/// Full FDC sampling of one client's dataset.
pub fn fdc_sample<R: Rng + ?Sized>(
    dataset: &ClientDataset,
    rho: f64,
    mode: FeatureMode,
    rng: &mut R,
) -> Result<PilotSet> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::field("rho", format!("{rho} not in (0, 1)")));
    }
    if dataset.is_empty() {
        return Err(Error::field("images", "dataset is empty"));
    }
    let m = pilot_size(rho, dataset.len());
    let features: Vec<Vec<f64>> = dataset.images.iter().map(|img| rgb_to_hsv_features(img, mode)).collect();
    let state = cluster(&features, m, rng)?;
    Ok(select_representatives(&state, &features))
}

/// Uniform sampling without replacement, the reference scheme FDC is
/// compared against.
pub fn random_sample<R: Rng + ?Sized>(dataset_size: usize, rho: f64, rng: &mut R) -> Vec<usize> {
    let m = pilot_size(rho, dataset_size);
    let mut idx = rand::seq::index::sample(rng, dataset_size, m).into_vec();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_synthetic_datasets, ScenarioConfig, SyntheticSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: [f64; 3], b: [f64; 3]) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn hsv_examples() {
        assert!(close(rgb_to_hsv([1.0, 1.0, 1.0]), [0.0, 0.0, 1.0]));
        assert!(close(rgb_to_hsv([1.0, 0.0, 0.0]), [0.0, 1.0, 1.0]));
        assert!(close(rgb_to_hsv([0.5, 0.25, 0.75]), [0.75, 2.0 / 3.0, 0.75]));
        assert!(close(rgb_to_hsv([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]));
        // magenta-ish red wraps to the top of the hue circle
        assert!(rgb_to_hsv([1.0, 0.0, 0.2])[0] > 0.95);
    }

    #[test]
    fn features_lie_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Image::new(4, 4, (0..48).map(|_| rng.random()).collect()).unwrap();
        for mode in [FeatureMode::Flattened, FeatureMode::Histogram] {
            let f = rgb_to_hsv_features(&img, mode);
            assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(rgb_to_hsv_features(&img, FeatureMode::Flattened).len(), 48);
        let hist = rgb_to_hsv_features(&img, FeatureMode::Histogram);
        assert_eq!(hist.len(), 48);
        assert!((hist.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn separable_groups_recover_means() {
        let features = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![0.0, 0.1], vec![5.0, 5.0], vec![5.2, 5.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = cluster(&features, 2, &mut rng).unwrap();
        let mut cents = st.centroids.clone();
        cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!((cents[0][0] - 0.1 / 3.0).abs() < 1e-12 && (cents[0][1] - 0.1 / 3.0).abs() < 1e-12);
        assert!((cents[1][0] - 5.1).abs() < 1e-12 && (cents[1][1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points() {
        let features = vec![vec![0.3, 0.7]; 6];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = cluster(&features, 1, &mut rng).unwrap();
        assert!((st.centroids[0][0] - 0.3).abs() < 1e-15 && (st.centroids[0][1] - 0.7).abs() < 1e-15);
        assert!(st.objective(&features) < 1e-28);
        // more clusters than distinct points still yields distinct pilots
        let st = cluster(&features, 4, &mut rng).unwrap();
        let pilot = select_representatives(&st, &features);
        let mut idx = pilot.indices.clone();
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), 4);
    }

    #[test]
    fn objective_matches_recomputation_and_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let features: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
        let st = cluster(&features, 3, &mut rng).unwrap();
        let mut direct = 0.0;
        for (i, f) in features.iter().enumerate() {
            let c = &st.centroids[st.assignment[i]];
            direct += (0..3).map(|d| (f[d] - c[d]).powi(2)).sum::<f64>();
        }
        assert!((st.objective_trace.last().unwrap() - direct).abs() < 1e-12);
        assert!(st.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(cluster(&[], 1, &mut rng).is_err());
        assert!(cluster(&[vec![0.0]], 2, &mut rng).is_err());
    }

    #[test]
    fn representative_is_nearest_member() {
        let features = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let st = ClusterState { centroids: vec![vec![0.4, 0.0]], assignment: vec![0, 0], objective_trace: vec![] };
        assert_eq!(select_representatives(&st, &features).indices, vec![0]);
        let single = ClusterState {
            centroids: vec![vec![9.0, 9.0], vec![0.5, 0.0]],
            assignment: vec![1, 0],
            objective_trace: vec![],
        };
        assert_eq!(select_representatives(&single, &features).indices, vec![1, 0]);
    }

    #[test]
    fn representatives_match_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let features: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
            let st = cluster(&features, 5, &mut rng).unwrap();
            let pilot = select_representatives(&st, &features);
            for (c, &chosen) in pilot.indices.iter().enumerate() {
                let mut best = usize::MAX;
                let mut best_d = f64::INFINITY;
                for i in 0..features.len() {
                    if st.assignment[i] != c {
                        continue;
                    }
                    let d: f64 = features[i].iter().zip(&st.centroids[c]).map(|(a, b)| (a - b).powi(2)).sum();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                assert_eq!(chosen, best);
            }
        }
    }

    #[test]
    fn pilot_size_and_prototype_coverage() {
        let mut cfg = ScenarioConfig::reference(4);
        cfg.dataset_sizes = vec![25; 5];
        let ds = generate_synthetic_datasets(&cfg, &SyntheticSpec::new(3, 0.02)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pilot = fdc_sample(&ds[0], 0.1, FeatureMode::Flattened, &mut rng).unwrap();
        assert_eq!(pilot.len(), 3);
        let mut groups: Vec<usize> = pilot.indices.iter().map(|i| i % 3).collect();
        groups.sort();
        assert_eq!(groups, vec![0, 1, 2]);
        assert!(fdc_sample(&ds[0], 1.0, FeatureMode::Flattened, &mut rng).is_err());
    }

    #[test]
    fn fdc_is_deterministic() {
        let cfg = ScenarioConfig::reference(8);
        let ds = generate_synthetic_datasets(&cfg, &SyntheticSpec::new(6, 0.05)).unwrap();
        let run = || fdc_sample(&ds[1], 0.1, FeatureMode::Flattened, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(run(), run());
    }
}
