//! Scenario configuration, client datasets and the input file formats.
//!
//! A scenario file is a flat TOML document. Per-client keys take either a
//! scalar (broadcast to every client) or a list of length `K`. Keys that are
//! naturally quoted in decibels accept a `_db` suffix (and the noise power
//! also `_dbm`), converted to linear units at load:
//!
//! ```toml
//! K = 5
//! N = 64
//! T = 350.0
//! P_max = 0.2
//! P_sum = 0.3
//! sigma2_dbm = -100.0
//! B = 1e7
//! V = [5.975e7, 6.011e7, 5.448e7, 5.403e7, 4.412e7]
//! D_sizes = 280
//! rho = 0.1
//! h0_db = -30.0
//! alpha = 3.0
//! omega_db = -20.0
//! K_ric_db = -26.0
//! seed = 7
//! ```
//!
//! Optional keys and defaults: `T_epsilon = 1e-3`, `rho = 0.1`,
//! `h0 = -30 dB`, `alpha = 3`, `omega = -20 dB`, `K_ric = -26 dB`,
//! `lambda_loss = 0.2`, `beta = 0.1`, `gamma = 100 / P_max^2`, `I_max = 60`,
//! `J_max = 20`, `seed = 0`, `server_position = [0, 0]`. When
//! `client_positions` is absent the clients are dropped uniformly on a
//! 100 m x 100 m square centred on the server, using the scenario seed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// RNG stream identifiers. Every consumer of the scenario seed draws from its
/// own ChaCha stream so that adding draws in one stage never perturbs another.
pub mod streams {
    pub const POSITIONS: u64 = 1;
    pub const CHANNEL: u64 = 2;
    pub const DATASETS: u64 = 3;
    pub const FDC: u64 = 4;
    pub const RANDOM_SAMPLING: u64 = 5;
}

/// Seeded generator for one stream of one scenario seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// All physical and algorithmic parameters of one experiment, in linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub clients: usize,
    pub antennas: usize,
    /// Total time budget (s).
    pub time_budget: f64,
    /// PTTM bisection tolerance (s).
    pub time_tol: f64,
    pub p_max: f64,
    pub p_sum: f64,
    /// Noise power (W).
    pub noise_power: f64,
    /// Per-client bandwidth (Hz).
    pub bandwidth: Vec<f64>,
    /// Per-sample volume (bits).
    pub sample_bits: Vec<f64>,
    pub dataset_sizes: Vec<usize>,
    pub rho: Vec<f64>,
    /// Path loss at 1 m (linear).
    pub ref_path_gain: f64,
    pub path_loss_exp: f64,
    /// Per-client shadow fading (linear).
    pub shadowing: Vec<f64>,
    /// Rician K-factor (linear).
    pub rician_k: f64,
    pub lambda_loss: f64,
    pub beta: f64,
    /// Coupling penalty; `None` selects `100 / P_max^2`.
    pub gamma: Option<f64>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub seed: u64,
    pub client_positions: Vec<[f64; 2]>,
    pub server_position: [f64; 2],
}

impl ScenarioConfig {
    /// The reference setup: the rubble dataset split into five 280-image
    /// clients. Volumes come from the per-client dataset sizes in MB.
    pub fn reference(seed: u64) -> Self {
        const VOLUMES_MB: [f64; 5] = [2091.26, 2103.93, 1906.72, 1891.08, 1544.17];
        const IMAGES: usize = 280;
        let mut cfg = Self {
            clients: 5,
            antennas: 64,
            time_budget: 350.0,
            time_tol: 1e-3,
            p_max: 0.2,
            p_sum: 0.3,
            noise_power: dbm_to_watts(-100.0),
            bandwidth: vec![1e7; 5],
            sample_bits: VOLUMES_MB.iter().map(|mb| mb * 8e6 / IMAGES as f64).collect(),
            dataset_sizes: vec![IMAGES; 5],
            rho: vec![0.1; 5],
            ref_path_gain: db_to_linear(-30.0),
            path_loss_exp: 3.0,
            shadowing: vec![db_to_linear(-20.0); 5],
            rician_k: db_to_linear(-26.0),
            lambda_loss: 0.2,
            beta: 0.1,
            gamma: None,
            outer_iters: 60,
            inner_iters: 20,
            seed,
            client_positions: Vec::new(),
            server_position: [0.0, 0.0],
        };
        cfg.client_positions = random_positions(cfg.clients, cfg.server_position, seed);
        cfg
    }

    /// Distances between each client and the server (m).
    pub fn distances(&self) -> Vec<f64> {
        let [sx, sy] = self.server_position;
        self.client_positions.iter().map(|[x, y]| ((x - sx).powi(2) + (y - sy).powi(2)).sqrt()).collect()
    }

    pub fn gamma_penalty(&self) -> f64 {
        self.gamma.unwrap_or(100.0 / (self.p_max * self.p_max))
    }

    /// Pilot sizes `ceil(rho_k |D_k|)`.
    pub fn pilot_sizes(&self) -> Vec<usize> {
        self.rho.iter().zip(&self.dataset_sizes).map(|(&r, &d)| pilot_size(r, d)).collect()
    }

    /// Returns a copy whose seed-dependent quantities are redrawn for `seed`.
    /// Explicit positions are kept unless `redraw_positions` is set.
    pub fn with_seed(&self, seed: u64, redraw_positions: bool) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        if redraw_positions {
            cfg.client_positions = random_positions(cfg.clients, cfg.server_position, seed);
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.clients;
        if k == 0 {
            return Err(Error::field("K", "at least one client is required"));
        }
        if self.antennas == 0 {
            return Err(Error::field("N", "at least one antenna is required"));
        }
        positive("T", self.time_budget)?;
        positive("T_epsilon", self.time_tol)?;
        positive("P_max", self.p_max)?;
        positive("P_sum", self.p_sum)?;
        positive("sigma2", self.noise_power)?;
        positive("h0", self.ref_path_gain)?;
        positive("alpha", self.path_loss_exp)?;
        positive("beta", self.beta)?;
        if let Some(g) = self.gamma {
            positive("gamma", g)?;
        }
        if !(self.rician_k >= 0.0 && self.rician_k.is_finite()) {
            return Err(Error::field("K_ric", "must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.lambda_loss) {
            return Err(Error::field("lambda_loss", "must lie in [0, 1]"));
        }
        if self.outer_iters == 0 {
            return Err(Error::field("I_max", "must be at least 1"));
        }
        if self.inner_iters == 0 {
            return Err(Error::field("J_max", "must be at least 1"));
        }
        per_client("B", &self.bandwidth, k, |v| v > 0.0 && v.is_finite())?;
        per_client("V", &self.sample_bits, k, |v| v >= 0.0 && v.is_finite())?;
        per_client("omega", &self.shadowing, k, |v| v > 0.0 && v.is_finite())?;
        per_client("rho", &self.rho, k, |v| v > 0.0 && v < 1.0)?;
        if self.dataset_sizes.len() != k {
            return Err(Error::field("D_sizes", format!("expected {k} entries")));
        }
        if self.dataset_sizes.contains(&0) {
            return Err(Error::field("D_sizes", "every client needs at least one image"));
        }
        if self.client_positions.len() != k {
            return Err(Error::field("client_positions", format!("expected {k} entries")));
        }
        let coords = self.client_positions.iter().flatten().chain(&self.server_position);
        if coords.into_iter().any(|c| !c.is_finite()) {
            return Err(Error::field("client_positions", "coordinates must be finite"));
        }
        Ok(())
    }

    /// Serializes to the scenario format, all quantities in linear units.
    pub fn to_toml(&self) -> String {
        let file = ScenarioFile {
            k: Some(self.clients),
            n: Some(self.antennas),
            t: Some(self.time_budget),
            t_epsilon: Some(self.time_tol),
            p_max: Some(self.p_max),
            p_sum: Some(self.p_sum),
            sigma2: Some(self.noise_power),
            b: Some(PerClient::List(self.bandwidth.clone())),
            v: Some(PerClient::List(self.sample_bits.clone())),
            d_sizes: Some(PerClient::List(self.dataset_sizes.iter().map(|&d| d as f64).collect())),
            rho: Some(PerClient::List(self.rho.clone())),
            h0: Some(self.ref_path_gain),
            alpha: Some(self.path_loss_exp),
            omega: Some(PerClient::List(self.shadowing.clone())),
            k_ric: Some(self.rician_k),
            lambda_loss: Some(self.lambda_loss),
            beta: Some(self.beta),
            gamma: self.gamma,
            i_max: Some(self.outer_iters),
            j_max: Some(self.inner_iters),
            seed: Some(self.seed),
            client_positions: Some(self.client_positions.clone()),
            server_position: Some(self.server_position),
            ..Default::default()
        };
        toml::to_string(&file).expect("scenario serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::field(field, format!("must be positive and finite, got {v}")))
    }
}

fn per_client(field: &str, values: &[f64], k: usize, ok: impl Fn(f64) -> bool) -> Result<()> {
    if values.len() != k {
        return Err(Error::field(field, format!("expected {k} entries, got {}", values.len())));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, &v)| !ok(v)) {
        return Err(Error::field(field, format!("entry {i} out of range: {v}")));
    }
    Ok(())
}

pub fn pilot_size(rho: f64, dataset_size: usize) -> usize {
    let m = (rho * dataset_size as f64).ceil() as usize;
    m.clamp(1, dataset_size)
}

/// Uniform drop on a 100 m x 100 m square centred on the server.
pub fn random_positions(clients: usize, server: [f64; 2], seed: u64) -> Vec<[f64; 2]> {
    let mut rng = stream_rng(seed, streams::POSITIONS);
    (0..clients)
        .map(|_| [server[0] + rng.random_range(-50.0..50.0), server[1] + rng.random_range(-50.0..50.0)])
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PerClient {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerClient {
    fn expand(self, field: &str, k: usize) -> Result<Vec<f64>> {
        match self {
            PerClient::Scalar(v) => Ok(vec![v; k]),
            PerClient::List(v) if v.len() == k => Ok(v),
            PerClient::List(v) => Err(Error::field(field, format!("expected {k} entries, got {}", v.len()))),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(rename = "K")]
    k: Option<usize>,
    #[serde(rename = "N")]
    n: Option<usize>,
    #[serde(rename = "T")]
    t: Option<f64>,
    #[serde(rename = "T_epsilon")]
    t_epsilon: Option<f64>,
    #[serde(rename = "P_max")]
    p_max: Option<f64>,
    #[serde(rename = "P_sum")]
    p_sum: Option<f64>,
    sigma2: Option<f64>,
    #[serde(skip_serializing)]
    sigma2_db: Option<f64>,
    #[serde(skip_serializing)]
    sigma2_dbm: Option<f64>,
    #[serde(rename = "B")]
    b: Option<PerClient>,
    #[serde(rename = "V")]
    v: Option<PerClient>,
    #[serde(rename = "D_sizes")]
    d_sizes: Option<PerClient>,
    rho: Option<PerClient>,
    h0: Option<f64>,
    #[serde(skip_serializing)]
    h0_db: Option<f64>,
    alpha: Option<f64>,
    omega: Option<PerClient>,
    #[serde(skip_serializing)]
    omega_db: Option<PerClient>,
    #[serde(rename = "K_ric")]
    k_ric: Option<f64>,
    #[serde(rename = "K_ric_db", skip_serializing)]
    k_ric_db: Option<f64>,
    lambda_loss: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    #[serde(rename = "I_max")]
    i_max: Option<usize>,
    #[serde(rename = "J_max")]
    j_max: Option<usize>,
    seed: Option<u64>,
    client_positions: Option<Vec<[f64; 2]>>,
    server_position: Option<[f64; 2]>,
}

fn required<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| Error::field(field, "missing required key"))
}

/// Accepts exactly one of the linear or decibel spellings of a key.
fn linear_or_db(field: &str, linear: Option<f64>, db: Option<f64>, default_db: Option<f64>) -> Result<f64> {
    match (linear, db) {
        (Some(_), Some(_)) => Err(Error::field(field, "given in both linear and dB form")),
        (Some(v), None) => Ok(v),
        (None, Some(d)) => Ok(db_to_linear(d)),
        (None, None) => default_db.map(db_to_linear).ok_or_else(|| Error::field(field, "missing required key")),
    }
}

impl ScenarioFile {
    fn into_config(self) -> Result<ScenarioConfig> {
        let k = required(self.k, "K")?;
        if k == 0 {
            return Err(Error::field("K", "at least one client is required"));
        }
        let noise_power = match (self.sigma2, self.sigma2_db, self.sigma2_dbm) {
            (Some(w), None, None) => w,
            (None, Some(db), None) => db_to_linear(db),
            (None, None, Some(dbm)) => dbm_to_watts(dbm),
            (None, None, None) => return Err(Error::field("sigma2", "missing required key")),
            _ => return Err(Error::field("sigma2", "given in more than one unit")),
        };
        let shadowing = match (self.omega, self.omega_db) {
            (Some(_), Some(_)) => return Err(Error::field("omega", "given in both linear and dB form")),
            (Some(w), None) => w.expand("omega", k)?,
            (None, Some(db)) => db.expand("omega", k)?.into_iter().map(db_to_linear).collect(),
            (None, None) => vec![db_to_linear(-20.0); k],
        };
        let dataset_sizes = required(self.d_sizes, "D_sizes")?
            .expand("D_sizes", k)?
            .into_iter()
            .map(|d| {
                if d >= 0.0 && d.fract() == 0.0 {
                    Ok(d as usize)
                } else {
                    Err(Error::field("D_sizes", format!("not a count: {d}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let seed = self.seed.unwrap_or(0);
        let server_position = self.server_position.unwrap_or([0.0, 0.0]);
        let client_positions = self.client_positions.unwrap_or_else(|| random_positions(k, server_position, seed));

        let cfg = ScenarioConfig {
            clients: k,
            antennas: required(self.n, "N")?,
            time_budget: required(self.t, "T")?,
            time_tol: self.t_epsilon.unwrap_or(1e-3),
            p_max: required(self.p_max, "P_max")?,
            p_sum: required(self.p_sum, "P_sum")?,
            noise_power,
            bandwidth: required(self.b, "B")?.expand("B", k)?,
            sample_bits: required(self.v, "V")?.expand("V", k)?,
            dataset_sizes,
            rho: self.rho.unwrap_or(PerClient::Scalar(0.1)).expand("rho", k)?,
            ref_path_gain: linear_or_db("h0", self.h0, self.h0_db, Some(-30.0))?,
            path_loss_exp: self.alpha.unwrap_or(3.0),
            shadowing,
            rician_k: linear_or_db("K_ric", self.k_ric, self.k_ric_db, Some(-26.0))?,
            lambda_loss: self.lambda_loss.unwrap_or(0.2),
            beta: self.beta.unwrap_or(0.1),
            gamma: self.gamma,
            outer_iters: self.i_max.unwrap_or(60),
            inner_iters: self.j_max.unwrap_or(20),
            seed,
            client_positions,
            server_position,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_config()
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Where the per-image training loss of a dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSource {
    /// Images rendered by the prior model at each pose.
    Rendered(Vec<Image>),
    /// Per-image losses computed elsewhere.
    Precomputed(Vec<f64>),
    /// Only sampling is possible.
    Unavailable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub images: Vec<Image>,
    pub poses: Vec<[f64; 6]>,
    pub losses: LossSource,
}

impl ClientDataset {
    pub fn new(images: Vec<Image>, poses: Vec<[f64; 6]>, losses: LossSource) -> Result<Self> {
        if images.len() != poses.len() {
            return Err(Error::ShapeMismatch(format!("{} images but {} poses", images.len(), poses.len())));
        }
        match &losses {
            LossSource::Rendered(rendered) => {
                if rendered.len() != images.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} images but {} rendered counterparts",
                        images.len(),
                        rendered.len()
                    )));
                }
                for (a, b) in images.iter().zip(rendered) {
                    a.same_shape(b)?;
                }
            }
            LossSource::Precomputed(l) if l.len() != images.len() => {
                return Err(Error::ShapeMismatch(format!(
                    "{} images but {} precomputed losses",
                    images.len(),
                    l.len()
                )));
            }
            _ => {}
        }
        Ok(Self { images, poses, losses })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Parameters of the clustered synthetic dataset generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub cluster_count: usize,
    /// Maximum absolute per-pixel perturbation around the prototype.
    pub noise: f64,
    pub height: usize,
    pub width: usize,
}

impl SyntheticSpec {
    pub fn new(cluster_count: usize, noise: f64) -> Self {
        Self { cluster_count, noise, height: 8, width: 8 }
    }
}

/// Builds one clustered dataset per client.
///
/// Each client gets `cluster_count` prototype images. A prototype has a base
/// colour with hue in `[0.1, 0.9]`, saturation in `[0.5, 1]` and brightness
/// level `b_c` in `[0.3, 1]`; each pixel scales that colour by a factor in
/// `[0.85, 1.15]`, a texture that leaves hue and saturation unchanged.
/// Saturated colours away from the hue wrap keep every prototype group tight
/// in HSV space and not only in RGB. Image `i` is a copy of prototype
/// `i mod cluster_count` with every channel perturbed uniformly by at most
/// `noise` and clamped to `[0, 1]`. Prototype `c` has a ground-truth base
/// loss `s_k (0.2 + 0.8 b_c)`, where `s_k` is a per-client difficulty;
/// per-image losses deviate from the base by a relative factor of at most
/// `noise / 2`. Output depends only on `(config, spec)` including the
/// scenario seed.
pub fn generate_synthetic_datasets(config: &ScenarioConfig, spec: &SyntheticSpec) -> Result<Vec<ClientDataset>> {
    if spec.cluster_count == 0 {
        return Err(Error::field("cluster_count", "must be at least 1"));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::field("noise", "must be finite and nonnegative"));
    }
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::field("resolution", "image dimensions must be positive"));
    }
    let mut rng = stream_rng(config.seed, streams::DATASETS);
    let pixels = spec.height * spec.width * 3;
    let mut datasets = Vec::with_capacity(config.clients);
    for &size in &config.dataset_sizes {
        let difficulty = rng.random_range(0.05..0.45);
        let protos: Vec<(Vec<f64>, f64, [f64; 6])> = (0..spec.cluster_count)
            .map(|_| {
                let level = rng.random_range(0.3..1.0);
                let colour = hsv_to_rgb(rng.random_range(0.1..0.9), rng.random_range(0.5..1.0), level);
                let img = (0..pixels / 3)
                    .flat_map(|_| {
                        let texture = rng.random_range(0.85..1.15);
                        colour.map(|c| (c * texture).clamp(0.0, 1.0))
                    })
                    .collect();
                let pose = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
                (img, difficulty * (0.2 + 0.8 * level), pose)
            })
            .collect();

        let mut images = Vec::with_capacity(size);
        let mut poses = Vec::with_capacity(size);
        let mut losses = Vec::with_capacity(size);
        for i in 0..size {
            let (proto, base, pose) = &protos[i % spec.cluster_count];
            let data = proto.iter().map(|&v| (v + spec.noise * rng.random_range(-1.0..=1.0)).clamp(0.0, 1.0)).collect();
            images.push(Image::new(spec.height, spec.width, data)?);
            poses.push(pose.map(|p| p + spec.noise * rng.random_range(-1.0..=1.0)));
            losses.push(base * (1.0 + 0.5 * spec.noise * rng.random_range(-1.0..=1.0)));
        }
        datasets.push(ClientDataset::new(images, poses, LossSource::Precomputed(losses))?);
    }
    Ok(datasets)
}

/// RGB of an HSV colour, hue in `[0, 1)`.
fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let sector = (h * 6.0).floor();
    let f = h * 6.0 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector as u8 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    clients: Vec<ClientEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientEntry {
    images: Vec<PathBuf>,
    poses: Vec<[f64; 6]>,
    #[serde(default)]
    rendered: Option<Vec<PathBuf>>,
    #[serde(default)]
    losses: Option<Vec<f64>>,
}

/// Loads a JSON dataset manifest:
///
/// ```json
/// { "clients": [ { "images": ["c1/000.ppm"], "poses": [[0,0,0,0,0,0]],
///                  "rendered": ["c1/r000.ppm"] } ] }
/// ```
///
/// Each client lists `images` and `poses`, plus at most one of `rendered`
/// (image paths) or `losses` (per-image scalars). Relative paths resolve
/// against the manifest's directory.
pub fn load_dataset_manifest(path: &Path) -> Result<Vec<ClientDataset>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let load_all =
        |paths: &[PathBuf]| -> Result<Vec<Image>> { paths.iter().map(|p| Image::load(&base.join(p))).collect() };
    manifest
        .clients
        .into_iter()
        .enumerate()
        .map(|(k, entry)| {
            let losses = match (entry.rendered, entry.losses) {
                (Some(_), Some(_)) => {
                    return Err(Error::field(
                        format!("clients[{k}]"),
                        "give either rendered images or losses, not both",
                    ))
                }
                (Some(r), None) => LossSource::Rendered(load_all(&r)?),
                (None, Some(l)) => LossSource::Precomputed(l),
                (None, None) => LossSource::Unavailable,
            };
            ClientDataset::new(load_all(&entry.images)?, entry.poses, losses)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientLoss {
    /// Predicted total loss over the client's dataset.
    PredictedLoss(f64),
    /// Mean per-image loss; scaled by the dataset size.
    MeanLoss(f64),
    /// Losses of the pilot images; scaled by `|D_k| / |pilot|`.
    PilotLosses(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossManifest {
    pub clients: Vec<ClientLoss>,
}

impl LossManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Per-client predicted losses for the given scenario.
    pub fn predicted_losses(&self, config: &ScenarioConfig) -> Result<Vec<f64>> {
        if self.clients.len() != config.clients {
            return Err(Error::field(
                "clients",
                format!("loss manifest has {} clients, scenario has {}", self.clients.len(), config.clients),
            ));
        }
        self.clients
            .iter()
            .zip(&config.dataset_sizes)
            .enumerate()
            .map(|(k, (entry, &size))| {
                let v = match entry {
                    ClientLoss::PredictedLoss(v) => *v,
                    ClientLoss::MeanLoss(m) => m * size as f64,
                    ClientLoss::PilotLosses(l) if l.is_empty() => {
                        return Err(Error::field(format!("clients[{k}]"), "empty pilot loss list"))
                    }
                    ClientLoss::PilotLosses(l) => size as f64 / l.len() as f64 * l.iter().sum::<f64>(),
                };
                if v >= 0.0 && v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::field(format!("clients[{k}]"), format!("loss must be nonnegative, got {v}")))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
K = 2
N = 4
T = 10.0
P_max = 0.2
P_sum = 0.3
sigma2_dbm = -100.0
B = 1e6
V = [1e5, 2e5]
D_sizes = 20
client_positions = [[3.0, 4.0], [-6.0, 8.0]]
"#;

    #[test]
    fn minimal_file_gets_documented_defaults() {
        let cfg = parse_scenario(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.rho, vec![0.1, 0.1]);
        assert_eq!(cfg.beta, 0.1);
        assert_eq!(cfg.outer_iters, 60);
        assert!((cfg.noise_power - 1e-13).abs() < 1e-25);
        assert!((cfg.gamma_penalty() - 2500.0).abs() < 1e-9);
        assert_eq!(cfg.distances(), vec![5.0, 10.0]);
    }

    #[test]
    fn rho_out_of_range_names_the_field() {
        let text = format!("{MINIMAL}rho = [1.2, 0.1]\n");
        match parse_scenario(&text) {
            Err(Error::InvalidField { field, .. }) => assert_eq!(field, "rho"),
            other => panic!("expected rho error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_list_length_is_reported() {
        let text = MINIMAL.replace("V = [1e5, 2e5]", "V = [1e5]");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("`V`"), "{err}");
    }

    #[test]
    fn db_and_linear_forms_agree() {
        let a = parse_scenario(&format!("{MINIMAL}K_ric_db = 10.0\n")).unwrap();
        let b = parse_scenario(&format!("{MINIMAL}K_ric = 10.0\n")).unwrap();
        assert!((a.rician_k - b.rician_k).abs() < 1e-12);
        assert!(parse_scenario(&format!("{MINIMAL}K_ric = 10.0\nK_ric_db = 10.0\n")).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_scenario(&format!("{MINIMAL}bogus = 1\n")).is_err());
    }

    #[test]
    fn missing_positions_are_seeded_draws_in_square() {
        let text = MINIMAL.replace("client_positions = [[3.0, 4.0], [-6.0, 8.0]]", "seed = 9");
        let a = parse_scenario(&text).unwrap();
        let b = parse_scenario(&text).unwrap();
        assert_eq!(a.client_positions, b.client_positions);
        assert!(a.client_positions.iter().flatten().all(|c| (-50.0..50.0).contains(c)));
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = ScenarioConfig::reference(3);
        assert_eq!(parse_scenario(&cfg.to_toml()).unwrap(), cfg);
        let mut with_gamma = parse_scenario(MINIMAL).unwrap();
        with_gamma.gamma = Some(42.0);
        assert_eq!(parse_scenario(&with_gamma.to_toml()).unwrap(), with_gamma);
    }

    #[test]
    fn pilot_size_is_ceiling() {
        assert_eq!(pilot_size(0.1, 25), 3);
        assert_eq!(pilot_size(0.1, 280), 28);
        assert_eq!(pilot_size(0.02, 10), 1);
    }

    #[test]
    fn synthetic_degenerate_generator() {
        let mut cfg = ScenarioConfig::reference(0);
        cfg.dataset_sizes = vec![6; 5];
        let ds = generate_synthetic_datasets(&cfg, &SyntheticSpec::new(1, 0.0)).unwrap();
        for d in &ds {
            assert!(d.images.windows(2).all(|w| w[0] == w[1]));
            let LossSource::Precomputed(l) = &d.losses else { panic!() };
            assert!(l.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn synthetic_round_robin_prototypes() {
        let mut cfg = ScenarioConfig::reference(5);
        cfg.dataset_sizes = vec![30; 5];
        let ds = generate_synthetic_datasets(&cfg, &SyntheticSpec::new(3, 0.0)).unwrap();
        let d = &ds[0];
        let mut distinct: Vec<&Image> = Vec::new();
        for img in &d.images {
            if !distinct.contains(&img) {
                distinct.push(img);
            }
        }
        assert_eq!(distinct.len(), 3);
        for (p, proto) in distinct.iter().enumerate() {
            let members = d.images.iter().filter(|i| i == proto).count();
            assert_eq!(members, 10);
            assert_eq!(&d.images[p], *proto);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = ScenarioConfig::reference(11);
        let spec = SyntheticSpec::new(4, 0.05);
        assert_eq!(
            generate_synthetic_datasets(&cfg, &spec).unwrap(),
            generate_synthetic_datasets(&cfg, &spec).unwrap()
        );
    }

    #[test]
    fn loss_manifest_scaling() {
        let cfg = parse_scenario(MINIMAL).unwrap();
        let m = LossManifest { clients: vec![ClientLoss::MeanLoss(0.5), ClientLoss::PilotLosses(vec![0.1, 0.3])] };
        let p = m.predicted_losses(&cfg).unwrap();
        assert!((p[0] - 10.0).abs() < 1e-12);
        assert!((p[1] - 4.0).abs() < 1e-12);
    }
}
