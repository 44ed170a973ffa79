//! Landmark maps, ground-truth scenes, synthetic observations and map files.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::geom::{Point2, Rigid2};
use crate::hypergraph::{delaunay_indices, unique_edges};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkId(pub u64);

impl fmt::Display for LandmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub id: LandmarkId,
    pub pos: Point2,
}

impl Landmark {
    pub fn new(id: LandmarkId, pos: Point2) -> Self {
        Landmark { id, pos }
    }
}

/// Landmark estimates in one frame with isotropic per-coordinate noise
/// variance.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMap {
    frame: String,
    noise_var: f64,
    landmarks: Vec<Landmark>,
    index: HashMap<LandmarkId, usize>,
}

impl StochasticMap {
    pub fn new(frame: impl Into<String>, noise_var: f64, landmarks: Vec<Landmark>) -> Result<Self> {
        if !noise_var.is_finite() || noise_var < 0.0 {
            return Err(FusionError::InvalidParameter(format!(
                "noise_var must be finite and >= 0, got {noise_var}"
            )));
        }
        let mut index = HashMap::with_capacity(landmarks.len());
        for (k, l) in landmarks.iter().enumerate() {
            if !l.pos.is_finite() {
                return Err(FusionError::NonFinite("landmark position"));
            }
            if index.insert(l.id, k).is_some() {
                return Err(FusionError::DuplicateId(l.id));
            }
        }
        Ok(StochasticMap {
            frame: frame.into(),
            noise_var,
            landmarks,
            index,
        })
    }

    pub fn frame(&self) -> &str {
        &self.frame
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn get(&self, id: LandmarkId) -> Option<Point2> {
        self.index.get(&id).map(|&k| self.landmarks[k].pos)
    }

    pub fn contains(&self, id: LandmarkId) -> bool {
        self.index.contains_key(&id)
    }

    pub(crate) fn position(&self, id: LandmarkId) -> Result<Point2> {
        self.get(id).ok_or_else(|| FusionError::UnknownId {
            id,
            frame: self.frame.clone(),
        })
    }
}

/// Ground truth in frame `p`: common landmarks plus the landmarks only one
/// agent observes, and the transform taking frame-`p` coordinates to
/// frame-`q` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub common: Vec<Landmark>,
    pub only_p: Vec<Landmark>,
    pub only_q: Vec<Landmark>,
    pub transform: Rigid2,
}

impl GroundTruthScene {
    pub fn new(
        common: Vec<Landmark>,
        only_p: Vec<Landmark>,
        only_q: Vec<Landmark>,
        transform: Rigid2,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for l in common.iter().chain(&only_p).chain(&only_q) {
            if !l.pos.is_finite() {
                return Err(FusionError::NonFinite("scene landmark"));
            }
            if !seen.insert(l.id) {
                return Err(FusionError::DuplicateId(l.id));
            }
        }
        Ok(GroundTruthScene {
            common,
            only_p,
            only_q,
            transform,
        })
    }

    /// Landmarks seen by `p`, common block first.
    pub fn u_p(&self) -> Vec<Landmark> {
        self.common.iter().chain(&self.only_p).copied().collect()
    }

    /// Landmarks seen by `q` (frame `p` coordinates), common block first.
    pub fn u_q(&self) -> Vec<Landmark> {
        self.common.iter().chain(&self.only_q).copied().collect()
    }

    /// The whole combined map `(common, only_p, only_q)`.
    pub fn all(&self) -> Vec<Landmark> {
        self.common
            .iter()
            .chain(&self.only_p)
            .chain(&self.only_q)
            .copied()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.common.len() + self.only_p.len() + self.only_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ground-truth position (frame `p`) of any landmark in the scene.
    pub fn truth(&self, id: LandmarkId) -> Option<Point2> {
        self.common
            .iter()
            .chain(&self.only_p)
            .chain(&self.only_q)
            .find(|l| l.id == id)
            .map(|l| l.pos)
    }
}

// Seeds and streams -------------------------------------------------------

/// ChaCha20 stream used for scene layout.
pub const STREAM_SCENE: u64 = 0;
/// ChaCha20 stream for the noise of map `p`.
pub const STREAM_NOISE_P: u64 = 1;
/// ChaCha20 stream for the noise of map `q`.
pub const STREAM_NOISE_Q: u64 = 2;
/// Stream for experiment-level draws (random frames, triangle picks).
pub const STREAM_EXPERIMENT: u64 = 3;

/// Every stochastic routine draws from `ChaCha20Rng::seed_from_u64(seed)`
/// with a fixed stream number, so independent parts of one seed never share
/// random numbers.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed, e.g. one per Monte Carlo trial (SplitMix64 mixing).
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut z = seed;
    for &p in path {
        z = splitmix(z ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn gaussian(rng: &mut impl Rng, sigma: f64) -> Point2 {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    Point2::new(sigma * x, sigma * y)
}

/// Draws the two noisy maps: `p` sees `u_p + w_p`, `q` sees the rigidly
/// transformed `u_q` plus `w_q`. Landmark order and ids follow the scene.
pub fn synthesize_maps(
    scene: &GroundTruthScene,
    sigma_p2: f64,
    sigma_q2: f64,
    seed: u64,
) -> Result<(StochasticMap, StochasticMap)> {
    for v in [sigma_p2, sigma_q2] {
        if !v.is_finite() || v < 0.0 {
            return Err(FusionError::InvalidParameter(format!(
                "noise variance must be finite and >= 0, got {v}"
            )));
        }
    }
    let (sp, sq) = (sigma_p2.sqrt(), sigma_q2.sqrt());
    let mut rng_p = rng_for(seed, STREAM_NOISE_P);
    let mut rng_q = rng_for(seed, STREAM_NOISE_Q);

    let p: Vec<Landmark> = scene
        .u_p()
        .into_iter()
        .map(|l| Landmark::new(l.id, l.pos + gaussian(&mut rng_p, sp)))
        .collect();
    let q: Vec<Landmark> = scene
        .u_q()
        .into_iter()
        .map(|l| {
            Landmark::new(
                l.id,
                scene.transform.apply(l.pos) + gaussian(&mut rng_q, sq),
            )
        })
        .collect();
    Ok((
        StochasticMap::new("p", sigma_p2, p)?,
        StochasticMap::new("q", sigma_q2, q)?,
    ))
}

// SNR ---------------------------------------------------------------------

/// Mean squared Delaunay edge length of a point set.
pub fn signal_variance(points: &[Landmark]) -> Result<f64> {
    let pos: Vec<Point2> = points.iter().map(|l| l.pos).collect();
    let rank: Vec<u64> = points.iter().map(|l| l.id.0).collect();
    let tris = delaunay_indices(&pos, &rank)?;
    let edges = unique_edges(&tris);
    let sum: f64 = edges.iter().map(|&(a, b)| (pos[a] - pos[b]).norm2()).sum();
    Ok(sum / edges.len() as f64)
}

/// SNR in dB of a scene observed with per-coordinate noise variance `sigma2`:
/// `10 log10(signal / (2 sigma2))`.
pub fn snr_db(scene: &GroundTruthScene, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(FusionError::InvalidParameter(format!(
            "noise variance must be > 0 for a finite SNR, got {sigma2}"
        )));
    }
    let s = signal_variance(&scene.all())?;
    Ok(10.0 * (s / (2.0 * sigma2)).log10())
}

/// Noise variance that puts `scene` at `snr_db`.
pub fn sigma2_for_snr(scene: &GroundTruthScene, snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(FusionError::InvalidParameter(format!(
            "target SNR must be finite, got {snr_db}"
        )));
    }
    let s = signal_variance(&scene.all())?;
    Ok(s / (2.0 * 10f64.powf(snr_db / 10.0)))
}

// Scene generation --------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Uniform,
    Grid,
}

impl FromStr for SceneKind {
    type Err = FusionError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SceneKind::Uniform),
            "grid" => Ok(SceneKind::Grid),
            other => Err(FusionError::InvalidParameter(format!(
                "unknown scene kind '{other}' (expected uniform or grid)"
            ))),
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::Uniform => "uniform",
            SceneKind::Grid => "grid",
        })
    }
}

/// Lays out `n_total` landmarks on `[0, extent]^2` and splits them into
/// `n_common` shared ones and two exclusive sets (`only_p` gets the odd one).
pub fn generate_scene(
    kind: SceneKind,
    n_total: usize,
    n_common: usize,
    extent: f64,
    transform: Rigid2,
    seed: u64,
) -> Result<GroundTruthScene> {
    if n_common > n_total {
        return Err(FusionError::InvalidParameter(format!(
            "n_common ({n_common}) exceeds n_total ({n_total})"
        )));
    }
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(FusionError::InvalidParameter(format!(
            "extent must be finite and > 0, got {extent}"
        )));
    }
    let mut rng = rng_for(seed, STREAM_SCENE);
    let positions: Vec<Point2> = match kind {
        SceneKind::Uniform => (0..n_total)
            .map(|_| Point2::new(rng.random::<f64>() * extent, rng.random::<f64>() * extent))
            .collect(),
        SceneKind::Grid => {
            let side = (n_total as f64).sqrt().round() as usize;
            if side * side != n_total {
                return Err(FusionError::InvalidParameter(format!(
                    "grid scene needs a perfect square count, got {n_total}"
                )));
            }
            let step = if side > 1 {
                extent / (side - 1) as f64
            } else {
                0.0
            };
            (0..n_total)
                .map(|i| Point2::new((i % side) as f64 * step, (i / side) as f64 * step))
                .collect()
        }
    };

    let mut order: Vec<usize> = (0..n_total).collect();
    order.shuffle(&mut rng);
    let n_only_p = (n_total - n_common).div_ceil(2);
    let pick = |idx: &[usize]| {
        let mut v: Vec<Landmark> = idx
            .iter()
            .map(|&i| Landmark::new(LandmarkId(i as u64), positions[i]))
            .collect();
        v.sort_by_key(|l| l.id);
        v
    };
    GroundTruthScene::new(
        pick(&order[..n_common]),
        pick(&order[n_common..n_common + n_only_p]),
        pick(&order[n_common + n_only_p..]),
        transform,
    )
}

// Files -------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct LandmarkRecord {
    id: u64,
    x: Coordinate,
    y: Coordinate,
}

/// Accepts plain numbers and, so that they can be reported properly, the
/// strings "NaN"/"inf" some writers emit for non-finite values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum Coordinate {
    Number(f64),
    Text(#[serde(with = "text_float")] f64),
}

mod text_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        s.trim().parse::<f64>().map_err(serde::de::Error::custom)
    }
}

impl Coordinate {
    fn value(self) -> f64 {
        match self {
            Coordinate::Number(v) | Coordinate::Text(v) => v,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    frame: String,
    noise_var: f64,
    landmarks: Vec<LandmarkRecord>,
}

fn records_to_landmarks(records: &[LandmarkRecord], what: &str) -> Result<Vec<Landmark>> {
    let mut seen = HashSet::new();
    records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let (x, y) = (r.x.value(), r.y.value());
            if !x.is_finite() || !y.is_finite() {
                return Err(FusionError::Format(format!(
                    "{what} record {k} (id {}): coordinates ({x}, {y}) are not finite",
                    r.id
                )));
            }
            if !seen.insert(r.id) {
                return Err(FusionError::Format(format!(
                    "{what} record {k}: duplicate landmark id {}",
                    r.id
                )));
            }
            Ok(Landmark::new(LandmarkId(r.id), Point2::new(x, y)))
        })
        .collect()
}

fn landmarks_to_records(landmarks: &[Landmark]) -> Vec<LandmarkRecord> {
    landmarks
        .iter()
        .map(|l| LandmarkRecord {
            id: l.id.0,
            x: Coordinate::Number(l.pos.x),
            y: Coordinate::Number(l.pos.y),
        })
        .collect()
}

pub fn map_to_json(map: &StochasticMap) -> String {
    let file = MapFile {
        frame: map.frame.clone(),
        noise_var: map.noise_var,
        landmarks: landmarks_to_records(&map.landmarks),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("finite map serializes");
    s.push('\n');
    s
}

pub fn map_from_json(text: &str) -> Result<StochasticMap> {
    let file: MapFile =
        serde_json::from_str(text).map_err(|e| FusionError::Format(e.to_string()))?;
    if !file.noise_var.is_finite() || file.noise_var < 0.0 {
        return Err(FusionError::Format(format!(
            "field noise_var must be >= 0, got {}",
            file.noise_var
        )));
    }
    let landmarks = records_to_landmarks(&file.landmarks, "landmarks")?;
    StochasticMap::new(file.frame, file.noise_var, landmarks)
}

pub fn read_map(path: impl AsRef<Path>) -> Result<StochasticMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    map_from_json(&text).map_err(|e| match e {
        FusionError::Format(m) => FusionError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_map(map: &StochasticMap, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), map_to_json(map).as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path.file_name().ok_or_else(|| {
        FusionError::InvalidParameter(format!("not a file path: {}", path.display()))
    })?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    theta: f64,
    tx: f64,
    ty: f64,
    common: Vec<LandmarkRecord>,
    only_p: Vec<LandmarkRecord>,
    only_q: Vec<LandmarkRecord>,
}

pub fn scene_to_json(scene: &GroundTruthScene) -> String {
    let file = SceneFile {
        theta: scene.transform.theta(),
        tx: scene.transform.t.x,
        ty: scene.transform.t.y,
        common: landmarks_to_records(&scene.common),
        only_p: landmarks_to_records(&scene.only_p),
        only_q: landmarks_to_records(&scene.only_q),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("finite scene serializes");
    s.push('\n');
    s
}

pub fn scene_from_json(text: &str) -> Result<GroundTruthScene> {
    let f: SceneFile =
        serde_json::from_str(text).map_err(|e| FusionError::Format(e.to_string()))?;
    let transform = Rigid2::checked(f.theta, Point2::new(f.tx, f.ty))
        .map_err(|_| FusionError::Format("scene transform is not finite".into()))?;
    GroundTruthScene::new(
        records_to_landmarks(&f.common, "common")?,
        records_to_landmarks(&f.only_p, "only_p")?,
        records_to_landmarks(&f.only_q, "only_q")?,
        transform,
    )
}
