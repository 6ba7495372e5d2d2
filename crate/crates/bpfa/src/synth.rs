//! Deterministic synthetic-identity image dataset: smooth random prototypes
//! per identity, per-sample low-frequency jitter, and pixel noise, clamped
//! to [0, 255]. Generation and pair sampling are pure functions of
//! (params, seed).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Tensor;

const DATASET_MAGIC: &[u8; 8] = b"BPFADAT\x01";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Coarse-grid dimension of the smooth fields. Smaller is smoother.
    pub prototype_grid: usize,
    /// Per-pixel noise amplitude in pixel units.
    pub noise_level: f64,
    /// Amplitude of the per-sample low-frequency jitter field, pixel units.
    pub jitter_magnitude: f64,
    /// Amplitude of the per-identity delta on top of the shared base
    /// pattern, pixel units. All identities share one base image; identity
    /// information lives in a small smooth delta, mirroring how face images
    /// are near-identical in pixel space.
    pub identity_contrast: f64,
    /// Amplitude of a fixed per-identity per-pixel signature added to the
    /// prototype, pixel units. A fine-grained identity cue that different
    /// architectures weight differently, so identity evidence is not a
    /// single shared feature.
    pub identity_detail: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            prototype_grid: 4,
            noise_level: 3.0,
            jitter_magnitude: 4.0,
            identity_contrast: 8.0,
            identity_detail: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetParams {
    pub num_identities: usize,
    pub images_per_identity: usize,
    /// (C, H, W)
    pub image_shape: Vec<usize>,
    pub seed: u64,
    pub generator: GeneratorParams,
}

impl DatasetParams {
    pub fn desk_default(seed: u64) -> Self {
        Self {
            num_identities: 20,
            images_per_identity: 20,
            image_shape: vec![1, 16, 16],
            seed,
            generator: GeneratorParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IdentityDataset {
    pub params: DatasetParams,
    /// Flagged when zero noise and zero jitter would duplicate images.
    pub degenerate: bool,
    /// images[identity][sample]
    images: Vec<Vec<Tensor>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Negative,
    Positive,
}

impl std::str::FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(Polarity::Negative),
            "positive" => Ok(Polarity::Positive),
            other => Err(Error::InvalidArgument(format!("unknown polarity {other:?}"))),
        }
    }
}

impl Polarity {
    pub fn name(&self) -> &'static str {
        match self {
            Polarity::Negative => "negative",
            Polarity::Positive => "positive",
        }
    }
}

/// An (attacker, target) image pair. Impersonation attacks require
/// negative pairs: distinct identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacePair {
    pub attacker_id: usize,
    pub attacker_img: usize,
    pub target_id: usize,
    pub target_img: usize,
    pub polarity: Polarity,
}

/// Bilinear upsample of a coarse `grid x grid` field to `h x w`.
fn upsample(coarse: &[f64], grid: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let fy = if h > 1 {
                y as f64 / (h - 1) as f64 * (grid - 1) as f64
            } else {
                0.0
            };
            let fx = if w > 1 {
                x as f64 / (w - 1) as f64 * (grid - 1) as f64
            } else {
                0.0
            };
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(grid - 1), (x0 + 1).min(grid - 1));
            let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
            let v = coarse[y0 * grid + x0] * (1.0 - dy) * (1.0 - dx)
                + coarse[y0 * grid + x1] * (1.0 - dy) * dx
                + coarse[y1 * grid + x0] * dy * (1.0 - dx)
                + coarse[y1 * grid + x1] * dy * dx;
            out[y * w + x] = v;
        }
    }
    out
}

fn smooth_field(rng: &mut ChaCha8Rng, grid: usize, h: usize, w: usize, lo: f64, hi: f64) -> Vec<f64> {
    let coarse: Vec<f64> = (0..grid * grid).map(|_| rng.gen_range(lo..hi)).collect();
    upsample(&coarse, grid, h, w)
}

pub fn generate(params: &DatasetParams) -> Result<IdentityDataset> {
    let k = params.num_identities;
    let m = params.images_per_identity;
    if k < 2 || m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 identities and 2 images each, got K={k}, M={m}"
        )));
    }
    let [c, h, w] = params.image_shape.as_slice() else {
        return Err(Error::InvalidArgument(format!(
            "image shape must be CxHxW, got {:?}",
            params.image_shape
        )));
    };
    let (c, h, w) = (*c, *h, *w);
    let g = &params.generator;
    if g.prototype_grid < 2 {
        return Err(Error::InvalidArgument("prototype grid must be >= 2".into()));
    }
    if g.identity_contrast <= 0.0 {
        return Err(Error::InvalidArgument(
            "identity contrast must be > 0".into(),
        ));
    }
    let degenerate = g.noise_level == 0.0 && g.jitter_magnitude == 0.0 && m > 1;

    let mut base_rng = substream(params.seed, "base", 0);
    let base: Vec<Vec<f64>> = (0..c)
        .map(|_| smooth_field(&mut base_rng, g.prototype_grid, h, w, 70.0, 185.0))
        .collect();

    let mut images = Vec::with_capacity(k);
    for id in 0..k {
        let mut proto_rng = substream(params.seed, "prototype", id as u64);
        let prototypes: Vec<Vec<f64>> = base
            .iter()
            .map(|b| {
                let delta = smooth_field(
                    &mut proto_rng,
                    g.prototype_grid,
                    h,
                    w,
                    -g.identity_contrast,
                    g.identity_contrast,
                );
                b.iter()
                    .zip(delta)
                    .map(|(p, d)| {
                        let detail = if g.identity_detail > 0.0 {
                            proto_rng.gen_range(-g.identity_detail..g.identity_detail)
                        } else {
                            0.0
                        };
                        p + d + detail
                    })
                    .collect()
            })
            .collect();
        let mut samples = Vec::with_capacity(m);
        for s in 0..m {
            let mut rng = substream(params.seed, "sample", (id * m + s) as u64);
            let mut pixels = Vec::with_capacity(c * h * w);
            for proto in &prototypes {
                let jitter = if g.jitter_magnitude > 0.0 {
                    smooth_field(
                        &mut rng,
                        g.prototype_grid,
                        h,
                        w,
                        -g.jitter_magnitude,
                        g.jitter_magnitude,
                    )
                } else {
                    vec![0.0; h * w]
                };
                for (p, j) in proto.iter().zip(jitter) {
                    let noise = if g.noise_level > 0.0 {
                        rng.gen_range(-g.noise_level..g.noise_level)
                    } else {
                        0.0
                    };
                    pixels.push((p + j + noise).clamp(0.0, 255.0));
                }
            }
            samples.push(Tensor::new(params.image_shape.clone(), pixels)?);
        }
        images.push(samples);
    }

    let ds = IdentityDataset {
        params: params.clone(),
        degenerate,
        images,
    };
    ds.check_separation()?;
    Ok(ds)
}

impl IdentityDataset {
    pub fn num_identities(&self) -> usize {
        self.images.len()
    }

    pub fn images_per_identity(&self) -> usize {
        self.images[0].len()
    }

    pub fn image(&self, identity: usize, sample: usize) -> &Tensor {
        &self.images[identity][sample]
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.params.image_shape
    }

    /// Mean within-identity pixel distance must fall below mean
    /// between-identity distance over 1000 sampled pairs each.
    fn check_separation(&self) -> Result<()> {
        if self.degenerate {
            return Ok(());
        }
        let mut rng = substream(self.params.seed, "separation-check", 0);
        let (within, between) = self.pixel_distance_stats(&mut rng, 1000);
        if within >= between {
            return Err(Error::InvalidArgument(format!(
                "generated identities are not separated: within {within:.2} >= between {between:.2}"
            )));
        }
        Ok(())
    }

    pub fn pixel_distance_stats(&self, rng: &mut ChaCha8Rng, n: usize) -> (f64, f64) {
        let k = self.num_identities();
        let m = self.images_per_identity();
        let mut within = 0.0;
        let mut between = 0.0;
        for _ in 0..n {
            let id = rng.gen_range(0..k);
            let (a, b) = (rng.gen_range(0..m), rng.gen_range(0..m));
            within += self
                .image(id, a)
                .sub(self.image(id, b))
                .expect("same shape")
                .l2_norm();
            let other = (id + rng.gen_range(1..k)) % k;
            let (a, b) = (rng.gen_range(0..m), rng.gen_range(0..m));
            between += self
                .image(id, a)
                .sub(self.image(other, b))
                .expect("same shape")
                .l2_norm();
        }
        (within / n as f64, between / n as f64)
    }

    pub fn pair_images(&self, pair: &FacePair) -> (&Tensor, &Tensor) {
        (
            self.image(pair.attacker_id, pair.attacker_img),
            self.image(pair.target_id, pair.target_img),
        )
    }
}

pub fn sample_pairs(
    ds: &IdentityDataset,
    n_pairs: usize,
    polarity: Polarity,
    seed: u64,
) -> Result<Vec<FacePair>> {
    let k = ds.num_identities();
    let m = ds.images_per_identity();
    if polarity == Polarity::Negative && k < 2 {
        return Err(Error::InvalidArgument(
            "negative pairs need at least 2 identities".into(),
        ));
    }
    if polarity == Polarity::Positive && m < 2 {
        return Err(Error::InvalidArgument(
            "positive pairs need at least 2 images per identity".into(),
        ));
    }
    let mut rng = substream(seed, "pair-sampling", 0);
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let attacker_id = rng.gen_range(0..k);
        let (target_id, target_img) = match polarity {
            Polarity::Negative => ((attacker_id + rng.gen_range(1..k)) % k, rng.gen_range(0..m)),
            Polarity::Positive => (attacker_id, rng.gen_range(0..m)),
        };
        let mut attacker_img = rng.gen_range(0..m);
        // A positive pair models a probe photo against a distinct gallery
        // photo of the same identity.
        if polarity == Polarity::Positive && attacker_img == target_img {
            attacker_img = (attacker_img + 1) % m;
        }
        pairs.push(FacePair {
            attacker_id,
            attacker_img,
            target_id,
            target_img,
            polarity,
        });
    }
    Ok(pairs)
}

pub fn save_pairs<P: AsRef<Path>>(pairs: &[FacePair], path: P) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["attacker_id", "attacker_img", "target_id", "target_img", "polarity"])?;
    for p in pairs {
        writer.write_record([
            p.attacker_id.to_string(),
            p.attacker_img.to_string(),
            p.target_id.to_string(),
            p.target_img.to_string(),
            p.polarity.name().to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_pairs<P: AsRef<Path>>(path: P) -> Result<Vec<FacePair>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut pairs = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<usize> {
            rec.get(i)
                .ok_or_else(|| Error::DatasetFormat("short pair record".into()))?
                .parse()
                .map_err(|e| Error::DatasetFormat(format!("bad pair field: {e}")))
        };
        pairs.push(FacePair {
            attacker_id: field(0)?,
            attacker_img: field(1)?,
            target_id: field(2)?,
            target_img: field(3)?,
            polarity: rec
                .get(4)
                .ok_or_else(|| Error::DatasetFormat("short pair record".into()))?
                .parse()?,
        });
    }
    Ok(pairs)
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    params: DatasetParams,
    degenerate: bool,
}

pub fn save_dataset<P: AsRef<Path>>(ds: &IdentityDataset, path: P) -> Result<()> {
    let header = DatasetHeader {
        params: ds.params.clone(),
        degenerate: ds.degenerate,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for identity in &ds.images {
        for img in identity {
            for v in img.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<IdentityDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::DatasetFormat("file too short for header".into()))?;
    if &magic != DATASET_MAGIC {
        return Err(Error::DatasetFormat("bad magic or unsupported version".into()));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::DatasetFormat("truncated header".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::DatasetFormat("truncated header".into()))?;
    let header: DatasetHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::DatasetFormat(format!("header parse: {e}")))?;
    let numel: usize = header.params.image_shape.iter().product();
    let mut images = Vec::with_capacity(header.params.num_identities);
    for _ in 0..header.params.num_identities {
        let mut samples = Vec::with_capacity(header.params.images_per_identity);
        for _ in 0..header.params.images_per_identity {
            let mut data = vec![0.0f64; numel];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::DatasetFormat("truncated pixel blob".into()))?;
                *v = f64::from_le_bytes(buf);
            }
            samples.push(
                Tensor::new(header.params.image_shape.clone(), data)
                    .map_err(|e| Error::DatasetFormat(e.to_string()))?,
            );
        }
        images.push(samples);
    }
    Ok(IdentityDataset {
        params: header.params,
        degenerate: header.degenerate,
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params(seed: u64) -> DatasetParams {
        DatasetParams {
            num_identities: 4,
            images_per_identity: 3,
            image_shape: vec![1, 8, 8],
            seed,
            generator: GeneratorParams::default(),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_params(7)).unwrap();
        let b = generate(&small_params(7)).unwrap();
        for id in 0..4 {
            for s in 0..3 {
                assert_eq!(a.image(id, s).data(), b.image(id, s).data());
            }
        }
    }

    #[test]
    fn zero_noise_zero_jitter_flags_degenerate() {
        let mut p = small_params(1);
        p.generator.noise_level = 0.0;
        p.generator.jitter_magnitude = 0.0;
        let ds = generate(&p).unwrap();
        assert!(ds.degenerate);
        assert_eq!(ds.image(0, 0).data(), ds.image(0, 1).data());
    }

    #[test]
    fn pixels_in_range() {
        let ds = generate(&small_params(2)).unwrap();
        for id in 0..4 {
            for s in 0..3 {
                for &v in ds.image(id, s).data() {
                    assert!((0.0..=255.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn within_distance_below_between() {
        let ds = generate(&DatasetParams::desk_default(5)).unwrap();
        let mut rng = substream(99, "test", 0);
        let (within, between) = ds.pixel_distance_stats(&mut rng, 1000);
        assert!(within < between, "within {within} between {between}");
    }

    #[test]
    fn negative_pairs_distinct_identities() {
        let ds = generate(&small_params(3)).unwrap();
        let pairs = sample_pairs(&ds, 50, Polarity::Negative, 11).unwrap();
        assert_eq!(pairs.len(), 50);
        for p in &pairs {
            assert_ne!(p.attacker_id, p.target_id);
        }
        let again = sample_pairs(&ds, 50, Polarity::Negative, 11).unwrap();
        assert_eq!(pairs, again);
        assert!(sample_pairs(&ds, 0, Polarity::Negative, 1).unwrap().is_empty());
    }

    #[test]
    fn dataset_roundtrip_bitwise() {
        let ds = generate(&small_params(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(ds.image(2, 1).data(), loaded.image(2, 1).data());
    }

    #[test]
    fn pairs_roundtrip() {
        let ds = generate(&small_params(4)).unwrap();
        let pairs = sample_pairs(&ds, 10, Polarity::Negative, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        save_pairs(&pairs, &path).unwrap();
        assert_eq!(load_pairs(&path).unwrap(), pairs);
    }
}
