//! Uniform-linear-array steering vectors and a clustered multipath stand-in
//! for the extended Saleh-Valenzuela mmWave channel.

use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{read_container, write_container};
use crate::error::{Error, Result};
use crate::numerics::{complex_normal, ComplexMatrix};

pub const DATASET_SCHEMA: &str = "channels-v1";

/// Half-wavelength ULA response toward `angle_deg`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub angle_deg: f64,
    pub entries: DVector<Complex64>,
}

pub fn steering_vector(angle_deg: f64, n_antennas: usize) -> Result<SteeringVector> {
    if !(-90.0..=90.0).contains(&angle_deg) {
        return Err(Error::Config(format!("angle {angle_deg} deg outside [-90, 90]")));
    }
    if n_antennas == 0 {
        return Err(Error::Config("steering vector needs at least one antenna".into()));
    }
    Ok(SteeringVector {
        angle_deg,
        entries: steering(angle_deg, n_antennas),
    })
}

/// Unchecked steering vector, entry `n` = `exp(j n pi sin(theta))`.
pub(crate) fn steering(angle_deg: f64, n_antennas: usize) -> DVector<Complex64> {
    let phase = std::f64::consts::PI * angle_deg.to_radians().sin();
    DVector::from_fn(n_antennas, |n, _| {
        if n == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::from_polar(1.0, n as f64 * phase)
        }
    })
}

/// Parameters of the multipath stand-in model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Number of propagation paths per user.
    pub paths: usize,
    /// Path angles are drawn uniformly on `[angle_min_deg, angle_max_deg]`.
    pub angle_min_deg: f64,
    pub angle_max_deg: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            paths: 10,
            angle_min_deg: -90.0,
            angle_max_deg: 90.0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::Config("channel model needs at least one path".into()));
        }
        let ok = |a: f64| (-90.0..=90.0).contains(&a);
        if !ok(self.angle_min_deg) || !ok(self.angle_max_deg) || self.angle_min_deg > self.angle_max_deg {
            return Err(Error::Config(format!(
                "invalid path angle range [{}, {}]",
                self.angle_min_deg, self.angle_max_deg
            )));
        }
        Ok(())
    }
}

/// Downlink channels of `K` users stacked as rows `h_k^H` of a `K x N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h: ComplexMatrix,
    pub seed: u64,
    pub model: ChannelModel,
}

impl ChannelSet {
    pub fn from_matrix(h: ComplexMatrix, seed: u64, model: ChannelModel) -> Result<Self> {
        let (k, n) = h.shape();
        if k == 0 || n < k {
            return Err(Error::Dimension(format!("channel matrix {k}x{n} needs 1 <= K <= N")));
        }
        crate::numerics::ensure_finite(&h, "channel matrix")?;
        if h.row_iter().any(|r| r.iter().all(|z| *z == Complex64::new(0.0, 0.0))) {
            return Err(Error::Degenerate("channel has an all-zero user row".into()));
        }
        Ok(ChannelSet { h, seed, model })
    }

    pub fn n_users(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_antennas(&self) -> usize {
        self.h.ncols()
    }

    /// Column vector `h_k`.
    pub fn user(&self, k: usize) -> DVector<Complex64> {
        self.h.row(k).adjoint()
    }
}

/// `sqrt(N / L) * sum_l alpha_l * a(theta_l)` for explicit path gains and angles.
pub fn multipath_channel(n_antennas: usize, paths: &[(Complex64, f64)]) -> DVector<Complex64> {
    let scale = (n_antennas as f64 / paths.len() as f64).sqrt();
    let mut h = DVector::zeros(n_antennas);
    for &(gain, angle) in paths {
        h.axpy(gain * scale, &steering(angle, n_antennas), Complex64::new(1.0, 0.0));
    }
    h
}

pub fn gen_channels(n_users: usize, n_antennas: usize, model: &ChannelModel, seed: u64) -> Result<ChannelSet> {
    if n_users == 0 || n_antennas < n_users {
        return Err(Error::Config(format!(
            "need 1 <= K <= N, got K={n_users}, N={n_antennas}"
        )));
    }
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = ComplexMatrix::zeros(n_users, n_antennas);
    let mut paths = Vec::with_capacity(model.paths);
    for k in 0..n_users {
        paths.clear();
        for _ in 0..model.paths {
            let gain = complex_normal(&mut rng);
            let angle = if model.angle_min_deg < model.angle_max_deg {
                rng.random_range(model.angle_min_deg..=model.angle_max_deg)
            } else {
                model.angle_min_deg
            };
            paths.push((gain, angle));
        }
        let hk = multipath_channel(n_antennas, &paths);
        h.set_row(k, &hk.adjoint());
    }
    ChannelSet::from_matrix(h, seed, *model)
}

/// `count` realizations; realization `i` uses seed `base_seed + i`.
pub fn gen_corpus(
    count: usize,
    n_users: usize,
    n_antennas: usize,
    model: &ChannelModel,
    base_seed: u64,
) -> Result<Vec<ChannelSet>> {
    (0..count)
        .into_par_iter()
        .map(|i| gen_channels(n_users, n_antennas, model, base_seed.wrapping_add(i as u64)))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    schema: String,
    channels: Vec<ChannelMeta>,
}

#[derive(Serialize, Deserialize)]
struct ChannelMeta {
    n_users: usize,
    n_antennas: usize,
    seed: u64,
    model: ChannelModel,
}

pub fn save_dataset(path: &Path, channels: &[ChannelSet]) -> Result<()> {
    let header = DatasetHeader {
        schema: DATASET_SCHEMA.to_string(),
        channels: channels
            .iter()
            .map(|c| ChannelMeta {
                n_users: c.n_users(),
                n_antennas: c.n_antennas(),
                seed: c.seed,
                model: c.model,
            })
            .collect(),
    };
    let mut payload = Vec::with_capacity(channels.iter().map(|c| c.h.len()).sum());
    for c in channels {
        for row in c.h.row_iter() {
            payload.extend(row.iter().copied());
        }
    }
    write_container(path, &header, &payload)
}

pub fn load_dataset(path: &Path) -> Result<Vec<ChannelSet>> {
    let (header, payload): (DatasetHeader, _) = read_container(path)?;
    if header.schema != DATASET_SCHEMA {
        return Err(Error::schema(
            path,
            format!("expected schema {DATASET_SCHEMA}, found {}", header.schema),
        ));
    }
    let expected: usize = header.channels.iter().map(|m| m.n_users * m.n_antennas).sum();
    if expected != payload.len() {
        return Err(Error::schema(
            path,
            format!("header describes {expected} entries, payload has {}", payload.len()),
        ));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(header.channels.len());
    for meta in header.channels {
        let len = meta.n_users * meta.n_antennas;
        let h = ComplexMatrix::from_row_slice(meta.n_users, meta.n_antennas, &payload[offset..offset + len]);
        offset += len;
        out.push(ChannelSet::from_matrix(h, meta.seed, meta.model).map_err(|e| Error::schema(path, e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fro_norm_sqr;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn broadside_is_all_ones() {
        let a = steering_vector(0.0, 8).unwrap();
        assert!(a.entries.iter().all(|z| *z == c(1.0, 0.0)));
    }

    #[test]
    fn thirty_degrees_quarter_turns() {
        let a = steering_vector(30.0, 4).unwrap().entries;
        let expect = [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)];
        for (z, e) in a.iter().zip(expect) {
            assert!((z - e).norm() < 1e-12);
        }
        let b = steering_vector(-30.0, 4).unwrap().entries;
        for (z, w) in a.iter().zip(b.iter()) {
            assert!((z.conj() - w).norm() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_angle_rejected() {
        assert!(steering_vector(90.5, 4).is_err());
        assert!(steering_vector(-91.0, 4).is_err());
        assert!(steering_vector(0.0, 0).is_err());
    }

    #[test]
    fn steering_unit_modulus_and_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let theta: f64 = rng.random_range(-90.0..=90.0);
            let a = steering_vector(theta, 32).unwrap().entries;
            assert_eq!(a[0], c(1.0, 0.0));
            assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            assert!((a.dotc(&a).re - 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_path_unit_gain_energy() {
        let n = 16;
        let h = multipath_channel(n, &[(c(1.0, 0.0), 20.0)]);
        assert!((h.norm_squared() - (n * n) as f64).abs() < 1e-9);
    }

    #[test]
    fn generation_is_deterministic() {
        let m = ChannelModel::default();
        let a = gen_channels(4, 32, &m, 77).unwrap();
        let b = gen_channels(4, 32, &m, 77).unwrap();
        let c = gen_channels(4, 32, &m, 78).unwrap();
        assert!(a.h.iter().zip(b.h.iter()).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
        assert_ne!(a.h, c.h);
        assert_eq!(a.n_users(), 4);
        assert_eq!(a.n_antennas(), 32);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let m = ChannelModel::default();
        assert!(gen_channels(0, 8, &m, 0).is_err());
        assert!(gen_channels(9, 8, &m, 0).is_err());
        let bad = ChannelModel { paths: 0, ..m };
        assert!(gen_channels(2, 8, &bad, 0).is_err());
    }

    #[test]
    fn mean_channel_energy_is_n_squared() {
        // E||h_k||^2 = (N/L) * L * E|alpha|^2 * ||a||^2 = N^2
        let n = 16;
        let model = ChannelModel { paths: 4, ..ChannelModel::default() };
        let draws = 10_000;
        let total: f64 = (0..draws)
            .map(|s| fro_norm_sqr(&gen_channels(1, n, &model, s).unwrap().h))
            .sum();
        let mean = total / draws as f64;
        let target = (n * n) as f64;
        assert!((mean - target).abs() < 0.03 * target, "mean {mean}");
    }

    #[test]
    fn dataset_round_trip_and_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let m = ChannelModel::default();
        let one = vec![gen_channels(2, 8, &m, 3).unwrap()];
        save_dataset(&path, &one).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), one);

        std::fs::write(&path, b"garbage!garbage!").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Schema { .. })));

        let psi_like = serde_json::json!({"schema": "psi-v1", "channels": []});
        write_container(&path, &psi_like, &[]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Schema { .. })));
    }

    #[test]
    fn corpus_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.bin");
        let corpus = gen_corpus(1000, 4, 64, &ChannelModel::default(), 2024).unwrap();
        save_dataset(&path, &corpus).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.len(), 1000);
        for (a, b) in corpus.iter().zip(&back) {
            assert_eq!(a.seed, b.seed);
            assert!(a.h.iter().zip(b.h.iter()).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
        }
    }
}
