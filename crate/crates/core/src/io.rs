//! Persistent container format: a directory holding `manifest.json` (UTF-8
//! JSON header) and `payload.bin` (raw little-endian arrays). Every array
//! carries a CRC-32 and the entries tile the payload exactly, so loads can
//! distinguish corruption, truncation, and version or kind mismatches.

use crate::error::{Error, Result};
use crate::forward::ScatteredData;
use crate::linalg::CMat;
use crate::lmn::LmnModel;
use crate::scene::Scenario;
use crate::train::{AdamState, Sample, TrainConfig};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Bumped on any change to the on-disk layout.
pub const FORMAT_VERSION: u32 = 1;

pub const KIND_DATASET: &str = "dataset";
pub const KIND_CHECKPOINT: &str = "checkpoint";
pub const KIND_MAP: &str = "map";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    /// "f64" or "c128" (interleaved little-endian f64 pairs).
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
    pub crc32: u32,
}

/// Denoiser/model structure recorded alongside checkpoint arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub depth: usize,
    pub channels: usize,
    pub use_bn: bool,
    pub unroll_depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub config: TrainConfig,
    pub epoch: usize,
    pub adam_t: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelMeta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainMeta>,
    pub arrays: Vec<ArrayEntry>,
}

enum ArrayData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

struct ContainerWriter {
    payload: Vec<u8>,
    arrays: Vec<ArrayEntry>,
}

impl ContainerWriter {
    fn new() -> Self {
        ContainerWriter {
            payload: Vec::new(),
            arrays: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, data: ArrayData) {
        let offset = self.payload.len() as u64;
        let dtype = match &data {
            ArrayData::Real(_) => "f64",
            ArrayData::Complex(_) => "c128",
        };
        match &data {
            ArrayData::Real(v) => {
                for x in v {
                    self.payload.extend_from_slice(&x.to_le_bytes());
                }
            }
            ArrayData::Complex(v) => {
                for z in v {
                    self.payload.extend_from_slice(&z.re.to_le_bytes());
                    self.payload.extend_from_slice(&z.im.to_le_bytes());
                }
            }
        }
        let length = self.payload.len() as u64 - offset;
        let crc = crc32fast::hash(&self.payload[offset as usize..]);
        self.arrays.push(ArrayEntry {
            name: name.to_string(),
            dtype: dtype.to_string(),
            shape,
            offset,
            length,
            crc32: crc,
        });
    }

    fn finish(self, path: &Path, mut manifest: Manifest) -> Result<()> {
        manifest.arrays = self.arrays;
        std::fs::create_dir_all(path)?;
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::format(format!("manifest serialization: {e}")))?;
        std::fs::write(path.join("manifest.json"), json)?;
        std::fs::write(path.join("payload.bin"), &self.payload)?;
        Ok(())
    }
}

struct Container {
    manifest: Manifest,
    arrays: HashMap<String, (ArrayEntry, Vec<u8>)>,
}

impl Container {
    fn open(path: &Path, expected_kind: &str) -> Result<Self> {
        let json = std::fs::read_to_string(path.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&json)
            .map_err(|e| Error::format(format!("manifest parse: {e}")))?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "version mismatch: file is v{}, this build reads v{FORMAT_VERSION}",
                manifest.version
            )));
        }
        if manifest.kind != expected_kind {
            return Err(Error::format(format!(
                "kind mismatch: expected a {expected_kind}, found a {}",
                manifest.kind
            )));
        }
        let payload = std::fs::read(path.join("payload.bin"))?;
        // Entries must tile the payload exactly.
        let mut expect_offset = 0u64;
        for e in &manifest.arrays {
            if e.offset != expect_offset {
                return Err(Error::format(format!(
                    "array {} does not tile the payload (offset {} vs {})",
                    e.name, e.offset, expect_offset
                )));
            }
            expect_offset += e.length;
        }
        if payload.len() as u64 != expect_offset {
            return Err(Error::format(format!(
                "truncated payload: manifest describes {expect_offset} bytes, file has {}",
                payload.len()
            )));
        }
        let mut arrays = HashMap::new();
        for e in &manifest.arrays {
            let bytes = payload[e.offset as usize..(e.offset + e.length) as usize].to_vec();
            let crc = crc32fast::hash(&bytes);
            if crc != e.crc32 {
                return Err(Error::format(format!(
                    "checksum mismatch in array {}: stored {:08x}, computed {crc:08x}",
                    e.name, e.crc32
                )));
            }
            arrays.insert(e.name.clone(), (e.clone(), bytes));
        }
        Ok(Container { manifest, arrays })
    }

    fn real(&self, name: &str) -> Result<Vec<f64>> {
        let (entry, bytes) = self
            .arrays
            .get(name)
            .ok_or_else(|| Error::format(format!("missing array {name}")))?;
        if entry.dtype != "f64" {
            return Err(Error::format(format!("array {name} is not f64")));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn complex(&self, name: &str) -> Result<Vec<Complex64>> {
        let (entry, bytes) = self
            .arrays
            .get(name)
            .ok_or_else(|| Error::format(format!("missing array {name}")))?;
        if entry.dtype != "c128" {
            return Err(Error::format(format!("array {name} is not c128")));
        }
        Ok(bytes
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[0..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..16].try_into().unwrap()),
                )
            })
            .collect())
    }

    fn shape(&self, name: &str) -> Result<&[usize]> {
        Ok(&self
            .arrays
            .get(name)
            .ok_or_else(|| Error::format(format!("missing array {name}")))?
            .0
            .shape)
    }
}

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

/// Persist labels and clean scattered data for a list of samples.
pub fn save_dataset(path: &Path, scenario: &Scenario, samples: &[Sample]) -> Result<()> {
    let mut w = ContainerWriter::new();
    for (i, s) in samples.iter().enumerate() {
        let n = s.label.grid.n();
        w.push(
            &format!("label/{i}"),
            vec![n, n],
            ArrayData::Real(s.label.values.clone()),
        );
        w.push(
            &format!("data/{i}"),
            vec![s.data.values.rows, s.data.values.cols],
            ArrayData::Complex(s.data.values.data.clone()),
        );
    }
    w.finish(
        path,
        Manifest {
            version: FORMAT_VERSION,
            kind: KIND_DATASET.to_string(),
            seed: scenario.seed,
            scenario: Some(scenario.clone()),
            model: None,
            train: None,
            arrays: Vec::new(),
        },
    )
}

/// Load a dataset saved by `save_dataset`; checksums and version are
/// validated, and data comes back bit-identical.
pub fn load_dataset(path: &Path) -> Result<(Scenario, Vec<Sample>)> {
    let c = Container::open(path, KIND_DATASET)?;
    let scenario = c
        .manifest
        .scenario
        .clone()
        .ok_or_else(|| Error::format("dataset manifest lacks a scenario"))?;
    let count = c.manifest.arrays.len() / 2;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let label_values = c.real(&format!("label/{i}"))?;
        let grid = scenario.inversion_grid.clone();
        let label = crate::scene::ContrastMap::from_values(grid, label_values)?;
        let shape = c.shape(&format!("data/{i}"))?.to_vec();
        if shape.len() != 2 {
            return Err(Error::format(format!("data/{i} is not a matrix")));
        }
        let data = c.complex(&format!("data/{i}"))?;
        if data.len() != shape[0] * shape[1] {
            return Err(Error::format(format!("data/{i} shape/length mismatch")));
        }
        let mut values = CMat::zeros(shape[0], shape[1]);
        values.data.copy_from_slice(&data);
        samples.push(Sample {
            label,
            data: ScatteredData {
                values,
                noise_level: 0.0,
                seed: 0,
            },
        });
    }
    Ok((scenario, samples))
}

/// Persist a single contrast map as a raw-array container.
pub fn save_raw_map(path: &Path, map: &crate::scene::ContrastMap) -> Result<()> {
    let n = map.grid.n();
    let mut w = ContainerWriter::new();
    w.push("chi", vec![n, n], ArrayData::Real(map.values.clone()));
    w.finish(
        path,
        Manifest {
            version: FORMAT_VERSION,
            kind: KIND_MAP.to_string(),
            seed: 0,
            scenario: None,
            model: None,
            train: None,
            arrays: Vec::new(),
        },
    )
}

/// Load a contrast map saved by `save_raw_map` onto the given grid.
pub fn load_raw_map(path: &Path, grid: crate::scene::Grid) -> Result<crate::scene::ContrastMap> {
    let c = Container::open(path, KIND_MAP)?;
    crate::scene::ContrastMap::from_values(grid, c.real("chi")?)
}

// ---------------------------------------------------------------------------
// model checkpoints
// ---------------------------------------------------------------------------

/// Persist a model plus optimizer state; round-trips bit-exactly.
pub fn save_model(
    path: &Path,
    model: &LmnModel,
    state: &AdamState,
    cfg: &TrainConfig,
    epoch: usize,
    scenario: Option<&Scenario>,
) -> Result<()> {
    let mut w = ContainerWriter::new();
    for (i, layer) in model.weights.layers.iter().enumerate() {
        w.push(
            &format!("layer{i}/kernel"),
            vec![layer.c_out, layer.c_in, 3, 3],
            ArrayData::Real(layer.kernel.clone()),
        );
        w.push(
            &format!("layer{i}/bias"),
            vec![layer.c_out],
            ArrayData::Real(layer.bias.clone()),
        );
    }
    for (i, bn) in model.weights.bn.iter().enumerate() {
        let c = bn.scale.len();
        w.push(&format!("bn{i}/scale"), vec![c], ArrayData::Real(bn.scale.clone()));
        w.push(&format!("bn{i}/shift"), vec![c], ArrayData::Real(bn.shift.clone()));
        w.push(
            &format!("bn{i}/running_mean"),
            vec![c],
            ArrayData::Real(bn.running_mean.clone()),
        );
        w.push(
            &format!("bn{i}/running_var"),
            vec![c],
            ArrayData::Real(bn.running_var.clone()),
        );
    }
    w.push("rho", vec![1], ArrayData::Real(vec![model.rho]));
    w.push("input_scale", vec![1], ArrayData::Real(vec![model.input_scale]));
    w.push("adam/m", vec![state.m.len()], ArrayData::Real(state.m.clone()));
    w.push("adam/v", vec![state.v.len()], ArrayData::Real(state.v.clone()));
    let channels = model.weights.layers[0].c_out;
    w.finish(
        path,
        Manifest {
            version: FORMAT_VERSION,
            kind: KIND_CHECKPOINT.to_string(),
            seed: cfg.seed,
            scenario: scenario.cloned(),
            model: Some(ModelMeta {
                depth: model.weights.depth(),
                channels,
                use_bn: model.weights.use_bn,
                unroll_depth: model.unroll_depth,
            }),
            train: Some(TrainMeta {
                config: cfg.clone(),
                epoch,
                adam_t: state.t,
            }),
            arrays: Vec::new(),
        },
    )
}

/// Restore a checkpoint saved by `save_model`.
pub fn load_model(
    path: &Path,
) -> Result<(LmnModel, AdamState, TrainConfig, usize, Option<Scenario>)> {
    let c = Container::open(path, KIND_CHECKPOINT)?;
    let meta = c
        .manifest
        .model
        .clone()
        .ok_or_else(|| Error::format("checkpoint manifest lacks model metadata"))?;
    let train = c
        .manifest
        .train
        .clone()
        .ok_or_else(|| Error::format("checkpoint manifest lacks training metadata"))?;
    let mut weights =
        crate::lmn::DenoiserWeights::zeros(meta.depth, meta.channels, meta.use_bn)?;
    for (i, layer) in weights.layers.iter_mut().enumerate() {
        let kernel = c.real(&format!("layer{i}/kernel"))?;
        let bias = c.real(&format!("layer{i}/bias"))?;
        if kernel.len() != layer.kernel.len() || bias.len() != layer.bias.len() {
            return Err(Error::format(format!("layer{i} has unexpected shape")));
        }
        layer.kernel = kernel;
        layer.bias = bias;
    }
    for (i, bn) in weights.bn.iter_mut().enumerate() {
        bn.scale = c.real(&format!("bn{i}/scale"))?;
        bn.shift = c.real(&format!("bn{i}/shift"))?;
        bn.running_mean = c.real(&format!("bn{i}/running_mean"))?;
        bn.running_var = c.real(&format!("bn{i}/running_var"))?;
        let want = meta.channels;
        if [&bn.scale, &bn.shift, &bn.running_mean, &bn.running_var]
            .iter()
            .any(|v| v.len() != want)
        {
            return Err(Error::format(format!("bn{i} has unexpected shape")));
        }
    }
    let rho = c.real("rho")?;
    let input_scale = c.real("input_scale")?;
    if rho.len() != 1 || input_scale.len() != 1 {
        return Err(Error::format("scalar arrays have unexpected shape"));
    }
    let model = LmnModel {
        weights,
        rho: rho[0],
        unroll_depth: meta.unroll_depth,
        input_scale: input_scale[0],
    };
    let state = AdamState {
        m: c.real("adam/m")?,
        v: c.real("adam/v")?,
        t: train.adam_t,
    };
    Ok((
        model,
        state,
        train.config,
        train.epoch,
        c.manifest.scenario.clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Scenario;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn scenario() -> Scenario {
        Scenario::reference(8, 6, 42).unwrap()
    }

    fn sample(scenario: &Scenario, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = scenario.inversion_grid.clone();
        let values: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let label = crate::scene::ContrastMap::from_values(grid, values).unwrap();
        let mut data = CMat::zeros(scenario.rx_ring.count(), scenario.tx_ring.count());
        for v in data.data.iter_mut() {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        Sample {
            label,
            data: ScatteredData {
                values: data,
                noise_level: 0.0,
                seed: 0,
            },
        }
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let sc = scenario();
        let samples = vec![sample(&sc, 1), sample(&sc, 2)];
        save_dataset(dir.path(), &sc, &samples).unwrap();
        let (sc2, loaded) = load_dataset(dir.path()).unwrap();
        assert_eq!(sc, sc2);
        assert_eq!(samples, loaded);
    }

    #[test]
    fn empty_dataset_is_valid() {
        let dir = tempdir().unwrap();
        let sc = scenario();
        save_dataset(dir.path(), &sc, &[]).unwrap();
        let (_, loaded) = load_dataset(dir.path()).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn corrupted_payload_names_the_array() {
        let dir = tempdir().unwrap();
        let sc = scenario();
        save_dataset(dir.path(), &sc, &[sample(&sc, 3)]).unwrap();
        let payload_path = dir.path().join("payload.bin");
        let mut bytes = std::fs::read(&payload_path).unwrap();
        bytes[5] ^= 0xff;
        std::fs::write(&payload_path, &bytes).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
        assert!(err.contains("label/0"), "{err}");
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempdir().unwrap();
        let sc = scenario();
        save_dataset(dir.path(), &sc, &[sample(&sc, 4)]).unwrap();
        let payload_path = dir.path().join("payload.bin");
        let bytes = std::fs::read(&payload_path).unwrap();
        std::fs::write(&payload_path, &bytes[..bytes.len() - 8]).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn version_mismatch_is_detected() {
        let dir = tempdir().unwrap();
        let sc = scenario();
        save_dataset(dir.path(), &sc, &[]).unwrap();
        let mpath = dir.path().join("manifest.json");
        let json = std::fs::read_to_string(&mpath).unwrap();
        std::fs::write(&mpath, json.replace("\"version\": 1", "\"version\": 99")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let model = LmnModel::new(3, 4, true, 2, 9).unwrap();
        let p = crate::train::model_params_flat(&model);
        let mut state = AdamState::new(p.len());
        state.t = 17;
        for (i, m) in state.m.iter_mut().enumerate() {
            *m = i as f64 * 0.25;
        }
        let cfg = TrainConfig {
            epochs: 12,
            seed: 5,
            ..TrainConfig::default()
        };
        save_model(dir.path(), &model, &state, &cfg, 11, None).unwrap();
        let (m2, s2, c2, epoch, sc) = load_model(dir.path()).unwrap();
        assert_eq!(model, m2);
        assert_eq!(state, s2);
        assert_eq!(cfg, c2);
        assert_eq!(epoch, 11);
        assert!(sc.is_none());
    }

    #[test]
    fn kind_mismatch_is_detected() {
        let dir = tempdir().unwrap();
        let sc = scenario();
        save_dataset(dir.path(), &sc, &[]).unwrap();
        let err = load_model(dir.path()).unwrap_err().to_string();
        assert!(err.contains("kind"), "{err}");
    }
}
