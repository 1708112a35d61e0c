use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{resolve, SampleEntry};
use super::{load_matrix, StoreError};
use crate::tensor::Matrix;

/// Fixed feature shapes. Token and region files may hold fewer than
/// `seq_len` rows; they are zero-padded on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub seq_len: usize,
    pub d_txt: usize,
    pub d_region: usize,
    pub d_geom: usize,
    pub d_pair: usize,
    pub d_tox: usize,
    pub d_nsfw: usize,
    pub d_cap: usize,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            seq_len: 100,
            d_txt: 768,
            d_region: 1024,
            d_geom: 6,
            d_pair: 512,
            d_tox: 6,
            d_nsfw: 5,
            d_cap: 512,
        }
    }
}

impl Schema {
    /// Width of the assembled content vector (tox ‖ nsfw ‖ msl ‖ cap).
    pub fn content_dim(&self) -> usize {
        self.d_tox + self.d_nsfw + 1 + self.d_cap
    }
}

/// One sample's inputs, padded to the schema's sequence length.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub id: String,
    pub tokens: Matrix<f32>,
    pub regions: Matrix<f32>,
    pub geometry: Matrix<f32>,
    pub pair_txt: Vec<f32>,
    pub pair_img: Vec<f32>,
    pub tox: Vec<f32>,
    pub nsfw: Vec<f32>,
    pub cap: Vec<f32>,
    pub raw_text: String,
    pub label: u8,
    pub valid_tokens: usize,
    pub valid_regions: usize,
}

fn shape_str(r: usize, c: usize) -> String {
    format!("{r}×{c}")
}

fn schema_err(id: &str, field: &'static str, expected: String, actual: (usize, usize)) -> StoreError {
    StoreError::Schema {
        id: id.to_string(),
        field,
        expected,
        actual: shape_str(actual.0, actual.1),
    }
}

/// Pads a sequence matrix to `len` rows; the file must hold 1..=len rows of
/// the right width.
fn pad_sequence(id: &str, field: &'static str, m: Matrix<f32>, len: usize, width: usize) -> Result<(Matrix<f32>, usize), StoreError> {
    let (r, c) = m.shape();
    if c != width || r == 0 || r > len {
        return Err(schema_err(id, field, shape_str(len, width), (r, c)));
    }
    let mut data = m.into_vec();
    data.resize(len * width, 0.0);
    Ok((Matrix::from_vec(len, width, data).expect("resized"), r))
}

fn vector(id: &str, field: &'static str, m: Matrix<f32>, len: usize) -> Result<Vec<f32>, StoreError> {
    if m.shape() != (1, len) {
        return Err(schema_err(id, field, shape_str(1, len), m.shape()));
    }
    Ok(m.into_vec())
}

fn unit_interval(id: &str, field: &'static str, values: &[f32]) -> Result<(), StoreError> {
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(StoreError::Schema {
            id: id.to_string(),
            field,
            expected: "values in [0, 1]".into(),
            actual: format!("{v}"),
        });
    }
    Ok(())
}

/// Loads and shape-checks every feature file of `entry` under `root`.
pub fn load_bundle(root: &Path, entry: &SampleEntry, schema: &Schema) -> Result<FeatureBundle, StoreError> {
    let id = entry.id.as_str();
    let f = &entry.files;
    let load = |rel: &str| load_matrix(&resolve(root, rel));

    let (tokens, valid_tokens) = pad_sequence(id, "tokens", load(&f.tokens)?, schema.seq_len, schema.d_txt)?;
    let (regions, valid_regions) = pad_sequence(id, "regions", load(&f.regions)?, schema.seq_len, schema.d_region)?;
    let geometry_raw = load(&f.geometry)?;
    if geometry_raw.shape() != (valid_regions, schema.d_geom) {
        return Err(schema_err(id, "geometry", shape_str(valid_regions, schema.d_geom), geometry_raw.shape()));
    }
    unit_interval(id, "geometry", geometry_raw.data())?;
    let (geometry, _) = pad_sequence(id, "geometry", geometry_raw, schema.seq_len, schema.d_geom)?;

    let pair_txt = vector(id, "pair_txt", load(&f.pair_txt)?, schema.d_pair)?;
    let pair_img = vector(id, "pair_img", load(&f.pair_img)?, schema.d_pair)?;
    let tox = vector(id, "tox", load(&f.tox)?, schema.d_tox)?;
    unit_interval(id, "tox", &tox)?;
    let nsfw = vector(id, "nsfw", load(&f.nsfw)?, schema.d_nsfw)?;
    unit_interval(id, "nsfw", &nsfw)?;
    let cap = vector(id, "cap", load(&f.cap)?, schema.d_cap)?;

    Ok(FeatureBundle {
        id: entry.id.clone(),
        tokens,
        regions,
        geometry,
        pair_txt,
        pair_img,
        tox,
        nsfw,
        cap,
        raw_text: entry.raw_text.clone(),
        label: entry.label,
        valid_tokens,
        valid_regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::manifest::FeatureFiles;
    use crate::store::save_matrix;

    fn write_sample(dir: &Path, tokens: (usize, usize), regions: (usize, usize)) -> SampleEntry {
        let s = Schema::default();
        let mk = |name: &str, r: usize, c: usize, v: f32| {
            save_matrix(&dir.join(name), &Matrix::filled(r, c, v)).unwrap();
            name.to_string()
        };
        SampleEntry {
            id: "s0".into(),
            label: 1,
            raw_text: "hello".into(),
            files: FeatureFiles {
                tokens: mk("tokens.mmfb", tokens.0, tokens.1, 0.5),
                regions: mk("regions.mmfb", regions.0, regions.1, -0.5),
                geometry: mk("geometry.mmfb", regions.0, s.d_geom, 0.25),
                pair_txt: mk("pair_txt.mmfb", 1, s.d_pair, 1.0),
                pair_img: mk("pair_img.mmfb", 1, s.d_pair, 2.0),
                tox: mk("tox.mmfb", 1, s.d_tox, 0.1),
                nsfw: mk("nsfw.mmfb", 1, s.d_nsfw, 0.2),
                cap: mk("cap.mmfb", 1, s.d_cap, 3.0),
            },
        }
    }

    #[test]
    fn short_sequences_are_padded() {
        let dir = tempfile::tempdir().unwrap();
        let e = write_sample(dir.path(), (80, 768), (100, 1024));
        let b = load_bundle(dir.path(), &e, &Schema::default()).unwrap();
        assert_eq!(b.tokens.shape(), (100, 768));
        assert_eq!(b.valid_tokens, 80);
        assert_eq!(b.valid_regions, 100);
        assert!(b.tokens.row(79).iter().all(|&x| x == 0.5));
        assert!(b.tokens.row(80).iter().all(|&x| x == 0.0));
        assert_eq!(b.geometry.shape(), (100, 6));
        assert!(b.tokens.is_finite() && b.regions.is_finite());
    }

    #[test]
    fn wrong_region_width_names_field_and_shape() {
        let dir = tempfile::tempdir().unwrap();
        let e = write_sample(dir.path(), (100, 768), (100, 512));
        let err = load_bundle(dir.path(), &e, &Schema::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("regions: expected 100×1024"), "{msg}");
        assert!(msg.contains("100×512"), "{msg}");
    }

    #[test]
    fn geometry_out_of_range_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let e = write_sample(dir.path(), (3, 768), (3, 1024));
        save_matrix(&dir.path().join("geometry.mmfb"), &Matrix::filled(3, 6, 1.5)).unwrap();
        let err = load_bundle(dir.path(), &e, &Schema::default()).unwrap_err();
        assert!(err.to_string().contains("geometry"));
    }
}
