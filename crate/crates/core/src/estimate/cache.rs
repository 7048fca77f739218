//! JSON mesh cache so externally estimated motions can feed the pipeline.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{ImageSize, PlaneFraction, Vec2};
use crate::mesh::{ControlMotions, GridField, GridSpec};

/// Per-frame motions; `t` starts at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshRecord {
    pub t: usize,
    pub m_spatial_ref: ControlMotions,
    pub m_spatial_tgt: ControlMotions,
    pub m_temporal_ref: ControlMotions,
    pub m_temporal_tgt: ControlMotions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshCache {
    pub spec: GridSpec,
    pub beta: PlaneFraction,
    pub frames: Vec<MeshRecord>,
}

type Array = Vec<Vec<[f64; 2]>>;

#[derive(Serialize, Deserialize)]
struct RawRecord {
    t: usize,
    m_spatial_ref: Array,
    m_spatial_tgt: Array,
    #[serde(default)]
    m_temporal_ref: Option<Array>,
    #[serde(default)]
    m_temporal_tgt: Option<Array>,
}

#[derive(Serialize, Deserialize)]
struct RawCache {
    grid: [usize; 2],
    image_size: [u32; 2],
    beta: f64,
    frames: Vec<RawRecord>,
}

fn to_array(f: &GridField) -> Array {
    (0..f.rows)
        .map(|r| (0..f.cols).map(|c| [f.get(r, c).x, f.get(r, c).y]).collect())
        .collect()
}

fn from_array(a: &Array, spec: &GridSpec, what: &str, t: usize) -> Result<GridField> {
    let cols = a.first().map_or(0, Vec::len);
    if a.len() != spec.rows || a.iter().any(|row| row.len() != spec.cols) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", spec.rows, spec.cols),
            found: format!("{}x{} in {what} of frame {t}", a.len(), cols),
        });
    }
    let data: Vec<Vec2> = a.iter().flatten().map(|v| Vec2::new(v[0], v[1])).collect();
    if data.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
        return Err(Error::SchemaMismatch(format!("non-finite motion in {what} of frame {t}")));
    }
    GridField::from_vec(spec, data)
}

impl MeshCache {
    pub fn to_json(&self) -> Result<String> {
        let raw = RawCache {
            grid: [self.spec.rows, self.spec.cols],
            image_size: [self.spec.size.width, self.spec.size.height],
            beta: self.beta.get(),
            frames: self
                .frames
                .iter()
                .map(|f| RawRecord {
                    t: f.t,
                    m_spatial_ref: to_array(&f.m_spatial_ref),
                    m_spatial_tgt: to_array(&f.m_spatial_tgt),
                    m_temporal_ref: Some(to_array(&f.m_temporal_ref)),
                    m_temporal_tgt: Some(to_array(&f.m_temporal_tgt)),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&raw)?)
    }

    /// Parses and validates a cache against the configured grid.
    pub fn from_json(text: &str, expected: &GridSpec) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let raw: RawCache = serde_json::from_value(value)
            .map_err(|e| Error::SchemaMismatch(e.to_string()))?;
        if raw.grid != [expected.rows, expected.cols] {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", expected.rows, expected.cols),
                found: format!("{}x{}", raw.grid[0], raw.grid[1]),
            });
        }
        let size = ImageSize::new(raw.image_size[0], raw.image_size[1]);
        if size != expected.size {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} px", expected.size.width, expected.size.height),
                found: format!("{}x{} px", size.width, size.height),
            });
        }
        let beta = PlaneFraction::new(raw.beta).map_err(|e| Error::SchemaMismatch(e.to_string()))?;
        let spec = *expected;
        let mut frames = Vec::with_capacity(raw.frames.len());
        for (i, f) in raw.frames.iter().enumerate() {
            if f.t != i + 1 {
                return Err(Error::SchemaMismatch(format!(
                    "frame records must be consecutive from t=1; record {} has t={}",
                    i + 1,
                    f.t
                )));
            }
            let temporal = |a: &Option<Array>, what: &str| -> Result<GridField> {
                match a {
                    Some(a) => from_array(a, &spec, what, f.t),
                    None if f.t == 1 => Ok(GridField::zeros_like(&spec)),
                    None => Err(Error::SchemaMismatch(format!("missing {what} for frame {}", f.t))),
                }
            };
            frames.push(MeshRecord {
                t: f.t,
                m_spatial_ref: from_array(&f.m_spatial_ref, &spec, "m_spatial_ref", f.t)?,
                m_spatial_tgt: from_array(&f.m_spatial_tgt, &spec, "m_spatial_tgt", f.t)?,
                m_temporal_ref: temporal(&f.m_temporal_ref, "m_temporal_ref")?,
                m_temporal_tgt: temporal(&f.m_temporal_tgt, "m_temporal_tgt")?,
            });
        }
        Ok(Self { spec, beta, frames })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path, expected: &GridSpec) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?, expected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec::default_for(ImageSize::new(480, 360))
    }

    fn field(seed: f64) -> GridField {
        let s = spec();
        let data = (0..s.len())
            .map(|i| Vec2::new(seed + i as f64 * 0.125, -seed * 0.5 + i as f64 / 3.0))
            .collect();
        GridField::from_vec(&s, data).unwrap()
    }

    fn cache() -> MeshCache {
        MeshCache {
            spec: spec(),
            beta: PlaneFraction::MID,
            frames: vec![
                MeshRecord {
                    t: 1,
                    m_spatial_ref: field(1.0),
                    m_spatial_tgt: field(2.0),
                    m_temporal_ref: GridField::zeros_like(&spec()),
                    m_temporal_tgt: GridField::zeros_like(&spec()),
                },
                MeshRecord {
                    t: 2,
                    m_spatial_ref: field(3.0),
                    m_spatial_tgt: field(4.0),
                    m_temporal_ref: field(5.0),
                    m_temporal_tgt: field(6.0),
                },
            ],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let c = cache();
        c.write(&p).unwrap();
        assert_eq!(MeshCache::read(&p, &spec()).unwrap(), c);
    }

    #[test]
    fn wrong_grid_is_shape_mismatch() {
        let json = cache().to_json().unwrap();
        let other = GridSpec::new(5, 5, ImageSize::new(480, 360)).unwrap();
        assert!(matches!(
            MeshCache::from_json(&json, &other),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn missing_temporal_record_is_schema_mismatch() {
        let mut v: Value = serde_json::from_str(&cache().to_json().unwrap()).unwrap();
        v["frames"][1].as_object_mut().unwrap().remove("m_temporal_tgt");
        let r = MeshCache::from_json(&v.to_string(), &spec());
        assert!(matches!(r, Err(Error::SchemaMismatch(_))), "{r:?}");
        // the first frame may omit its all-zero temporal motions
        v["frames"][0].as_object_mut().unwrap().remove("m_temporal_ref");
        v["frames"].as_array_mut().unwrap().truncate(1);
        assert!(MeshCache::from_json(&v.to_string(), &spec()).is_ok());
    }

    #[test]
    fn ragged_array_is_shape_mismatch() {
        let mut v: Value = serde_json::from_str(&cache().to_json().unwrap()).unwrap();
        v["frames"][0]["m_spatial_ref"][2].as_array_mut().unwrap().pop();
        assert!(matches!(
            MeshCache::from_json(&v.to_string(), &spec()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn missing_field_is_schema_mismatch() {
        let mut v: Value = serde_json::from_str(&cache().to_json().unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("beta");
        assert!(matches!(
            MeshCache::from_json(&v.to_string(), &spec()),
            Err(Error::SchemaMismatch(_))
        ));
    }
}
