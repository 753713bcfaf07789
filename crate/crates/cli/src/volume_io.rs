//! Raw volume files: a JSON header `name.json` next to a little-endian
//! payload `name.raw`, axes `b,k,h,n` fastest first.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lrtv4d_core::{LabelMap, Volume4D};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const AXIS_ORDER: &str = "b,k,h,n";
pub const ENDIANNESS: &str = "little";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    Float32,
    Float64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 4],
    pub spacing: [f64; 4],
    #[serde(default)]
    pub origin: [f64; 3],
    pub dtype: Dtype,
    pub axis_order: String,
    pub endianness: String,
}

impl VolumeHeader {
    pub fn of(x: &Volume4D, dtype: Dtype) -> Self {
        Self {
            dims: x.dims(),
            spacing: x.spacing(),
            origin: x.origin(),
            dtype,
            axis_order: AXIS_ORDER.into(),
            endianness: ENDIANNESS.into(),
        }
    }

    fn validate(&self, path: &Path) -> CliResult<()> {
        if self.axis_order != AXIS_ORDER {
            return Err(CliError::io(
                path,
                format!("axis_order must be \"{AXIS_ORDER}\", got \"{}\"", self.axis_order),
            ));
        }
        if self.endianness != ENDIANNESS {
            return Err(CliError::io(
                path,
                format!("endianness must be \"{ENDIANNESS}\", got \"{}\"", self.endianness),
            ));
        }
        Ok(())
    }

    pub fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.dtype.size()
    }
}

/// Payload path belonging to a header path.
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

/// Header path for a stem or header path.
pub fn header_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode(x: &Volume4D, dtype: Dtype) -> (Vec<u8>, Vec<u8>) {
    let header = serde_json::to_vec_pretty(&VolumeHeader::of(x, dtype)).expect("header serializes");
    let mut payload = Vec::with_capacity(x.len() * dtype.size());
    match dtype {
        Dtype::Float32 => x
            .data()
            .iter()
            .for_each(|v| payload.extend_from_slice(&(*v as f32).to_le_bytes())),
        Dtype::Float64 => x
            .data()
            .iter()
            .for_each(|v| payload.extend_from_slice(&v.to_le_bytes())),
    }
    (header, payload)
}

pub fn read_volume(path: &Path) -> CliResult<Volume4D> {
    let hp = header_path(path);
    let text = fs::read_to_string(&hp).map_err(|e| CliError::io(&hp, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| CliError::io(&hp, e))?;
    header.validate(&hp)?;
    let pp = payload_path(&hp);
    let bytes = fs::read(&pp).map_err(|e| CliError::io(&pp, e))?;
    if bytes.len() != header.payload_len() {
        return Err(CliError::io(
            &pp,
            format!(
                "payload has {} bytes, header dims {:?} as {:?} need {}",
                bytes.len(),
                header.dims,
                header.dtype,
                header.payload_len()
            ),
        ));
    }
    let data: Vec<f64> = match header.dtype {
        Dtype::Float32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::Float64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let x = Volume4D::from_vec(header.dims, data)
        .and_then(|v| v.with_spacing(header.spacing))
        .and_then(|v| v.with_origin(header.origin))
        .map_err(|e| CliError::io(&hp, e))?;
    Ok(x)
}

/// Label maps are stored as single-timepoint volumes of integer values.
pub fn labels_to_volume(labels: &LabelMap) -> Volume4D {
    let [b, k, h] = labels.dims;
    Volume4D::from_vec([b, k, h, 1], labels.labels.iter().map(|&l| l as f64).collect())
        .expect("label map has consistent dims")
}

pub fn read_labels(path: &Path) -> CliResult<LabelMap> {
    let v = read_volume(path)?;
    let hp = header_path(path);
    if v.n_timepoints() != 1 {
        return Err(CliError::io(&hp, "label map must have a single timepoint"));
    }
    let mut labels = Vec::with_capacity(v.len());
    for &x in v.data() {
        if x < 0.0 || x.fract() != 0.0 || x > u32::MAX as f64 {
            return Err(CliError::io(&hp, format!("label value {x} is not a non-negative integer")));
        }
        labels.push(x as u32);
    }
    LabelMap::new(v.spatial_dims(), labels).map_err(|e| CliError::io(&hp, e))
}

/// Files written to temporaries and renamed into place together on
/// [`Staged::commit`]. Dropping without committing removes the temporaries.
#[derive(Default)]
pub struct Staged {
    pending: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let name = path
            .file_name()
            .ok_or_else(|| CliError::io(path, "not a file path"))?
            .to_string_lossy();
        let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
        let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
        self.pending.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn add_volume(&mut self, path: &Path, x: &Volume4D, dtype: Dtype) -> CliResult<()> {
        let hp = header_path(path);
        let (header, payload) = encode(x, dtype);
        self.add(&payload_path(&hp), &payload)?;
        self.add(&hp, &header)
    }

    pub fn commit(mut self) -> CliResult<Vec<PathBuf>> {
        let mut done = Vec::new();
        for (tmp, dst) in std::mem::take(&mut self.pending) {
            fs::rename(&tmp, &dst).map_err(|e| CliError::io(&dst, e))?;
            done.push(dst);
        }
        Ok(done)
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        for (tmp, _) in &self.pending {
            let _ = fs::remove_file(tmp);
        }
    }
}
