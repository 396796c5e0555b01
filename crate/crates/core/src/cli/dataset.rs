//! Dataset manifests and the long-CSV / raw-f64 array formats.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mda::Mda;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DataFormat {
    /// Header `obs_id,i1,...,iD,value`, one row per cell, 1-based indices.
    #[default]
    #[serde(rename = "csv")]
    Csv,
    /// Little-endian f64 in canonical order, observations concatenated.
    #[serde(rename = "bin-f64")]
    BinF64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub dims: Vec<usize>,
    pub n_obs: usize,
    #[serde(default)]
    pub dim_names: Vec<String>,
    /// Marks dimensions with a natural ordering in time.
    #[serde(default)]
    pub temporal: Vec<bool>,
    /// Data file, relative to the manifest's directory unless absolute.
    pub data: PathBuf,
    #[serde(default)]
    pub format: DataFormat,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::Dataset(format!(
                "manifest dims {:?} need order >= 2 and positive lengths",
                self.dims
            )));
        }
        if self.n_obs == 0 {
            return Err(Error::Dataset("manifest n_obs must be positive".into()));
        }
        for (name, len) in [("dim_names", self.dim_names.len()), ("temporal", self.temporal.len())] {
            if len != 0 && len != self.dims.len() {
                return Err(Error::Dataset(format!(
                    "manifest {name} has {len} entries for {} dimensions",
                    self.dims.len()
                )));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Dataset(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("manifest {}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    /// Data path resolved against `manifest_dir`.
    pub fn data_path(&self, manifest_dir: &Path) -> PathBuf {
        if self.data.is_absolute() {
            self.data.clone()
        } else {
            manifest_dir.join(&self.data)
        }
    }
}

/// Observations in ascending `obs_id` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub obs_ids: Vec<u64>,
    pub observations: Vec<Mda>,
}

/// Reads the manifest at `path` and the data file it names.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    load_dataset_from(&manifest, &manifest.data_path(dir))
}

/// Reads `data` using the shape and format recorded in `manifest`.
pub fn load_dataset_from(manifest: &DatasetManifest, data: &Path) -> Result<Dataset> {
    manifest.validate()?;
    let file = fs::File::open(data)
        .map_err(|e| Error::Dataset(format!("cannot open {}: {e}", data.display())))?;
    match manifest.format {
        DataFormat::Csv => read_long_csv(file, manifest),
        DataFormat::BinF64 => read_bin_f64(file, manifest),
    }
}

pub fn read_long_csv<R: Read>(input: R, manifest: &DatasetManifest) -> Result<Dataset> {
    let dims = &manifest.dims;
    let order = dims.len();
    let cells: usize = dims.iter().product();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    let mut expected = vec!["obs_id".to_string()];
    expected.extend((1..=order).map(|d| format!("i{d}")));
    expected.push("value".into());
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Dataset(format!(
            "header is '{}', expected '{}'",
            header.iter().collect::<Vec<_>>().join(","),
            expected.join(",")
        )));
    }
    let mut obs: BTreeMap<u64, Vec<Option<f64>>> = BTreeMap::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record?;
        if record.len() != order + 2 {
            return Err(Error::Dataset(format!(
                "line {line}: {} fields, expected {}",
                record.len(),
                order + 2
            )));
        }
        let int = |col: usize| -> Result<u64> {
            record[col].parse().map_err(|_| {
                Error::Dataset(format!(
                    "line {line}: column {} '{}' is not a nonnegative integer",
                    expected[col], &record[col]
                ))
            })
        };
        let id = int(0)?;
        let mut offset = 0;
        for d in 0..order {
            let i = int(d + 1)? as usize;
            if i == 0 || i > dims[d] {
                return Err(Error::Dataset(format!(
                    "line {line}: index i{} = {i} outside 1..={}",
                    d + 1,
                    dims[d]
                )));
            }
            offset = offset * dims[d] + (i - 1);
        }
        let value: f64 = record[order + 1].parse().map_err(|_| {
            Error::Dataset(format!("line {line}: value '{}' is not a number", &record[order + 1]))
        })?;
        if !value.is_finite() {
            return Err(Error::Dataset(format!("line {line}: value {value} is not finite")));
        }
        let slot = &mut obs.entry(id).or_insert_with(|| vec![None; cells])[offset];
        if slot.is_some() {
            return Err(Error::Dataset(format!(
                "line {line}: duplicate cell for obs_id {id}"
            )));
        }
        *slot = Some(value);
    }
    if obs.len() != manifest.n_obs {
        return Err(Error::Dataset(format!(
            "found {} observations, manifest says {}",
            obs.len(),
            manifest.n_obs
        )));
    }
    let mut obs_ids = Vec::with_capacity(obs.len());
    let mut observations = Vec::with_capacity(obs.len());
    for (id, values) in obs {
        if let Some(missing) = values.iter().position(Option::is_none) {
            let index = unravel(dims, missing);
            return Err(Error::Dataset(format!(
                "obs_id {id}: missing cell {:?}",
                index.iter().map(|i| i + 1).collect::<Vec<_>>()
            )));
        }
        obs_ids.push(id);
        observations.push(Mda::new(dims.clone(), values.into_iter().flatten().collect())?);
    }
    Ok(Dataset {
        obs_ids,
        observations,
    })
}

fn unravel(dims: &[usize], mut offset: usize) -> Vec<usize> {
    let mut index = vec![0; dims.len()];
    for d in (0..dims.len()).rev() {
        index[d] = offset % dims[d];
        offset /= dims[d];
    }
    index
}

pub fn read_bin_f64<R: Read>(mut input: R, manifest: &DatasetManifest) -> Result<Dataset> {
    let cells: usize = manifest.dims.iter().product();
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let expected = manifest.n_obs * cells * 8;
    if bytes.len() != expected {
        return Err(Error::Dataset(format!(
            "binary data has {} bytes, expected {expected} for {} observations of {cells} cells",
            bytes.len(),
            manifest.n_obs
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Dataset(format!(
            "observation {}: cell {} is not finite",
            bad / cells + 1,
            bad % cells + 1
        )));
    }
    let observations = values
        .chunks_exact(cells)
        .map(|c| Mda::new(manifest.dims.clone(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        obs_ids: (1..=manifest.n_obs as u64).collect(),
        observations,
    })
}

fn check_uniform(data: &[Mda]) -> Result<&[usize]> {
    let first = data
        .first()
        .ok_or_else(|| Error::Dataset("no observations to write".into()))?;
    if data.iter().any(|x| x.dims() != first.dims()) {
        return Err(Error::Shape("observations have different shapes".into()));
    }
    Ok(first.dims())
}

/// Long CSV with `obs_id` = 1..N.
pub fn write_long_csv<W: Write>(out: W, data: &[Mda]) -> Result<()> {
    let dims = check_uniform(data)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["obs_id".to_string()];
    header.extend((1..=dims.len()).map(|d| format!("i{d}")));
    header.push("value".into());
    w.write_record(&header)?;
    for (k, x) in data.iter().enumerate() {
        for (offset, v) in x.values().iter().enumerate() {
            let mut rec = vec![(k + 1).to_string()];
            rec.extend(unravel(dims, offset).iter().map(|i| (i + 1).to_string()));
            rec.push(format!("{v:?}"));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_bin_f64<W: Write>(mut out: W, data: &[Mda]) -> Result<()> {
    check_uniform(data)?;
    for x in data {
        for v in x.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `<stem>.csv` or `<stem>.bin` plus `<stem>.json` into `dir`;
/// returns the manifest path.
pub fn write_dataset(dir: &Path, stem: &str, data: &[Mda], format: DataFormat) -> Result<PathBuf> {
    let dims = check_uniform(data)?.to_vec();
    fs::create_dir_all(dir)?;
    let file = match format {
        DataFormat::Csv => format!("{stem}.csv"),
        DataFormat::BinF64 => format!("{stem}.bin"),
    };
    let out = std::io::BufWriter::new(fs::File::create(dir.join(&file))?);
    match format {
        DataFormat::Csv => write_long_csv(out, data)?,
        DataFormat::BinF64 => write_bin_f64(out, data)?,
    }
    let manifest = DatasetManifest {
        dims,
        n_obs: data.len(),
        dim_names: Vec::new(),
        temporal: Vec::new(),
        data: PathBuf::from(file),
        format,
    };
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(dims: Vec<usize>, n_obs: usize) -> DatasetManifest {
        DatasetManifest {
            dims,
            n_obs,
            dim_names: Vec::new(),
            temporal: Vec::new(),
            data: PathBuf::from("x.csv"),
            format: DataFormat::Csv,
        }
    }

    #[test]
    fn one_observation() {
        let text = "obs_id,i1,i2,value\n1,1,1,1.5\n1,1,2,2.5\n1,2,1,3.5\n1,2,2,4.5\n";
        let ds = read_long_csv(text.as_bytes(), &manifest(vec![2, 2], 1)).unwrap();
        assert_eq!(ds.observations[0].values(), &[1.5, 2.5, 3.5, 4.5]);
        assert_eq!(ds.obs_ids, vec![1]);
        let shuffled = "obs_id,i1,i2,value\n1,2,2,4.5\n1,1,2,2.5\n1,1,1,1.5\n1,2,1,3.5\n";
        assert_eq!(read_long_csv(shuffled.as_bytes(), &manifest(vec![2, 2], 1)).unwrap(), ds);
    }

    #[test]
    fn diagnostics() {
        let m = manifest(vec![2, 2], 1);
        let err = |t: &str| read_long_csv(t.as_bytes(), &m).unwrap_err().to_string();
        assert!(err("obs_id,i1,i2,value\n1,1,1,1\n1,1,2,1\n1,2,1,1\n").contains("missing cell [2, 2]"));
        assert!(err("obs_id,i1,i2,value\n1,1,1,1\n1,1,1,2\n").contains("line 3: duplicate"));
        assert!(err("obs_id,i1,i2,value\n1,3,1,1\n").contains("line 2: index i1 = 3"));
        assert!(err("obs_id,i1,i2,value\n1,1,1,NaN\n").contains("not finite"));
        assert!(err("obs_id,a,b,value\n").contains("header"));
        assert!(err("obs_id,i1,i2,value\n1,1,1,x\n").contains("not a number"));
    }

    #[test]
    fn csv_and_binary_agree() {
        let data: Vec<Mda> = (0..3)
            .map(|k| Mda::from_fn(&[2, 3, 2], |i| (k * 100 + i[0] * 10 + i[1]) as f64 / 7.0 + i[2] as f64).unwrap())
            .collect();
        let mut csv_bytes = Vec::new();
        write_long_csv(&mut csv_bytes, &data).unwrap();
        let mut bin = Vec::new();
        write_bin_f64(&mut bin, &data).unwrap();
        let m = manifest(vec![2, 3, 2], 3);
        let a = read_long_csv(csv_bytes.as_slice(), &m).unwrap();
        let b = read_bin_f64(bin.as_slice(), &m).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.observations, data);
        assert!(read_bin_f64(&bin[..bin.len() - 8], &m).is_err());
    }
}
