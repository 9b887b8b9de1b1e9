//! Binary case-library snapshot.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "ACLIB\r\n\x1a"
//! version   u8       currently 1
//! records   repeated: tag u8, length u32, payload[length]
//!   tag 1   manifest, UTF-8 JSON: lookback, horizon, layout, pool, distance,
//!           seed, cluster_count
//!   tag 2   cluster: medoid_origin u64, member_count u64, rows u32, cols u32,
//!           medoid f64[rows*cols] row-major, n_losses u32, losses f64[n],
//!           n_members u32, members u64[n]
//!   tag 255 end, empty payload
//! ```
//!
//! The manifest comes first and the end record last; cluster records appear
//! in cluster order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::library::{CaseLibrary, Cluster};
use super::models::ModelSpec;
use crate::error::{Error, Result};
use crate::memory::DistanceConfig;
use crate::series::ChannelLayout;

pub const MAGIC: &[u8; 8] = b"ACLIB\r\n\x1a";
pub const VERSION: u8 = 1;

const TAG_MANIFEST: u8 = 1;
const TAG_CLUSTER: u8 = 2;
const TAG_END: u8 = 255;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryManifest {
    pub lookback: usize,
    pub horizon: usize,
    pub layout: ChannelLayout,
    pub pool: Vec<ModelSpec>,
    pub distance: DistanceConfig,
    pub seed: u64,
    pub cluster_count: usize,
}

fn snap(msg: impl Into<String>) -> Error {
    Error::Snapshot(msg.into())
}

fn record<W: Write>(w: &mut W, tag: u8, payload: &[u8]) -> Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| snap("record too large"))?;
    w.write_u8(tag)?;
    w.write_u32::<LittleEndian>(len)?;
    w.write_all(payload)?;
    Ok(())
}

fn encode_cluster(c: &Cluster) -> Result<Vec<u8>> {
    let mut b = vec![];
    b.write_u64::<LittleEndian>(c.medoid_origin as u64)?;
    b.write_u64::<LittleEndian>(c.member_count as u64)?;
    b.write_u32::<LittleEndian>(c.medoid.nrows() as u32)?;
    b.write_u32::<LittleEndian>(c.medoid.ncols() as u32)?;
    for v in c.medoid.iter() {
        b.write_f64::<LittleEndian>(*v)?;
    }
    b.write_u32::<LittleEndian>(c.model_losses.len() as u32)?;
    for v in &c.model_losses {
        b.write_f64::<LittleEndian>(*v)?;
    }
    b.write_u32::<LittleEndian>(c.members.len() as u32)?;
    for m in &c.members {
        b.write_u64::<LittleEndian>(*m as u64)?;
    }
    Ok(b)
}

fn decode_cluster(payload: &[u8]) -> Result<Cluster> {
    let mut r = Cursor::new(payload);
    let truncated = |_| snap("truncated cluster record");
    let medoid_origin = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let member_count = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let rows = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let cols = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut data = vec![0.0; rows * cols];
    r.read_f64_into::<LittleEndian>(&mut data).map_err(truncated)?;
    let medoid = Array2::from_shape_vec((rows, cols), data).map_err(|e| snap(e.to_string()))?;
    let n = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut model_losses = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut model_losses).map_err(truncated)?;
    let n = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut members = vec![0u64; n];
    r.read_u64_into::<LittleEndian>(&mut members).map_err(truncated)?;
    if r.position() as usize != payload.len() {
        return Err(snap("trailing bytes in cluster record"));
    }
    Ok(Cluster {
        medoid,
        medoid_origin,
        member_count,
        members: members.into_iter().map(|m| m as usize).collect(),
        model_losses,
    })
}

pub fn write_library<W: Write>(library: &CaseLibrary, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u8(VERSION)?;
    let manifest = LibraryManifest {
        lookback: library.lookback(),
        horizon: library.horizon(),
        layout: library.layout().clone(),
        pool: library.pool().to_vec(),
        distance: *library.distance(),
        seed: library.seed(),
        cluster_count: library.clusters().len(),
    };
    record(&mut w, TAG_MANIFEST, &serde_json::to_vec(&manifest)?)?;
    for c in library.clusters() {
        record(&mut w, TAG_CLUSTER, &encode_cluster(c)?)?;
    }
    record(&mut w, TAG_END, &[])?;
    w.flush()?;
    Ok(())
}

pub fn read_library<R: Read>(mut r: R) -> Result<CaseLibrary> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| snap("file too short for header"))?;
    if &magic != MAGIC {
        return Err(snap("not a case-library snapshot"));
    }
    let version = r.read_u8().map_err(|_| snap("missing version byte"))?;
    if version != VERSION {
        return Err(snap(format!("unsupported snapshot version {version}")));
    }
    let mut manifest: Option<LibraryManifest> = None;
    let mut clusters = vec![];
    loop {
        let tag = r.read_u8().map_err(|_| snap("missing end record"))?;
        let len = r.read_u32::<LittleEndian>().map_err(|_| snap("truncated record header"))? as usize;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(|_| snap("truncated record"))?;
        match tag {
            TAG_MANIFEST if manifest.is_none() => manifest = Some(serde_json::from_slice(&payload)?),
            TAG_MANIFEST => return Err(snap("duplicate manifest")),
            TAG_CLUSTER if manifest.is_some() => clusters.push(decode_cluster(&payload)?),
            TAG_CLUSTER => return Err(snap("cluster record before manifest")),
            TAG_END => break,
            other => return Err(snap(format!("unknown record tag {other}"))),
        }
    }
    let m = manifest.ok_or_else(|| snap("no manifest"))?;
    if m.cluster_count != clusters.len() {
        return Err(snap(format!("manifest lists {} clusters, found {}", m.cluster_count, clusters.len())));
    }
    CaseLibrary::new(m.lookback, m.horizon, m.layout, m.pool, m.distance, m.seed, clusters)
}

pub fn save_library(library: &CaseLibrary, path: &Path) -> Result<()> {
    write_library(library, BufWriter::new(File::create(path)?))
}

pub fn load_library(path: &Path) -> Result<CaseLibrary> {
    read_library(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_pool::{build_case_library, LibraryConfig};
    use crate::series::TimeSeries;

    fn library() -> CaseLibrary {
        let x: Vec<f64> = (0..120).map(|t| (t as f64 * 0.4).sin() * (1.0 + (t / 40) as f64)).collect();
        let cfg = LibraryConfig { lookback: 12, horizon: 4, stride: 4, k_clusters: 3, ..Default::default() };
        build_case_library(&TimeSeries::from_values(&x), &cfg, &ModelSpec::default_pool(4)).unwrap()
    }

    #[test]
    fn round_trip_is_lossless_and_stable() {
        let lib = library();
        let mut a = vec![];
        write_library(&lib, &mut a).unwrap();
        let back = read_library(a.as_slice()).unwrap();
        assert_eq!(back.distance(), lib.distance());
        assert_eq!(back.clusters(), lib.clusters());
        assert_eq!(back, lib);
        let mut b = vec![];
        write_library(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut bytes = vec![];
        write_library(&library(), &mut bytes).unwrap();
        assert!(read_library(&bytes[..5]).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(matches!(read_library(wrong_version.as_slice()), Err(Error::Snapshot(_))));
        assert!(read_library(&bytes[..bytes.len() - 5]).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(read_library(bad_magic.as_slice()).is_err());
    }
}
