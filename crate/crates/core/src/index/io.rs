//! Binary index files. The layout is documented in `docs/FORMATS.md`.

use std::path::Path;

use crate::binio::{put_f32s, put_u32, ByteReader};
use crate::index::ivfflat::{FlatList, IvfFlatIndex};
use crate::index::ivfpq::{IvfPqIndex, PqList};
use crate::index::kmeans::Codebook;
use crate::index::lsh::LshIndex;
use crate::index::pq::PqCodebook;
use crate::index::AnyIndex;
use crate::{Error, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"AIDX";
pub const INDEX_VERSION: u32 = 1;

const FAMILY_IVFPQ: u32 = 1;
const FAMILY_IVFFLAT: u32 = 2;
const FAMILY_LSH: u32 = 3;

pub(crate) fn to_bytes(index: &AnyIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    put_u32(&mut out, INDEX_VERSION);
    match index {
        AnyIndex::IvfPq(i) => {
            put_u32(&mut out, FAMILY_IVFPQ);
            put_u32(&mut out, i.dim() as u32);
            put_u32(&mut out, i.coarse.k() as u32);
            put_u32(&mut out, i.nprobe as u32);
            put_u32(&mut out, i.pq.m() as u32);
            put_u32(&mut out, i.pq.ks() as u32);
            put_u32(&mut out, i.rotation.is_some() as u32);
            put_f32s(&mut out, i.coarse.centroids());
            if let Some(r) = &i.rotation {
                put_f32s(&mut out, r);
            }
            put_f32s(&mut out, i.pq.centroids());
            let m = i.pq.m();
            for list in &i.lists {
                put_u32(&mut out, list.ids.len() as u32);
                for (&id, code) in list.ids.iter().zip(list.codes.chunks_exact(m)) {
                    put_u32(&mut out, id);
                    out.extend_from_slice(code);
                }
            }
        }
        AnyIndex::IvfFlat(i) => {
            put_u32(&mut out, FAMILY_IVFFLAT);
            put_u32(&mut out, i.dim() as u32);
            put_u32(&mut out, i.coarse.k() as u32);
            put_u32(&mut out, i.nprobe as u32);
            put_f32s(&mut out, i.coarse.centroids());
            let d = i.dim();
            for list in &i.lists {
                put_u32(&mut out, list.ids.len() as u32);
                for (&id, v) in list.ids.iter().zip(list.vectors.chunks_exact(d)) {
                    put_u32(&mut out, id);
                    put_f32s(&mut out, v);
                }
            }
        }
        AnyIndex::Lsh(i) => {
            put_u32(&mut out, FAMILY_LSH);
            put_u32(&mut out, i.dim as u32);
            put_u32(&mut out, i.out_dim as u32);
            put_u32(&mut out, i.bits as u32);
            put_f32s(&mut out, &i.mean);
            put_f32s(&mut out, &i.basis);
            put_f32s(&mut out, &i.hyperplanes);
            put_u32(&mut out, i.ids.len() as u32);
            let words = i.bits.div_ceil(64);
            let nbytes = i.bits.div_ceil(8);
            for (&id, h) in i.ids.iter().zip(i.hashes.chunks_exact(words)) {
                put_u32(&mut out, id);
                let bytes: Vec<u8> = h.iter().flat_map(|w| w.to_le_bytes()).collect();
                out.extend_from_slice(&bytes[..nbytes]);
            }
        }
    }
    out
}

fn finite(r: &mut ByteReader, n: usize, what: &str) -> Result<Vec<f32>> {
    let at = r.pos();
    if n > (1 << 31) {
        return Err(Error::format(at, format!("{what} is implausibly large")));
    }
    let v = r.f32s(n)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::format(at, format!("non-finite value in {what}")));
    }
    Ok(v)
}

fn positive(r: &mut ByteReader, what: &str) -> Result<usize> {
    let at = r.pos();
    let v = r.u32()? as usize;
    if v == 0 {
        return Err(Error::format(at, format!("{what} must be positive")));
    }
    Ok(v)
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<AnyIndex> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != INDEX_MAGIC {
        return Err(Error::format(0, "bad index magic"));
    }
    let at = r.pos();
    let version = r.u32()?;
    if version != INDEX_VERSION {
        return Err(Error::format(at, format!("unsupported index version {version}")));
    }
    let family_at = r.pos();
    let family = r.u32()?;
    let dim = positive(&mut r, "dimension")?;
    let index = match family {
        FAMILY_IVFPQ => {
            let k = positive(&mut r, "cell count")?;
            let nprobe_at = r.pos();
            let nprobe = r.u32()? as usize;
            if nprobe == 0 || nprobe > k {
                return Err(Error::format(nprobe_at, format!("nprobe {nprobe} outside 1..={k}")));
            }
            let geo_at = r.pos();
            let m = positive(&mut r, "m")?;
            let ks = positive(&mut r, "K_s")?;
            if dim % m != 0 || ks > 256 {
                return Err(Error::format(geo_at, format!("invalid PQ geometry m={m}, K_s={ks} for dim {dim}")));
            }
            let rot_at = r.pos();
            let has_rotation = match r.u32()? {
                0 => false,
                1 => true,
                v => return Err(Error::format(rot_at, format!("bad rotation flag {v}"))),
            };
            let coarse = finite(&mut r, k * dim, "coarse centroids")?;
            let rotation = if has_rotation {
                Some(finite(&mut r, dim * dim, "rotation")?)
            } else {
                None
            };
            let pq = finite(&mut r, ks * dim, "PQ codebook")?;
            let mut lists = Vec::with_capacity(k);
            for _ in 0..k {
                let n = r.u32()? as usize;
                let mut list = PqList::default();
                for _ in 0..n {
                    list.ids.push(r.u32()?);
                    list.codes.extend_from_slice(r.take(m)?);
                }
                lists.push(list);
            }
            let mut index = IvfPqIndex {
                coarse: Codebook::new(k, dim, coarse)?,
                rotation,
                pq: PqCodebook::new(dim, m, ks, pq)?,
                nprobe,
                lists,
                locator: Default::default(),
            };
            index.rebuild_locator().map_err(|e| Error::format(family_at, e.to_string()))?;
            AnyIndex::IvfPq(index)
        }
        FAMILY_IVFFLAT => {
            let k = positive(&mut r, "cell count")?;
            let nprobe_at = r.pos();
            let nprobe = r.u32()? as usize;
            if nprobe == 0 || nprobe > k {
                return Err(Error::format(nprobe_at, format!("nprobe {nprobe} outside 1..={k}")));
            }
            let coarse = finite(&mut r, k * dim, "coarse centroids")?;
            let mut lists = Vec::with_capacity(k);
            for _ in 0..k {
                let n = r.u32()? as usize;
                let mut list = FlatList::default();
                for _ in 0..n {
                    list.ids.push(r.u32()?);
                    list.vectors.extend(finite(&mut r, dim, "stored vector")?);
                }
                lists.push(list);
            }
            let mut index = IvfFlatIndex::from_coarse(Codebook::new(k, dim, coarse)?, nprobe);
            index.lists = lists;
            index.rebuild_locator().map_err(|e| Error::format(family_at, e.to_string()))?;
            AnyIndex::IvfFlat(index)
        }
        FAMILY_LSH => {
            let out_dim_at = r.pos();
            let out_dim = positive(&mut r, "PCA dimension")?;
            if out_dim > dim {
                return Err(Error::format(out_dim_at, "PCA dimension exceeds input dimension"));
            }
            let bits = positive(&mut r, "bit count")?;
            let mean = finite(&mut r, dim, "PCA mean")?;
            let basis = finite(&mut r, out_dim * dim, "PCA basis")?;
            let hyperplanes = finite(&mut r, bits * out_dim, "hyperplanes")?;
            let n = r.u32()? as usize;
            let words = bits.div_ceil(64);
            let nbytes = bits.div_ceil(8);
            let mut ids = Vec::new();
            let mut hashes = Vec::new();
            for _ in 0..n {
                ids.push(r.u32()?);
                let at = r.pos();
                let mut raw = r.take(nbytes)?.to_vec();
                if bits % 8 != 0 && raw[nbytes - 1] >> (bits % 8) != 0 {
                    return Err(Error::format(at, "hash has bits beyond its length"));
                }
                raw.resize(words * 8, 0);
                hashes.extend(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))));
            }
            let mut index = LshIndex {
                dim,
                out_dim,
                bits,
                mean,
                basis,
                hyperplanes,
                ids,
                hashes,
                locator: Default::default(),
            };
            index.rebuild_locator().map_err(|e| Error::format(family_at, e.to_string()))?;
            AnyIndex::Lsh(index)
        }
        other => return Err(Error::format(family_at, format!("unknown index family {other}"))),
    };
    if !r.is_empty() {
        return Err(Error::format(r.pos(), "trailing bytes after index"));
    }
    Ok(index)
}

pub fn save_index(index: &AnyIndex, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(index))?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<AnyIndex> {
    from_bytes(&std::fs::read(path)?)
}
