//! Codebook file format.
//!
//! Little-endian binary layout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HGCB"
//! 4       4     format version (u32, currently 1)
//! 8       4     patch size P (u32)
//! 12      4     vocab size K (u32)
//! 16      4     cluster count (u32)
//! 20      4*K*D centroid array, f32, row-major (D = P*P*3)
//! ...     4*K   cluster id array, u32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::Codebook;

const MAGIC: &[u8; 4] = b"HGCB";
const VERSION: u32 = 1;

pub fn write_codebook<W: Write>(cb: &Codebook, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(cb.patch_size() as u32).to_le_bytes())?;
    w.write_all(&(cb.vocab_size() as u32).to_le_bytes())?;
    w.write_all(&(cb.n_clusters() as u32).to_le_bytes())?;
    for v in cb.centroid_buffer() {
        w.write_all(&v.to_le_bytes())?;
    }
    for c in cb.cluster_table() {
        w.write_all(&c.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_codebook<R: Read>(mut r: R) -> Result<Codebook> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Codebook("bad magic; not a codebook file".into()));
    }
    let mut u = [0u8; 4];
    let mut read_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut u)?;
        Ok(u32::from_le_bytes(u))
    };
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Codebook(format!("unsupported codebook version {version}")));
    }
    let patch_size = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    let n_clusters = read_u32(&mut r)? as usize;
    let dim = patch_size * patch_size * 3;

    let mut centroids = vec![0f32; k * dim];
    let mut b4 = [0u8; 4];
    for v in centroids.iter_mut() {
        r.read_exact(&mut b4)?;
        *v = f32::from_le_bytes(b4);
    }
    let mut cluster_of = vec![0u32; k];
    for c in cluster_of.iter_mut() {
        r.read_exact(&mut b4)?;
        *c = u32::from_le_bytes(b4);
    }
    Codebook::from_parts(patch_size, centroids, cluster_of, n_clusters)
}

impl Codebook {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        write_codebook(self, std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Codebook> {
        let f = std::fs::File::open(path)?;
        read_codebook(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut r = crate::rng::seeded(3);
        let patches: Vec<f32> = (0..32 * 12).map(|_| r.gen()).collect();
        let cb = Codebook::build(&patches, 2, 8, 0).unwrap().cluster(3, 1).unwrap();
        let mut buf = Vec::new();
        write_codebook(&cb, &mut buf).unwrap();
        let back = read_codebook(&buf[..]).unwrap();
        assert_eq!(back, cb);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(read_codebook(&b"PNG\x0dxxxxxxxxxxxxxxxx"[..]).is_err());
    }
}
