//! Corrector-bundle cache: a small versioned binary format with a CRC32
//! integrity trailer and content-addressed file names, so repeated runs on
//! the same coefficients skip the cell stage bit-exactly.
//!
//! Layout (all integers little-endian): magic "HOM2", u16 version, u32
//! torus N, u32 m, the residual list (u32 count, then u32 name length +
//! UTF-8 name + f64 value each), then the corrector arrays as raw f64 in
//! fixed order (chi 0..3, theta 0..3, b 0..6, e12 0..3, each m*m*N*N
//! values in `MatField` layout), and finally the CRC32 of every preceding
//! byte.

use crate::cell::CorrectorBundle;
use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::torus::MatField;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const MAGIC: [u8; 4] = *b"HOM2";
pub const VERSION: u16 = 1;

/// CRC-32 (IEEE 802.3): reflected polynomial 0xEDB88320, initial value and
/// final xor 0xFFFFFFFF. The check value for b"123456789" is 0xCBF43926.
pub fn crc32(data: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *slot = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

/// Content address: SHA-256 over the canonical coefficient string and the
/// torus size, truncated to 16 hex digits.
pub fn cache_key(set: &CoefficientSet, torus_n: usize) -> String {
    let mut h = Sha256::new();
    h.update(set.canonical_string().as_bytes());
    h.update(b"\n");
    h.update((torus_n as u64).to_le_bytes());
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cache_path(dir: &Path, set: &CoefficientSet, torus_n: usize) -> PathBuf {
    dir.join(format!("{}.corr", cache_key(set, torus_n)))
}

fn push_field(buf: &mut Vec<u8>, f: &MatField) {
    for &v in f.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_bundle(path: &Path, bundle: &CorrectorBundle) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(bundle.n as u32).to_le_bytes());
    buf.extend_from_slice(&(bundle.m as u32).to_le_bytes());
    buf.extend_from_slice(&(bundle.residuals.len() as u32).to_le_bytes());
    for (name, value) in &bundle.residuals {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&value.to_le_bytes());
    }
    for f in &bundle.chi {
        push_field(&mut buf, f);
    }
    for f in &bundle.theta {
        push_field(&mut buf, f);
    }
    for f in &bundle.b {
        push_field(&mut buf, f);
    }
    for f in &bundle.e12 {
        push_field(&mut buf, f);
    }
    let crc = crc32(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Cache(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn field(&mut self, n: usize, m: usize) -> Result<MatField> {
        let mut f = MatField::zeros(n, m, m);
        let bytes = self.take(m * m * n * n * 8)?;
        for (dst, chunk) in f.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(f)
    }
}

pub fn read_bundle(path: &Path) -> Result<CorrectorBundle> {
    let buf = std::fs::read(path)?;
    if buf.len() < MAGIC.len() + 2 + 4 {
        return Err(Error::Cache(format!(
            "{}: too short to be a corrector cache file",
            path.display()
        )));
    }
    let (body, trailer) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32(body);
    if stored != computed {
        return Err(Error::Cache(format!(
            "{}: checksum mismatch (stored {stored:08x}, computed {computed:08x}); \
             file is corrupt or truncated",
            path.display()
        )));
    }
    let mut r = Reader { buf: body, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Cache(format!(
            "{}: bad magic {magic:?}, not a corrector cache file",
            path.display()
        )));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Cache(format!(
            "{}: unsupported cache version {version}, this build reads version {VERSION}",
            path.display()
        )));
    }
    let n = r.u32()? as usize;
    let m = r.u32()? as usize;
    if n == 0 || m == 0 || m > 8 {
        return Err(Error::Cache(format!(
            "{}: implausible dimensions N={n}, m={m}",
            path.display()
        )));
    }
    let count = r.u32()? as usize;
    let mut residuals = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Cache(format!("{}: residual name is not UTF-8", path.display())))?
            .to_string();
        let value = r.f64()?;
        residuals.push((name, value));
    }
    let mut fields = |count: usize| -> Result<Vec<MatField>> {
        (0..count).map(|_| r.field(n, m)).collect()
    };
    let chi_v = fields(3)?;
    let theta_v = fields(3)?;
    let b = fields(6)?;
    let e12_v = fields(3)?;
    if r.pos != body.len() {
        return Err(Error::Cache(format!(
            "{}: {} trailing bytes after the payload",
            path.display(),
            body.len() - r.pos
        )));
    }
    let into3 = |v: Vec<MatField>| -> [MatField; 3] {
        let mut it = v.into_iter();
        [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
    };
    Ok(CorrectorBundle {
        n,
        m,
        chi: into3(chi_v),
        theta: into3(theta_v),
        b,
        e12: into3(e12_v),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::build_bundle;
    use crate::coefficients::{preset, sample_grid};

    #[test]
    fn crc32_matches_the_standard_check_value() {
        assert_eq!(crc32(b"123456789"), 0xCBF43926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn cache_key_separates_sets_and_grids() {
        let lam = preset("laminate").unwrap();
        let idty = preset("identity").unwrap();
        let k1 = cache_key(&lam, 64);
        assert_eq!(k1.len(), 16);
        assert_eq!(k1, cache_key(&lam, 64));
        assert_ne!(k1, cache_key(&lam, 128));
        assert_ne!(k1, cache_key(&idty, 64));
    }

    #[test]
    fn bundle_round_trips_bit_exactly() {
        let set = preset("full-lower-order").unwrap();
        let g = sample_grid(&set, 32).unwrap();
        let (bundle, _) = build_bundle(&g, 1e-10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = cache_path(dir.path(), &set, 32);
        write_bundle(&path, &bundle).unwrap();
        let back = read_bundle(&path).unwrap();
        assert_eq!(back.n, bundle.n);
        assert_eq!(back.m, bundle.m);
        assert_eq!(back.residuals, bundle.residuals);
        for k in 0..3 {
            assert_eq!(back.chi[k].data(), bundle.chi[k].data());
            assert_eq!(back.theta[k].data(), bundle.theta[k].data());
            assert_eq!(back.e12[k].data(), bundle.e12[k].data());
        }
        for ik in 0..6 {
            assert_eq!(back.b[ik].data(), bundle.b[ik].data());
        }
    }

    #[test]
    fn corruption_and_foreign_files_are_refused() {
        let set = preset("laminate").unwrap();
        let g = sample_grid(&set, 16).unwrap();
        let (bundle, _) = build_bundle(&g, 1e-10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.corr");
        write_bundle(&path, &bundle).unwrap();

        // Flip one payload byte: checksum must catch it.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[40] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        let err = read_bundle(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");

        // Truncation is also a checksum failure.
        write_bundle(&path, &bundle).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = read_bundle(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");

        // Wrong magic with a valid trailer: refused by name.
        let mut body = bytes[..bytes.len() - 4].to_vec();
        body[0] = b'X';
        let crc = crc32(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &body).unwrap();
        let err = read_bundle(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");

        // Future version: refused by number.
        let mut body = bytes[..bytes.len() - 4].to_vec();
        body[4] = 9;
        let crc = crc32(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &body).unwrap();
        let err = read_bundle(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
