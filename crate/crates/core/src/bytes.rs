//! Crate-private cursor over a byte slice for the binary codecs.
//!
//! All multi-byte integers in the artifact and wire formats are
//! little-endian; decoders built on this reader report truncation and
//! leftover bytes uniformly.

use crate::bundle::BundleError;

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], BundleError> {
        let end = self.pos.checked_add(n).ok_or(BundleError::LengthOverflow {
            len: n as u64,
            max: usize::MAX as u64,
        })?;
        if end > self.bytes.len() {
            return Err(BundleError::TruncatedInput);
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, BundleError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, BundleError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("len 2")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, BundleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("len 4")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, BundleError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("len 8")))
    }

    pub(crate) fn i64(&mut self) -> Result<i64, BundleError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("len 8")))
    }

    /// Fails with [`BundleError::TrailingBytes`] unless the input was
    /// consumed exactly.
    pub(crate) fn finish(&self) -> Result<(), BundleError> {
        let rest = self.bytes.len() - self.pos;
        if rest != 0 {
            return Err(BundleError::TrailingBytes(rest));
        }
        Ok(())
    }
}

/// Reads a u16-length-prefixed UTF-8 string.
pub(crate) fn read_str16(r: &mut Reader<'_>) -> Result<String, BundleError> {
    let len = r.u16()?;
    let bytes = r.take(len as usize)?;
    String::from_utf8(bytes.to_vec()).map_err(|_| BundleError::Encoding)
}

/// Writes a u16-length-prefixed UTF-8 string.
pub(crate) fn write_str16(out: &mut Vec<u8>, text: &str) {
    debug_assert!(text.len() <= u16::MAX as usize);
    out.extend_from_slice(&(text.len() as u16).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
}
