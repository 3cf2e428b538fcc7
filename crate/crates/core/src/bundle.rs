//! Signed artifact containers: rule bundles and module manifests.
//!
//! Both formats are little-endian, length-prefixed binary with a 4-byte
//! magic. Decoding is strict: every declared length must fit the remaining
//! input, unknown format versions are refused, and leftover bytes after the
//! last field are an error. The digest that gets signed is the SHA-256 of
//! the encoding with the signature block left out, so attaching more
//! signatures never invalidates earlier ones.
//!
//! Rule bundle (`.grb`):
//!
//! ```text
//! magic            4 bytes  "GRB1"
//! format_version   u32
//! bundle_version   u64      anti-rollback counter
//! schema_len       u32      followed by canonical schema text
//! rules_len        u32      followed by canonical rule text
//! sig_count        u16
//!   per signature: signer fingerprint 32 bytes, scheme u8,
//!                  sig_len u16, signature bytes
//! ```
//!
//! Module manifest (`.gmm`):
//!
//! ```text
//! magic            4 bytes  "GMM1"
//! format_version   u32
//! name_len         u16      followed by module name (UTF-8)
//! module_version   u64
//! image_digest     32 bytes
//! sig_count        u16      signature block as above
//! ```

use thiserror::Error;

use crate::bytes::Reader;
use crate::crypto::{
    hash, CryptoError, Digest, KeyHandle, Keystore, PublicKeyId, Signature, SignatureEntry,
    DIGEST_LEN,
};
use crate::dsl::{self, RuleSet};
use crate::schema::Schema;

pub const RULE_BUNDLE_MAGIC: [u8; 4] = *b"GRB1";
pub const MODULE_MANIFEST_MAGIC: [u8; 4] = *b"GMM1";
pub const FORMAT_VERSION: u32 = 1;

/// Ceiling on any text section; a length prefix past this is hostile.
pub const MAX_TEXT_LEN: u32 = 16 * 1024 * 1024;
/// Ceiling on a single signature's byte length.
pub const MAX_SIG_LEN: u16 = 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BundleError {
    #[error("input ends before the encoded structure does")]
    TruncatedInput,
    #[error("{0} byte(s) left after the encoded structure")]
    TrailingBytes(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("declared length {len} exceeds the limit {max}")]
    LengthOverflow { len: u64, max: u64 },
    #[error("unsupported format version {0}")]
    UnsupportedFormat(u32),
    #[error("text section is not valid UTF-8")]
    Encoding,
}

/// Errors from building or compiling a bundle's contents.
#[derive(Debug, Error)]
pub enum CompileError {
    #[error("schema: {0}")]
    Schema(#[from] crate::schema::SchemaError),
    #[error("rules: {0}")]
    Rules(#[from] dsl::ParseError),
    #[error("stored {0} text is not in canonical form")]
    NotCanonical(&'static str),
}

// ---------------------------------------------------------------------------
// section codecs

fn read_text(r: &mut Reader<'_>) -> Result<String, BundleError> {
    let len = r.u32()?;
    if len > MAX_TEXT_LEN {
        return Err(BundleError::LengthOverflow {
            len: len as u64,
            max: MAX_TEXT_LEN as u64,
        });
    }
    let bytes = r.take(len as usize)?;
    String::from_utf8(bytes.to_vec()).map_err(|_| BundleError::Encoding)
}

fn write_text(out: &mut Vec<u8>, text: &str) {
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
}

fn read_signatures(r: &mut Reader<'_>) -> Result<Vec<SignatureEntry>, BundleError> {
    let count = r.u16()?;
    let mut signatures = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let signer = Digest(r.take(DIGEST_LEN)?.try_into().expect("len 32"));
        let scheme = r.u8()?;
        let sig_len = r.u16()?;
        if sig_len > MAX_SIG_LEN {
            return Err(BundleError::LengthOverflow {
                len: sig_len as u64,
                max: MAX_SIG_LEN as u64,
            });
        }
        let bytes = r.take(sig_len as usize)?.to_vec();
        signatures.push(SignatureEntry {
            signer,
            signature: Signature { scheme, bytes },
        });
    }
    Ok(signatures)
}

fn write_signatures(out: &mut Vec<u8>, signatures: &[SignatureEntry]) {
    out.extend_from_slice(&(signatures.len() as u16).to_le_bytes());
    for entry in signatures {
        out.extend_from_slice(entry.signer.as_bytes());
        out.push(entry.signature.scheme);
        out.extend_from_slice(&(entry.signature.bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(&entry.signature.bytes);
    }
}

// ---------------------------------------------------------------------------
// rule bundle

/// A versioned, signed carrier for one schema plus one rule set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleBundle {
    pub version: u64,
    /// Canonical schema document text.
    pub schema_text: String,
    /// Canonicalized rule text.
    pub rule_text: String,
    pub signatures: Vec<SignatureEntry>,
}

impl RuleBundle {
    /// Canonicalizes and validates the inputs, then wraps them in an
    /// unsigned bundle. Rule sets with static findings are refused here, at
    /// the point of production; the loader re-checks at consumption.
    pub fn build(schema_text: &str, rule_text: &str, version: u64) -> Result<Self, CompileError> {
        let schema = Schema::parse(schema_text)?;
        let canonical_schema = schema.to_canonical_text();
        let canonical_rules = dsl::canonicalize(rule_text);
        dsl::parse(&canonical_rules, &schema)?;
        Ok(RuleBundle {
            version,
            schema_text: canonical_schema,
            rule_text: canonical_rules,
            signatures: Vec::new(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.encode_without_signatures();
        write_signatures(&mut out, &self.signatures);
        out
    }

    fn encode_without_signatures(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&RULE_BUNDLE_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        write_text(&mut out, &self.schema_text);
        write_text(&mut out, &self.rule_text);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, BundleError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != RULE_BUNDLE_MAGIC {
            return Err(BundleError::BadMagic);
        }
        let format = r.u32()?;
        if format != FORMAT_VERSION {
            return Err(BundleError::UnsupportedFormat(format));
        }
        let version = r.u64()?;
        let schema_text = read_text(&mut r)?;
        let rule_text = read_text(&mut r)?;
        let signatures = read_signatures(&mut r)?;
        r.finish()?;
        Ok(RuleBundle {
            version,
            schema_text,
            rule_text,
            signatures,
        })
    }

    /// The digest signatures commit to: everything except the signatures.
    pub fn signed_digest(&self) -> Digest {
        hash(&self.encode_without_signatures())
    }

    /// Signs the bundle, replacing any previous signature by the same key.
    pub fn sign_with(&mut self, store: &Keystore, handle: &KeyHandle) -> Result<(), CryptoError> {
        let digest = self.signed_digest();
        let signature = store.sign(handle, &digest)?;
        self.signatures.retain(|e| &e.signer != handle.fingerprint());
        self.signatures.push(SignatureEntry {
            signer: *handle.fingerprint(),
            signature,
        });
        Ok(())
    }

    /// M-of-N verification over the signed digest.
    pub fn verify_threshold(&self, m: u32, authorized: &[PublicKeyId]) -> bool {
        crate::crypto::threshold_verify(m, authorized, &self.signed_digest(), &self.signatures)
    }

    /// Parses and validates the carried schema and rules. Also insists the
    /// stored texts are in canonical form: a structurally valid bundle with
    /// non-canonical bytes was not produced by [`RuleBundle::build`].
    pub fn compile(&self) -> Result<(Schema, RuleSet), CompileError> {
        let schema = Schema::parse(&self.schema_text)?;
        if schema.to_canonical_text() != self.schema_text {
            return Err(CompileError::NotCanonical("schema"));
        }
        if dsl::canonicalize(&self.rule_text) != self.rule_text {
            return Err(CompileError::NotCanonical("rule"));
        }
        let rules = dsl::parse(&self.rule_text, &schema)?;
        Ok((schema, rules))
    }
}

// ---------------------------------------------------------------------------
// module manifest

/// Attestation for an enforcement module image: its name, version, and the
/// digest of its bytes, signed by the governance keys. The loader refuses
/// to hand actuator access to a module whose measured digest differs from
/// an accepted manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleManifest {
    pub module_name: String,
    pub module_version: u64,
    pub image_digest: Digest,
    pub signatures: Vec<SignatureEntry>,
}

impl ModuleManifest {
    pub fn new(module_name: &str, module_version: u64, image_digest: Digest) -> Self {
        ModuleManifest {
            module_name: module_name.to_string(),
            module_version,
            image_digest,
            signatures: Vec::new(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.encode_without_signatures();
        write_signatures(&mut out, &self.signatures);
        out
    }

    fn encode_without_signatures(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MODULE_MANIFEST_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.module_name.len() as u16).to_le_bytes());
        out.extend_from_slice(self.module_name.as_bytes());
        out.extend_from_slice(&self.module_version.to_le_bytes());
        out.extend_from_slice(self.image_digest.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, BundleError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MODULE_MANIFEST_MAGIC {
            return Err(BundleError::BadMagic);
        }
        let format = r.u32()?;
        if format != FORMAT_VERSION {
            return Err(BundleError::UnsupportedFormat(format));
        }
        let name_len = r.u16()?;
        let name_bytes = r.take(name_len as usize)?;
        let module_name =
            String::from_utf8(name_bytes.to_vec()).map_err(|_| BundleError::Encoding)?;
        let module_version = r.u64()?;
        let image_digest = Digest(r.take(DIGEST_LEN)?.try_into().expect("len 32"));
        let signatures = read_signatures(&mut r)?;
        r.finish()?;
        Ok(ModuleManifest {
            module_name,
            module_version,
            image_digest,
            signatures,
        })
    }

    pub fn signed_digest(&self) -> Digest {
        hash(&self.encode_without_signatures())
    }

    pub fn sign_with(&mut self, store: &Keystore, handle: &KeyHandle) -> Result<(), CryptoError> {
        let digest = self.signed_digest();
        let signature = store.sign(handle, &digest)?;
        self.signatures.retain(|e| &e.signer != handle.fingerprint());
        self.signatures.push(SignatureEntry {
            signer: *handle.fingerprint(),
            signature,
        });
        Ok(())
    }

    pub fn verify_threshold(&self, m: u32, authorized: &[PublicKeyId]) -> bool {
        crate::crypto::threshold_verify(m, authorized, &self.signed_digest(), &self.signatures)
    }
}
