//! Hashing, signing, and threshold verification.
//!
//! Content addressing uses SHA-256 throughout. Signing is Ed25519 behind a
//! file-backed keystore modeled on a sealed signing element: the store
//! exposes exactly three operations (generate a key, export the public
//! half, sign a digest) and no API for reading private key material back
//! out. Keys are addressed by fingerprint, the SHA-256 of the public key
//! bytes.
//!
//! [`threshold_verify`] implements M-of-N acceptance. It is deliberately
//! strict: every presented signature must come from a distinct authorized
//! key and must verify. One bad signature poisons the set even when enough
//! good ones are present, and `m = 0` never accepts anything.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ed25519_dalek::{Signer as _, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Signature scheme identifier carried next to every signature.
pub const SCHEME_ED25519: u8 = 0x01;

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("keystore io: {0}")]
    Io(#[from] std::io::Error),
    #[error("no key with fingerprint {0}")]
    UnknownKey(String),
    #[error("keystore entry corrupt: {0}")]
    Corrupt(String),
}

// ---------------------------------------------------------------------------
// digests

/// A SHA-256 digest. Renders as lowercase hex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|_| CryptoError::Corrupt("bad hex digest".into()))?;
        let arr: [u8; DIGEST_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::Corrupt("digest must be 32 bytes".into()))?;
        Ok(Digest(arr))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// SHA-256 of `bytes`.
pub fn hash(bytes: &[u8]) -> Digest {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    Digest(hasher.finalize().into())
}

// ---------------------------------------------------------------------------
// public keys and signatures

/// A public key plus its fingerprint. The constructor computes the
/// fingerprint, so the two can never disagree. Ordering and equality use
/// the fingerprint alone.
#[derive(Debug, Clone)]
pub struct PublicKeyId {
    public_key: [u8; PUBLIC_KEY_LEN],
    fingerprint: Digest,
}

impl PublicKeyId {
    pub fn new(public_key: [u8; PUBLIC_KEY_LEN]) -> Self {
        let fingerprint = hash(&public_key);
        PublicKeyId {
            public_key,
            fingerprint,
        }
    }

    pub fn public_key(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.public_key
    }

    pub fn fingerprint(&self) -> &Digest {
        &self.fingerprint
    }
}

impl PartialEq for PublicKeyId {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint == other.fingerprint
    }
}

impl Eq for PublicKeyId {}

impl PartialOrd for PublicKeyId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PublicKeyId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.fingerprint.cmp(&other.fingerprint)
    }
}

/// A detached signature over a digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub scheme: u8,
    pub bytes: Vec<u8>,
}

/// A signature as it travels inside an artifact: the signer is named by
/// fingerprint only; verification resolves it against an authorized set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureEntry {
    pub signer: Digest,
    pub signature: Signature,
}

/// Verifies one Ed25519 signature over a digest. Any malformation (wrong
/// scheme, wrong length, invalid key bytes) verifies as false rather than
/// erroring: verification is a predicate, not a parser.
pub fn verify(public_key: &PublicKeyId, digest: &Digest, signature: &Signature) -> bool {
    if signature.scheme != SCHEME_ED25519 {
        return false;
    }
    let Ok(sig_bytes) = <[u8; SIGNATURE_LEN]>::try_from(signature.bytes.as_slice()) else {
        return false;
    };
    let Ok(key) = VerifyingKey::from_bytes(public_key.public_key()) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig_bytes);
    key.verify_strict(digest.as_bytes(), &sig).is_ok()
}

/// M-of-N acceptance over a digest.
///
/// Accepts only when all of the following hold:
/// - `m >= 1` and at least `m` signature entries are presented;
/// - every entry names a distinct signer;
/// - every named signer is in `authorized`;
/// - every signature verifies over `digest`.
pub fn threshold_verify(
    m: u32,
    authorized: &[PublicKeyId],
    digest: &Digest,
    signatures: &[SignatureEntry],
) -> bool {
    if m == 0 || (signatures.len() as u64) < m as u64 {
        return false;
    }
    let mut seen: Vec<&Digest> = Vec::with_capacity(signatures.len());
    for entry in signatures {
        if seen.contains(&&entry.signer) {
            return false;
        }
        seen.push(&entry.signer);
        let Some(key) = authorized.iter().find(|k| k.fingerprint() == &entry.signer) else {
            return false;
        };
        if !verify(key, digest, &entry.signature) {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// keystore

/// Opaque reference to a private key held by a [`Keystore`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct KeyHandle {
    fingerprint: Digest,
}

impl KeyHandle {
    pub fn fingerprint(&self) -> &Digest {
        &self.fingerprint
    }
}

impl fmt::Display for KeyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.fingerprint)
    }
}

/// Directory-backed key storage emulating a sealed signing element.
///
/// Layout: one `<fingerprint>.key` file per key holding the 32-byte private
/// seed (mode 0600) next to a `<fingerprint>.pub` file holding the public
/// key. Private seeds never cross this module's API boundary; consumers get
/// handles, public keys, and signatures.
pub struct Keystore {
    dir: PathBuf,
}

impl Keystore {
    /// Opens (creating if needed) a keystore directory.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CryptoError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(&dir, fs::Permissions::from_mode(0o700))?;
        }
        Ok(Keystore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Generates a fresh key from the operating system's entropy source.
    pub fn keygen(&self) -> Result<KeyHandle, CryptoError> {
        let mut seed = [0u8; 32];
        rand::RngCore::fill_bytes(&mut rand::rngs::OsRng, &mut seed);
        self.install_seed(seed)
    }

    /// Generates a key from a caller-provided seed. For provisioning
    /// deterministic test and fixture keys; production keys come from
    /// [`Keystore::keygen`].
    pub fn keygen_with_seed(&self, seed: [u8; 32]) -> Result<KeyHandle, CryptoError> {
        self.install_seed(seed)
    }

    fn install_seed(&self, seed: [u8; 32]) -> Result<KeyHandle, CryptoError> {
        let signing = SigningKey::from_bytes(&seed);
        let public = PublicKeyId::new(signing.verifying_key().to_bytes());
        let fingerprint = *public.fingerprint();
        let key_path = self.key_path(&fingerprint);
        let mut options = fs::OpenOptions::new();
        options.write(true).create_new(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            options.mode(0o600);
        }
        match options.open(&key_path) {
            Ok(mut file) => {
                file.write_all(&seed)?;
                file.sync_all()?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                // Same seed, same key: generation is idempotent.
            }
            Err(e) => return Err(e.into()),
        }
        fs::write(self.pub_path(&fingerprint), public.public_key())?;
        Ok(KeyHandle { fingerprint })
    }

    /// Exports the public half of a stored key.
    pub fn public_key(&self, handle: &KeyHandle) -> Result<PublicKeyId, CryptoError> {
        let bytes = fs::read(self.pub_path(&handle.fingerprint))
            .map_err(|_| CryptoError::UnknownKey(handle.fingerprint.to_hex()))?;
        let arr: [u8; PUBLIC_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::Corrupt("public key must be 32 bytes".into()))?;
        let id = PublicKeyId::new(arr);
        if id.fingerprint() != &handle.fingerprint {
            return Err(CryptoError::Corrupt(
                "public key does not match its fingerprint".into(),
            ));
        }
        Ok(id)
    }

    /// Signs a digest with a stored key. The private seed is loaded, used,
    /// and dropped; it is never returned.
    pub fn sign(&self, handle: &KeyHandle, digest: &Digest) -> Result<Signature, CryptoError> {
        let bytes = fs::read(self.key_path(&handle.fingerprint))
            .map_err(|_| CryptoError::UnknownKey(handle.fingerprint.to_hex()))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::Corrupt("private seed must be 32 bytes".into()))?;
        let signing = SigningKey::from_bytes(&seed);
        let sig = signing.sign(digest.as_bytes());
        Ok(Signature {
            scheme: SCHEME_ED25519,
            bytes: sig.to_bytes().to_vec(),
        })
    }

    /// Handles for every key in the store, in fingerprint order.
    pub fn list(&self) -> Result<Vec<KeyHandle>, CryptoError> {
        let mut handles = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("key") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let Ok(fingerprint) = stem.parse::<Digest>() else {
                continue;
            };
            handles.push(KeyHandle { fingerprint });
        }
        handles.sort();
        Ok(handles)
    }

    /// Looks up a handle by fingerprint.
    pub fn handle(&self, fingerprint: &Digest) -> Result<KeyHandle, CryptoError> {
        let handle = KeyHandle {
            fingerprint: *fingerprint,
        };
        if !self.key_path(fingerprint).exists() {
            return Err(CryptoError::UnknownKey(fingerprint.to_hex()));
        }
        Ok(handle)
    }

    fn key_path(&self, fingerprint: &Digest) -> PathBuf {
        self.dir.join(format!("{fingerprint}.key"))
    }

    fn pub_path(&self, fingerprint: &Digest) -> PathBuf {
        self.dir.join(format!("{fingerprint}.pub"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // SHA-256 test vectors from the function's published description.
    #[test]
    fn sha256_known_vectors() {
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hash(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn digest_hex_round_trip() {
        let d = hash(b"round trip");
        let parsed: Digest = d.to_hex().parse().unwrap();
        assert_eq!(d, parsed);
        assert!("zz".parse::<Digest>().is_err());
        assert!("ab".parse::<Digest>().is_err());
    }

    fn temp_store() -> (tempfile::TempDir, Keystore) {
        let dir = tempfile::tempdir().unwrap();
        let store = Keystore::open(dir.path().join("keys")).unwrap();
        (dir, store)
    }

    #[test]
    fn sign_and_verify_round_trip() {
        let (_tmp, store) = temp_store();
        let handle = store.keygen().unwrap();
        let public = store.public_key(&handle).unwrap();
        let digest = hash(b"payload");
        let sig = store.sign(&handle, &digest).unwrap();
        assert_eq!(sig.scheme, SCHEME_ED25519);
        assert_eq!(sig.bytes.len(), SIGNATURE_LEN);
        assert!(verify(&public, &digest, &sig));
    }

    #[test]
    fn verify_rejects_any_tampering() {
        let (_tmp, store) = temp_store();
        let handle = store.keygen().unwrap();
        let public = store.public_key(&handle).unwrap();
        let digest = hash(b"payload");
        let sig = store.sign(&handle, &digest).unwrap();

        // Different digest.
        assert!(!verify(&public, &hash(b"other"), &sig));
        // Flipped signature bit.
        let mut bad = sig.clone();
        bad.bytes[0] ^= 0x01;
        assert!(!verify(&public, &digest, &bad));
        // Truncated signature.
        let mut short = sig.clone();
        short.bytes.pop();
        assert!(!verify(&public, &digest, &short));
        // Unknown scheme.
        let mut scheme = sig.clone();
        scheme.scheme = 0x7f;
        assert!(!verify(&public, &digest, &scheme));
        // Wrong key.
        let other = store.keygen().unwrap();
        let other_pub = store.public_key(&other).unwrap();
        assert!(!verify(&other_pub, &digest, &sig));
    }

    #[test]
    fn signing_is_deterministic() {
        let (_tmp, store) = temp_store();
        let handle = store.keygen_with_seed([7u8; 32]).unwrap();
        let digest = hash(b"stable");
        let s1 = store.sign(&handle, &digest).unwrap();
        let s2 = store.sign(&handle, &digest).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn seeded_keys_are_reproducible_across_stores() {
        let (_tmp1, store1) = temp_store();
        let (_tmp2, store2) = temp_store();
        let h1 = store1.keygen_with_seed([42u8; 32]).unwrap();
        let h2 = store2.keygen_with_seed([42u8; 32]).unwrap();
        assert_eq!(h1.fingerprint(), h2.fingerprint());
        assert_eq!(
            store1.public_key(&h1).unwrap(),
            store2.public_key(&h2).unwrap()
        );
    }

    #[test]
    fn keystore_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("keys");
        let fingerprint = {
            let store = Keystore::open(&path).unwrap();
            *store.keygen().unwrap().fingerprint()
        };
        let store = Keystore::open(&path).unwrap();
        let handles = store.list().unwrap();
        assert_eq!(handles.len(), 1);
        assert_eq!(handles[0].fingerprint(), &fingerprint);
        let handle = store.handle(&fingerprint).unwrap();
        let digest = hash(b"after reopen");
        let public = store.public_key(&handle).unwrap();
        assert!(verify(&public, &digest, &store.sign(&handle, &digest).unwrap()));
    }

    #[test]
    fn unknown_fingerprint_is_an_error() {
        let (_tmp, store) = temp_store();
        let missing = hash(b"not a key");
        assert!(matches!(
            store.handle(&missing),
            Err(CryptoError::UnknownKey(_))
        ));
    }

    #[cfg(unix)]
    #[test]
    fn key_files_are_owner_only() {
        use std::os::unix::fs::PermissionsExt;
        let (_tmp, store) = temp_store();
        let handle = store.keygen().unwrap();
        let path = store.dir().join(format!("{}.key", handle.fingerprint()));
        let mode = std::fs::metadata(path).unwrap().permissions().mode();
        assert_eq!(mode & 0o777, 0o600);
    }

    // -- threshold verification ----------------------------------------------

    fn three_signers() -> (tempfile::TempDir, Keystore, Vec<KeyHandle>, Vec<PublicKeyId>) {
        let (tmp, store) = temp_store();
        let handles: Vec<KeyHandle> = (0u8..3)
            .map(|i| store.keygen_with_seed([i + 1; 32]).unwrap())
            .collect();
        let publics = handles
            .iter()
            .map(|h| store.public_key(h).unwrap())
            .collect();
        (tmp, store, handles, publics)
    }

    fn entry(store: &Keystore, handle: &KeyHandle, digest: &Digest) -> SignatureEntry {
        SignatureEntry {
            signer: *handle.fingerprint(),
            signature: store.sign(handle, digest).unwrap(),
        }
    }

    #[test]
    fn threshold_two_of_three_accepts_enough_valid_signers() {
        let (_tmp, store, handles, publics) = three_signers();
        let digest = hash(b"bundle");
        let sigs: Vec<SignatureEntry> =
            handles.iter().map(|h| entry(&store, h, &digest)).collect();
        assert!(threshold_verify(2, &publics, &digest, &sigs[0..2]));
        assert!(threshold_verify(2, &publics, &digest, &sigs));
        assert!(threshold_verify(3, &publics, &digest, &sigs));
    }

    #[test]
    fn threshold_rejects_too_few() {
        let (_tmp, store, handles, publics) = three_signers();
        let digest = hash(b"bundle");
        let sigs = vec![entry(&store, &handles[0], &digest)];
        assert!(!threshold_verify(2, &publics, &digest, &sigs));
        assert!(!threshold_verify(2, &publics, &digest, &[]));
    }

    #[test]
    fn threshold_rejects_duplicate_signers() {
        let (_tmp, store, handles, publics) = three_signers();
        let digest = hash(b"bundle");
        let one = entry(&store, &handles[0], &digest);
        // The same valid signature twice is still one signer.
        assert!(!threshold_verify(2, &publics, &digest, &[one.clone(), one]));
    }

    #[test]
    fn threshold_rejects_unauthorized_signer() {
        let (_tmp, store, handles, publics) = three_signers();
        let digest = hash(b"bundle");
        let outsider = store.keygen_with_seed([99u8; 32]).unwrap();
        let sigs = vec![
            entry(&store, &handles[0], &digest),
            entry(&store, &outsider, &digest),
        ];
        assert!(!threshold_verify(2, &publics, &digest, &sigs));
    }

    #[test]
    fn threshold_rejects_one_bad_signature_even_with_enough_good_ones() {
        let (_tmp, store, handles, publics) = three_signers();
        let digest = hash(b"bundle");
        let mut sigs: Vec<SignatureEntry> =
            handles.iter().map(|h| entry(&store, h, &digest)).collect();
        sigs[2].signature.bytes[10] ^= 0xff;
        assert!(!threshold_verify(2, &publics, &digest, &sigs));
    }

    #[test]
    fn threshold_zero_never_accepts() {
        let (_tmp, store, handles, publics) = three_signers();
        let digest = hash(b"bundle");
        let sigs: Vec<SignatureEntry> =
            handles.iter().map(|h| entry(&store, h, &digest)).collect();
        assert!(!threshold_verify(0, &publics, &digest, &sigs));
        assert!(!threshold_verify(0, &publics, &digest, &[]));
    }
}
