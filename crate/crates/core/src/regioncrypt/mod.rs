//! Region encryption: ownership resolution, per-object AES-256-CBC with
//! encrypt-then-MAC, and progressive restoration.

mod ownership;

use aes::Aes256;
use cbc::cipher::block_padding::Pkcs7;
use cbc::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use sha2::Sha256;
use zeroize::Zeroizing;

pub use ownership::{claim_order, rasterize_region, resolve_ownership, PixelOwnership};

use crate::error::{Error, Result};
use crate::image::PixelBuffer;
use crate::keycore::{GroupKeyChain, SymmetricKey};
use crate::metadata::ImageMetadata;

pub const IV_LEN: usize = 16;
pub const MAC_LEN: usize = 32;
const BLOCK: usize = 16;
const MAC_KEY_INFO: &[u8] = b"pso-shield/region-mac/v1";

type Enc = cbc::Encryptor<Aes256>;
type Dec = cbc::Decryptor<Aes256>;
type HmacSha256 = Hmac<Sha256>;

/// Ciphertext of one object's owned pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedPso {
    pub pso_id: u32,
    pub group: u16,
    pub iv: [u8; IV_LEN],
    pub ciphertext: Vec<u8>,
    pub mac: [u8; MAC_LEN],
    pub pixel_count: u64,
}

impl EncryptedPso {
    /// Placeholder for an object whose pixels all belong to more sensitive objects.
    pub fn empty(pso_id: u32, group: u16) -> Self {
        Self {
            pso_id,
            group,
            iv: [0; IV_LEN],
            ciphertext: Vec::new(),
            mac: [0; MAC_LEN],
            pixel_count: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_count == 0
    }
}

/// CBC ciphertext length for `plaintext_len` bytes under PKCS#7.
pub fn padded_len(plaintext_len: usize) -> usize {
    (plaintext_len / BLOCK + 1) * BLOCK
}

fn mac_key(key: &SymmetricKey) -> Zeroizing<[u8; 32]> {
    let mut out = Zeroizing::new([0u8; 32]);
    Hkdf::<Sha256>::new(None, key.as_bytes())
        .expand(MAC_KEY_INFO, out.as_mut())
        .expect("32 bytes is a valid HKDF length");
    out
}

fn blob_mac(key: &SymmetricKey, pso_id: u32, group: u16, pixel_count: u64, iv: &[u8], ct: &[u8]) -> HmacSha256 {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(mac_key(key).as_ref()).expect("HMAC takes any key length");
    mac.update(&pso_id.to_le_bytes());
    mac.update(&group.to_le_bytes());
    mac.update(&pixel_count.to_le_bytes());
    mac.update(iv);
    mac.update(ct);
    mac
}

/// Encrypts the channel bytes of `pixels` (row-major) under `key`.
///
/// Returns the blob and the bytes to publish in place of those pixels: the
/// leading `pixel_count * channels` ciphertext bytes.
pub fn encrypt_pso(
    key: &SymmetricKey,
    pso_id: u32,
    group: u16,
    pixels: &[u32],
    image: &PixelBuffer,
) -> Result<(EncryptedPso, Vec<u8>)> {
    encrypt_pso_with(key, pso_id, group, pixels, image, &mut OsRng)
}

pub fn encrypt_pso_with<R: RngCore + CryptoRng>(
    key: &SymmetricKey,
    pso_id: u32,
    group: u16,
    pixels: &[u32],
    image: &PixelBuffer,
    rng: &mut R,
) -> Result<(EncryptedPso, Vec<u8>)> {
    if pixels.is_empty() {
        return Err(Error::validation(format!("PSO {pso_id} owns no pixels")));
    }
    if let Some(&p) = pixels.iter().find(|&&p| p as usize >= image.pixel_count()) {
        return Err(Error::validation(format!("PSO {pso_id}: pixel {p} outside the image")));
    }
    let channels = image.channels() as usize;
    let mut plaintext = Zeroizing::new(Vec::with_capacity(pixels.len() * channels));
    for &p in pixels {
        plaintext.extend_from_slice(image.pixel(p));
    }
    let mut iv = [0u8; IV_LEN];
    rng.try_fill_bytes(&mut iv)
        .map_err(|e| Error::Randomness(e.to_string()))?;
    let ciphertext = Enc::new(key.as_bytes().into(), &iv.into()).encrypt_padded_vec_mut::<Pkcs7>(&plaintext);
    let pixel_count = pixels.len() as u64;
    let mac = blob_mac(key, pso_id, group, pixel_count, &iv, &ciphertext)
        .finalize()
        .into_bytes()
        .into();
    let scrambled = ciphertext[..plaintext.len()].to_vec();
    Ok((
        EncryptedPso {
            pso_id,
            group,
            iv,
            ciphertext,
            mac,
            pixel_count,
        },
        scrambled,
    ))
}

/// Verifies and decrypts `blob`, writing the original bytes back into `pixels`.
pub fn decrypt_pso(key: &SymmetricKey, blob: &EncryptedPso, pixels: &[u32], image: &mut PixelBuffer) -> Result<()> {
    let id = blob.pso_id;
    if blob.pixel_count != pixels.len() as u64 {
        return Err(Error::integrity(format!(
            "PSO {id}: blob covers {} pixels but the object owns {}",
            blob.pixel_count,
            pixels.len()
        )));
    }
    if blob.is_empty() {
        return Ok(());
    }
    blob_mac(key, id, blob.group, blob.pixel_count, &blob.iv, &blob.ciphertext)
        .verify_slice(&blob.mac)
        .map_err(|_| Error::integrity(format!("PSO {id}: authentication failed")))?;
    let plaintext = Zeroizing::new(
        Dec::new(key.as_bytes().into(), &blob.iv.into())
            .decrypt_padded_vec_mut::<Pkcs7>(&blob.ciphertext)
            .map_err(|_| Error::integrity(format!("PSO {id}: bad padding")))?,
    );
    let channels = image.channels() as usize;
    if plaintext.len() != pixels.len() * channels {
        return Err(Error::integrity(format!(
            "PSO {id}: plaintext length does not match its pixels"
        )));
    }
    for (&p, bytes) in pixels.iter().zip(plaintext.chunks_exact(channels)) {
        image.pixel_mut(p).copy_from_slice(bytes);
    }
    Ok(())
}

/// A published image: ciphertext noise over every owned pixel plus the blobs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectedImage {
    pub scrambled: PixelBuffer,
    /// One per annotation, sorted by `pso_id`.
    pub blobs: Vec<EncryptedPso>,
    pub metadata: ImageMetadata,
    pub ownership: PixelOwnership,
}

impl ProtectedImage {
    /// Recomputes ownership from metadata and checks the blobs agree with it.
    pub fn assemble(scrambled: PixelBuffer, blobs: Vec<EncryptedPso>, metadata: ImageMetadata) -> Result<Self> {
        metadata.validate()?;
        if (scrambled.width(), scrambled.height(), scrambled.channels())
            != (metadata.width, metadata.height, metadata.channels)
        {
            return Err(Error::integrity("image dimensions disagree with metadata"));
        }
        if blobs.len() != metadata.annotations.len() {
            return Err(Error::integrity(format!(
                "{} blobs for {} annotations",
                blobs.len(),
                metadata.annotations.len()
            )));
        }
        let ownership = resolve_ownership(&metadata.annotations, metadata.width, metadata.height)?;
        let channels = metadata.channels as usize;
        for (blob, a) in blobs.iter().zip(&metadata.annotations) {
            let owned = ownership.pixels(a.id).len() as u64;
            let ok = blob.pso_id == a.id
                && blob.group == a.group
                && blob.pixel_count == owned
                && if owned == 0 {
                    blob.ciphertext.is_empty()
                } else {
                    blob.ciphertext.len() == padded_len(owned as usize * channels)
                };
            if !ok {
                return Err(Error::integrity(format!(
                    "blob for PSO {} disagrees with metadata",
                    a.id
                )));
            }
        }
        Ok(Self {
            scrambled,
            blobs,
            metadata,
            ownership,
        })
    }

    pub fn encrypted_bytes(&self) -> u64 {
        self.blobs.iter().map(|b| b.ciphertext.len() as u64).sum()
    }
}

/// Encrypts every annotated region of `image`.
///
/// `chain` must reach the highest group used by the metadata's table; each
/// object is encrypted under its own group's base key.
pub fn protect_image(image: &PixelBuffer, meta: &ImageMetadata, chain: &GroupKeyChain) -> Result<ProtectedImage> {
    protect_image_with(image, meta, chain, &mut OsRng)
}

pub fn protect_image_with<R: RngCore + CryptoRng>(
    image: &PixelBuffer,
    meta: &ImageMetadata,
    chain: &GroupKeyChain,
    rng: &mut R,
) -> Result<ProtectedImage> {
    meta.validate()?;
    if (image.width(), image.height(), image.channels()) != (meta.width, meta.height, meta.channels) {
        return Err(Error::validation(format!(
            "image is {}x{}x{} but metadata describes {}x{}x{}",
            image.width(),
            image.height(),
            image.channels(),
            meta.width,
            meta.height,
            meta.channels
        )));
    }
    if chain.group() < meta.group_count() {
        return Err(Error::validation(format!(
            "key chain reaches group {} but the table has {} groups",
            chain.group(),
            meta.group_count()
        )));
    }
    let ownership = resolve_ownership(&meta.annotations, meta.width, meta.height)?;
    let mut scrambled = image.clone();
    let channels = image.channels() as usize;
    let mut blobs = Vec::with_capacity(meta.annotations.len());
    for a in &meta.annotations {
        let pixels = ownership.pixels(a.id);
        if pixels.is_empty() {
            blobs.push(EncryptedPso::empty(a.id, a.group));
            continue;
        }
        let key = chain.segment(a.group)?;
        let (blob, noise) = encrypt_pso_with(&key, a.id, a.group, pixels, image, rng)?;
        for (&p, bytes) in pixels.iter().zip(noise.chunks_exact(channels)) {
            scrambled.pixel_mut(p).copy_from_slice(bytes);
        }
        blobs.push(blob);
    }
    Ok(ProtectedImage {
        scrambled,
        blobs,
        metadata: meta.clone(),
        ownership,
    })
}

/// Result of restoring what a key allows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlockedImage {
    pub image: PixelBuffer,
    /// Highest group opened; 0 when no key was supplied.
    pub max_group: u16,
    /// Ids of objects whose pixels were restored.
    pub restored: Vec<u32>,
}

/// Decrypts every object whose group is at most the chain's group.
pub fn unlock_image(protected: &ProtectedImage, chain: Option<&GroupKeyChain>) -> Result<UnlockedImage> {
    let mut image = protected.scrambled.clone();
    let mut restored = Vec::new();
    let Some(chain) = chain else {
        return Ok(UnlockedImage {
            image,
            max_group: 0,
            restored,
        });
    };
    for blob in protected.blobs.iter().filter(|b| b.group <= chain.group()) {
        let pixels = protected.ownership.pixels(blob.pso_id);
        let key = chain.segment(blob.group)?;
        decrypt_pso(&key, blob, pixels, &mut image)?;
        if !blob.is_empty() {
            restored.push(blob.pso_id);
        }
    }
    Ok(UnlockedImage {
        image,
        max_group: chain.group(),
        restored,
    })
}
