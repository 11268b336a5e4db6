//! Diffie-Hellman private set intersection over ristretto255.
//!
//! The client sends `a_i * H(q_i)` for each query CCI, padded with random
//! points to a fixed count. The server answers with `b * (a_i * H(q_i))` in
//! query order together with the shuffled set `{ b * H(c) : c in bucket }`,
//! padded to a fixed size. The client strips `a_i` and tests membership.
//! `b` is drawn per request.

use std::collections::{BTreeSet, HashSet};

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::Identity;
use rand::seq::SliceRandom;
use rand::{CryptoRng, RngCore};
use sha2::Sha512;

use crate::error::{Error, Result};
use crate::keys::IdBytes;

pub const ELEMENT_LEN: usize = 32;
const HASH_TO_GROUP_DOMAIN: &[u8] = b"crosshash-psi-v1:";

/// A non-identity ristretto255 element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupElement(RistrettoPoint);

impl GroupElement {
    pub fn to_bytes(&self) -> [u8; ELEMENT_LEN] {
        self.0.compress().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let compressed = CompressedRistretto::from_slice(bytes).map_err(|_| Error::InvalidGroupElement)?;
        let point = compressed.decompress().ok_or(Error::InvalidGroupElement)?;
        if point == RistrettoPoint::identity() {
            return Err(Error::InvalidGroupElement);
        }
        Ok(GroupElement(point))
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let p = RistrettoPoint::random(rng);
            if p != RistrettoPoint::identity() {
                return GroupElement(p);
            }
        }
    }

    pub fn point(&self) -> &RistrettoPoint {
        &self.0
    }

    fn scaled(&self, s: &Scalar) -> Self {
        GroupElement(s * self.0)
    }
}

pub fn hash_to_group(cci: &IdBytes) -> GroupElement {
    let mut input = Vec::with_capacity(HASH_TO_GROUP_DOMAIN.len() + cci.len());
    input.extend_from_slice(HASH_TO_GROUP_DOMAIN);
    input.extend_from_slice(cci);
    GroupElement(RistrettoPoint::hash_from_bytes::<Sha512>(&input))
}

pub fn random_nonzero_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Scalar {
    loop {
        let s = Scalar::random(rng);
        if s != Scalar::ZERO {
            return s;
        }
    }
}

/// Per-query secret the client keeps until the response arrives.
#[derive(Debug, Clone)]
pub struct ClientBlindState {
    position: usize,
    blinding_scalar: Scalar,
    query_cci: IdBytes,
}

impl ClientBlindState {
    pub fn position(&self) -> usize {
        self.position
    }

    pub fn query_cci(&self) -> &IdBytes {
        &self.query_cci
    }

    /// `a^-1 * point`.
    pub fn unblind(&self, point: &GroupElement) -> GroupElement {
        point.scaled(&self.blinding_scalar.invert())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsiQuery {
    pub blinded_points: Vec<GroupElement>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsiResponse {
    pub double_blinded_points: Vec<GroupElement>,
    pub server_set_points: Vec<GroupElement>,
}

pub fn client_blind<R: RngCore + CryptoRng>(
    ccis: &[IdBytes],
    pad_to: usize,
    rng: &mut R,
) -> Result<(Vec<ClientBlindState>, PsiQuery)> {
    if pad_to == 0 {
        return Err(Error::Validation("query pad must be at least 1".into()));
    }
    if ccis.len() > pad_to {
        return Err(Error::Capacity { what: "psi query", len: ccis.len(), limit: pad_to });
    }
    let mut positions: Vec<usize> = (0..pad_to).collect();
    positions.shuffle(rng);

    let mut points: Vec<Option<GroupElement>> = vec![None; pad_to];
    let mut states = Vec::with_capacity(ccis.len());
    for (cci, &position) in ccis.iter().zip(&positions) {
        let blinding_scalar = random_nonzero_scalar(rng);
        points[position] = Some(hash_to_group(cci).scaled(&blinding_scalar));
        states.push(ClientBlindState { position, blinding_scalar, query_cci: *cci });
    }
    let blinded_points = points.into_iter().map(|p| p.unwrap_or_else(|| GroupElement::random(rng))).collect();
    Ok((states, PsiQuery { blinded_points }))
}

pub fn server_respond<'a, R: RngCore + CryptoRng>(
    bucket: impl IntoIterator<Item = &'a IdBytes>,
    query: &PsiQuery,
    response_pad: usize,
    rng: &mut R,
) -> Result<PsiResponse> {
    let members: Vec<&IdBytes> = bucket.into_iter().collect();
    if members.len() > response_pad {
        return Err(Error::Capacity { what: "bucket", len: members.len(), limit: response_pad });
    }
    let server_scalar = random_nonzero_scalar(rng);
    let double_blinded_points = query.blinded_points.iter().map(|p| p.scaled(&server_scalar)).collect();

    let mut server_set_points: Vec<GroupElement> =
        members.iter().map(|c| hash_to_group(c).scaled(&server_scalar)).collect();
    server_set_points.extend((members.len()..response_pad).map(|_| GroupElement::random(rng)));
    server_set_points.shuffle(rng);

    Ok(PsiResponse { double_blinded_points, server_set_points })
}

pub fn client_match(states: &[ClientBlindState], response: &PsiResponse) -> Result<BTreeSet<IdBytes>> {
    let n = response.double_blinded_points.len();
    if states.len() > n {
        return Err(Error::Protocol(format!("{} query states but only {n} response points", states.len())));
    }
    if let Some(s) = states.iter().find(|s| s.position >= n) {
        return Err(Error::Protocol(format!("query position {} outside response of {n} points", s.position)));
    }
    let server_set: HashSet<[u8; ELEMENT_LEN]> = response.server_set_points.iter().map(GroupElement::to_bytes).collect();
    Ok(states
        .iter()
        .filter(|s| server_set.contains(&s.unblind(&response.double_blinded_points[s.position]).to_bytes()))
        .map(|s| s.query_cci)
        .collect())
}
