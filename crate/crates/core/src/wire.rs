//! Binary bodies for the exposure service endpoints.
//!
//! ```text
//! POST /v1/diagnosis   u8 version || u8 count || count * (u32 BE day || 16-byte tek)
//!   -> u32 BE inserted count
//! POST /v1/query       u8 version || u8 prefix_bits || u64 BE prefix_value
//!                      || u16 BE n || n * 32-byte element
//!   -> u8 version || u8 prefix_bits || u64 BE prefix_value
//!      || u16 BE n || n * element (double blinded, query order)
//!      || u16 BE m || m * element (server set)
//! GET  /v1/export      concatenated 16-byte CCIs
//! ```

use crate::error::{Error, Result};
use crate::keys::{BucketId, IdBytes, TemporaryExposureKey, ID_LEN};
use crate::psi::{GroupElement, PsiQuery, PsiResponse, ELEMENT_LEN};

pub const WIRE_VERSION: u8 = 1;
pub const DIAGNOSIS_ENTRY_LEN: usize = 4 + ID_LEN;
const QUERY_HEADER_LEN: usize = 1 + 1 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagnosisUpload {
    pub params_version: u8,
    pub entries: Vec<TemporaryExposureKey>,
}

impl DiagnosisUpload {
    pub fn new(entries: Vec<TemporaryExposureKey>) -> Self {
        DiagnosisUpload { params_version: WIRE_VERSION, entries }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let count = u8::try_from(self.entries.len())
            .map_err(|_| Error::Capacity { what: "diagnosis upload", len: self.entries.len(), limit: 255 })?;
        let mut out = Vec::with_capacity(2 + self.entries.len() * DIAGNOSIS_ENTRY_LEN);
        out.push(self.params_version);
        out.push(count);
        for tek in &self.entries {
            out.extend_from_slice(&tek.day().to_be_bytes());
            out.extend_from_slice(tek.bytes());
        }
        Ok(out)
    }

    pub fn decode(body: &[u8]) -> Result<Self> {
        let mut r = Reader::new(body);
        let params_version = r.u8()?;
        let count = r.u8()? as usize;
        if r.remaining() != count * DIAGNOSIS_ENTRY_LEN {
            return Err(Error::Validation(format!(
                "diagnosis body holds {} bytes of entries, {count} entries need {}",
                r.remaining(),
                count * DIAGNOSIS_ENTRY_LEN
            )));
        }
        let entries = (0..count)
            .map(|_| {
                let day = r.u32()?;
                Ok(TemporaryExposureKey::from_bytes(r.id()?, day))
            })
            .collect::<Result<_>>()?;
        Ok(DiagnosisUpload { params_version, entries })
    }
}

pub fn encode_inserted(count: u32) -> [u8; 4] {
    count.to_be_bytes()
}

pub fn decode_inserted(body: &[u8]) -> Result<u32> {
    let raw: [u8; 4] = body.try_into().map_err(|_| Error::Wire(format!("inserted count is {} bytes", body.len())))?;
    Ok(u32::from_be_bytes(raw))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRequest {
    pub bucket: BucketId,
    pub query: PsiQuery,
}

impl QueryRequest {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(Self::encoded_len(self.query.blinded_points.len()));
        put_bucket(&mut out, &self.bucket);
        put_points(&mut out, &self.query.blinded_points)?;
        Ok(out)
    }

    pub fn decode(body: &[u8]) -> Result<Self> {
        let mut r = Reader::new(body);
        let bucket = r.bucket()?;
        let blinded_points = r.points()?;
        r.finish()?;
        Ok(QueryRequest { bucket, query: PsiQuery { blinded_points } })
    }

    pub fn encoded_len(query_pad: usize) -> usize {
        QUERY_HEADER_LEN + 2 + query_pad * ELEMENT_LEN
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryResponse {
    pub bucket: BucketId,
    pub response: PsiResponse,
}

impl QueryResponse {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let r = &self.response;
        let mut out = Vec::with_capacity(Self::encoded_len(r.double_blinded_points.len(), r.server_set_points.len()));
        put_bucket(&mut out, &self.bucket);
        put_points(&mut out, &r.double_blinded_points)?;
        put_points(&mut out, &r.server_set_points)?;
        Ok(out)
    }

    pub fn decode(body: &[u8]) -> Result<Self> {
        let mut r = Reader::new(body);
        let bucket = r.bucket()?;
        let double_blinded_points = r.points()?;
        let server_set_points = r.points()?;
        r.finish()?;
        Ok(QueryResponse { bucket, response: PsiResponse { double_blinded_points, server_set_points } })
    }

    pub fn encoded_len(query_pad: usize, response_pad: usize) -> usize {
        QUERY_HEADER_LEN + 4 + (query_pad + response_pad) * ELEMENT_LEN
    }
}

pub fn encode_export<'a>(ccis: impl IntoIterator<Item = &'a IdBytes>) -> Vec<u8> {
    ccis.into_iter().flat_map(|c| c.iter().copied()).collect()
}

pub fn decode_export(body: &[u8]) -> Result<Vec<IdBytes>> {
    if body.len() % ID_LEN != 0 {
        return Err(Error::Wire(format!("export stream of {} bytes is not a whole number of identifiers", body.len())));
    }
    Ok(body.chunks_exact(ID_LEN).map(|c| c.try_into().expect("chunk")).collect())
}

fn put_bucket(out: &mut Vec<u8>, bucket: &BucketId) {
    out.push(WIRE_VERSION);
    out.push(bucket.prefix_bits());
    out.extend_from_slice(&bucket.prefix_value().to_be_bytes());
}

fn put_points(out: &mut Vec<u8>, points: &[GroupElement]) -> Result<()> {
    let n = u16::try_from(points.len())
        .map_err(|_| Error::Capacity { what: "point list", len: points.len(), limit: u16::MAX as usize })?;
    out.extend_from_slice(&n.to_be_bytes());
    for p in points {
        out.extend_from_slice(&p.to_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    fn remaining(&self) -> usize {
        self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Wire(format!("truncated: wanted {n} bytes, {} left", self.buf.len())));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8")))
    }

    fn id(&mut self) -> Result<IdBytes> {
        Ok(self.take(ID_LEN)?.try_into().expect("16"))
    }

    fn bucket(&mut self) -> Result<BucketId> {
        let version = self.u8()?;
        if version != WIRE_VERSION {
            return Err(Error::Protocol(format!("unsupported wire version {version}")));
        }
        let bits = self.u8()?;
        let value = self.u64()?;
        BucketId::new(value, bits).map_err(|e| Error::Protocol(e.to_string()))
    }

    fn points(&mut self) -> Result<Vec<GroupElement>> {
        let n = self.u16()? as usize;
        let raw = self.take(n * ELEMENT_LEN)?;
        raw.chunks_exact(ELEMENT_LEN).map(GroupElement::from_bytes).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Wire(format!("{} trailing bytes", self.buf.len())))
        }
    }
}
