use std::collections::BTreeSet;

use crosshash_core::psi::{client_blind, client_match, hash_to_group, random_nonzero_scalar, server_respond};
use crosshash_core::wire::{QueryRequest, QueryResponse};
use crosshash_core::{BucketId, IdBytes};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[test]
fn matches_plain_intersection() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for trial in 0..120 {
        let bucket_len = rng.gen_range(0..=1024);
        let bucket: BTreeSet<IdBytes> = (0..bucket_len).map(|_| rng.gen()).collect();
        let members: Vec<IdBytes> = bucket.iter().copied().collect();
        let n_query = rng.gen_range(0..=8);
        let mut query: Vec<IdBytes> = Vec::new();
        for _ in 0..n_query {
            if !members.is_empty() && rng.gen_bool(0.5) {
                query.push(*members.choose(&mut rng).unwrap());
            } else {
                query.push(rng.gen());
            }
        }
        query.sort();
        query.dedup();

        let want: BTreeSet<IdBytes> = query.iter().filter(|q| members.contains(q)).copied().collect();
        let (states, q) = client_blind(&query, 8, &mut rng).unwrap();
        let resp = server_respond(&bucket, &q, 1024, &mut rng).unwrap();
        assert_eq!(client_match(&states, &resp).unwrap(), want, "trial {trial}");
    }
}

#[test]
fn blinding_commutes() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..50 {
        let p = hash_to_group(&rng.gen());
        let a = random_nonzero_scalar(&mut rng);
        let b = random_nonzero_scalar(&mut rng);
        let round_trip = p.point() * a * b * a.invert();
        assert_eq!(round_trip, p.point() * b);
    }
}

#[test]
fn blinding_is_fresh_per_query() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let cci: IdBytes = rng.gen();
    let (_, a) = client_blind(&[cci], 1, &mut rng).unwrap();
    let (_, b) = client_blind(&[cci], 1, &mut rng).unwrap();
    assert_ne!(a.blinded_points[0], b.blinded_points[0]);
    assert_ne!(a.blinded_points[0], hash_to_group(&cci));
}

#[test]
fn shapes_depend_only_on_padding() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    for _ in 0..50 {
        let query_pad = rng.gen_range(1..=16);
        let response_pad = rng.gen_range(1..=256);
        let bits = rng.gen_range(4..=64u8);
        let mut lengths = BTreeSet::new();
        for _ in 0..8 {
            let n_query = rng.gen_range(0..=query_pad);
            let ccis: Vec<IdBytes> = (0..n_query).map(|_| rng.gen()).collect();
            let bucket: Vec<IdBytes> = (0..rng.gen_range(0..=response_pad)).map(|_| rng.gen()).collect();
            let id = BucketId::new(rng.gen::<u64>() >> (64 - bits as u32), bits).unwrap();
            let (_, q) = client_blind(&ccis, query_pad, &mut rng).unwrap();
            let resp = server_respond(&bucket, &q, response_pad, &mut rng).unwrap();
            let req = QueryRequest { bucket: id, query: q }.encode().unwrap();
            let reply = QueryResponse { bucket: id, response: resp }.encode().unwrap();
            lengths.insert((req.len(), reply.len()));
        }
        assert_eq!(lengths.len(), 1);
        assert_eq!(
            lengths.into_iter().next().unwrap(),
            (QueryRequest::encoded_len(query_pad), QueryResponse::encoded_len(query_pad, response_pad))
        );
    }
}
