//! Shared fixtures for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsn_core::medium::{RoutingMode, Topology};
use wsn_core::{Field, Fixed, NodeAddress, Position, RoomId, SensorRecord};

/// Random walk in hundredths, steps of at most ±1.0.
pub fn smooth_series(n: usize, seed: u64) -> Vec<Fixed> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: i64 = 2000;
    (0..n)
        .map(|_| {
            v += rng.random_range(-100..=100);
            Fixed::from_hundredths(v)
        })
        .collect()
}

/// Connected topology of `n` nodes, each placed within range of an earlier one.
pub fn random_topology(n: usize, seed: u64, mode: RoutingMode) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range = 30.0;
    let origin = Position::new(0.0, 0.0).unwrap();
    let mut topo = Topology::new(origin, range, mode);
    let mut placed = vec![origin];
    while placed.len() < n {
        let anchor = placed[rng.random_range(0..placed.len())];
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let r = rng.random_range(0.0..range);
        let p = Position::new(anchor.x + r * angle.cos(), anchor.y + r * angle.sin()).unwrap();
        topo.join(p).unwrap();
        placed.push(p);
    }
    topo
}

pub fn records(n: usize, seed: u64) -> Vec<SensorRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let room = RoomId::ALL[rng.random_range(0..4)];
            let field: Field = room.fields()[rng.random_range(0..room.fields().len())];
            let (lo, hi) = field.unit().range();
            let value = field.unit().quantize(Fixed::from_hundredths(rng.random_range(lo.hundredths()..=hi.hundredths())));
            SensorRecord { timestamp: i as u64 * 10, room, field, value, src: NodeAddress(rng.random_range(1..6)) }
        })
        .collect()
}
