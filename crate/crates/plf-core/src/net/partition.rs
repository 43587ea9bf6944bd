//! Region partition of an assembled system.
//!
//! Every bus belongs to exactly one region (the case file's `regions` map).
//! A region owns the balance rows of its buses and the state entries of its
//! buses; because rows and states follow the same class-block layout, the two
//! index sets coincide numerically, but they are kept separate because they
//! answer different questions (which equations an agent can assemble vs.
//! which results it is entitled to keep).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{BusClass, DlpfSystem, Network};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionPartition {
    /// Number of regions H.
    pub h: usize,
    /// Bus ids per region, ascending.
    pub buses: Vec<Vec<u32>>,
    /// Row indices per region, ascending. `row_blocks[i].len()` is N_i.
    pub row_blocks: Vec<Vec<usize>>,
    /// State indices per region (the set Θ_i), ascending.
    pub theta_sets: Vec<Vec<usize>>,
}

impl RegionPartition {
    pub fn n_i(&self, region: usize) -> usize {
        self.row_blocks[region].len()
    }
}

/// Split the assembled system according to the network's region map.
///
/// Requires every region to contain at least one deterministic PQ bus (the
/// protocol anchors a private injection there).
pub fn partition_system(net: &Network, sys: &DlpfSystem) -> Result<RegionPartition> {
    let h = net.h;
    let mut buses = vec![Vec::new(); h];
    let mut has_pq = vec![false; h];
    for bus in &net.buses {
        let r = net.region_of[&bus.id];
        buses[r].push(bus.id);
        if bus.class == BusClass::Pq {
            has_pq[r] = true;
        }
    }
    if let Some(region) = has_pq.iter().position(|ok| !ok) {
        return Err(Error::RegionWithoutPq(region + 1));
    }

    let mut row_blocks = vec![Vec::new(); h];
    for (r, rv) in sys.row_order.iter().enumerate() {
        row_blocks[net.region_of[&rv.bus]].push(r);
    }
    let mut theta_sets = vec![Vec::new(); h];
    for (c, sv) in sys.state_order.iter().enumerate() {
        theta_sets[net.region_of[&sv.bus]].push(c);
    }

    for region in 0..h {
        debug_assert!(row_blocks[region].windows(2).all(|w| w[0] < w[1]));
        if row_blocks[region].len() != theta_sets[region].len() {
            // Cannot happen with the fixed row/state layout; guard anyway.
            return Err(Error::invalid(
                "partition",
                format!("region {} rows and states disagree", region + 1),
            ));
        }
    }

    Ok(RegionPartition {
        h,
        buses,
        row_blocks,
        theta_sets,
    })
}
