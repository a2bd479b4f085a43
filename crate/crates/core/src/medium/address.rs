use std::fmt;

use serde::{Deserialize, Serialize};

use super::MediumError;

/// 16-bit network address. The coordinator always holds 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeAddress(pub u16);

impl NodeAddress {
    pub const COORDINATOR: NodeAddress = NodeAddress(0);

    pub fn is_coordinator(self) -> bool {
        self == Self::COORDINATOR
    }
}

impl fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:04X}", self.0)
    }
}

/// Hands out addresses sequentially, starting after the coordinator.
#[derive(Debug, Clone)]
pub struct AddressAllocator {
    next: u32,
}

impl Default for AddressAllocator {
    fn default() -> Self {
        Self { next: 1 }
    }
}

impl AddressAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn allocate(&mut self) -> Result<NodeAddress, MediumError> {
        if self.next > u16::MAX as u32 {
            return Err(MediumError::AddressSpaceExhausted);
        }
        let addr = NodeAddress(self.next as u16);
        self.next += 1;
        Ok(addr)
    }

    /// Number of addresses in use, coordinator included.
    pub fn allocated(&self) -> usize {
        self.next as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_allocation_is_one() {
        assert_eq!(AddressAllocator::new().allocate().unwrap(), NodeAddress(1));
    }

    #[test]
    fn exhausts_after_full_space() {
        let mut alloc = AddressAllocator::new();
        for _ in 0..65_535 {
            alloc.allocate().unwrap();
        }
        assert_eq!(alloc.allocated(), 65_536);
        assert!(matches!(alloc.allocate(), Err(MediumError::AddressSpaceExhausted)));
    }
}
