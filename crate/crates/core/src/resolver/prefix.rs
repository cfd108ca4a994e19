//! Longest-prefix matching and CIDR set arithmetic.

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use ipnet::{IpNet, Ipv4Net, Ipv6Net};

fn mask4(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - len as u32)
    }
}

fn mask6(len: u8) -> u128 {
    if len == 0 {
        0
    } else {
        u128::MAX << (128 - len as u32)
    }
}

/// Maps IP prefixes to values with longest-prefix lookup.
///
/// One hash map per prefix length; a lookup probes the populated lengths
/// from longest to shortest, so cost is bounded by the number of distinct
/// lengths (at most 33 for IPv4, 129 for IPv6).
#[derive(Debug, Clone)]
pub struct PrefixTable<V> {
    v4: Vec<HashMap<u32, V>>,
    v6: Vec<HashMap<u128, V>>,
    v4_lens: Vec<u8>,
    v6_lens: Vec<u8>,
    len: usize,
}

impl<V> Default for PrefixTable<V> {
    fn default() -> Self {
        Self {
            v4: (0..=32).map(|_| HashMap::new()).collect(),
            v6: (0..=128).map(|_| HashMap::new()).collect(),
            v4_lens: Vec::new(),
            v6_lens: Vec::new(),
            len: 0,
        }
    }
}

impl<V> PrefixTable<V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Inserts `net` (host bits are cleared), returning any value it replaced.
    pub fn insert(&mut self, net: IpNet, value: V) -> Option<V> {
        let net = net.trunc();
        let old = match net {
            IpNet::V4(n) => {
                let len = n.prefix_len();
                if !self.v4_lens.contains(&len) {
                    self.v4_lens.push(len);
                    self.v4_lens.sort_unstable_by(|a, b| b.cmp(a));
                }
                self.v4[len as usize].insert(u32::from(n.network()), value)
            }
            IpNet::V6(n) => {
                let len = n.prefix_len();
                if !self.v6_lens.contains(&len) {
                    self.v6_lens.push(len);
                    self.v6_lens.sort_unstable_by(|a, b| b.cmp(a));
                }
                self.v6[len as usize].insert(u128::from(n.network()), value)
            }
        };
        if old.is_none() {
            self.len += 1;
        }
        old
    }

    pub fn get(&self, net: &IpNet) -> Option<&V> {
        match net.trunc() {
            IpNet::V4(n) => self.v4[n.prefix_len() as usize].get(&u32::from(n.network())),
            IpNet::V6(n) => self.v6[n.prefix_len() as usize].get(&u128::from(n.network())),
        }
    }

    /// Every stored prefix containing `ip`, longest first.
    pub fn matches(&self, ip: IpAddr) -> Vec<(IpNet, &V)> {
        let mut out = Vec::new();
        match ip {
            IpAddr::V4(a) => {
                let x = u32::from(a);
                for &len in &self.v4_lens {
                    let key = x & mask4(len);
                    if let Some(v) = self.v4[len as usize].get(&key) {
                        let net = Ipv4Net::new(Ipv4Addr::from(key), len).expect("valid length");
                        out.push((IpNet::V4(net), v));
                    }
                }
            }
            IpAddr::V6(a) => {
                let x = u128::from(a);
                for &len in &self.v6_lens {
                    let key = x & mask6(len);
                    if let Some(v) = self.v6[len as usize].get(&key) {
                        let net = Ipv6Net::new(Ipv6Addr::from(key), len).expect("valid length");
                        out.push((IpNet::V6(net), v));
                    }
                }
            }
        }
        out
    }

    pub fn longest_match(&self, ip: IpAddr) -> Option<(IpNet, &V)> {
        match ip {
            IpAddr::V4(a) => {
                let x = u32::from(a);
                self.v4_lens.iter().find_map(|&len| {
                    let key = x & mask4(len);
                    self.v4[len as usize].get(&key).map(|v| {
                        let net = Ipv4Net::new(Ipv4Addr::from(key), len).expect("valid length");
                        (IpNet::V4(net), v)
                    })
                })
            }
            IpAddr::V6(a) => {
                let x = u128::from(a);
                self.v6_lens.iter().find_map(|&len| {
                    let key = x & mask6(len);
                    self.v6[len as usize].get(&key).map(|v| {
                        let net = Ipv6Net::new(Ipv6Addr::from(key), len).expect("valid length");
                        (IpNet::V6(net), v)
                    })
                })
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (IpNet, &V)> {
        let v4 = self.v4.iter().enumerate().flat_map(|(len, m)| {
            m.iter().map(move |(k, v)| {
                let net = Ipv4Net::new(Ipv4Addr::from(*k), len as u8).expect("valid length");
                (IpNet::V4(net), v)
            })
        });
        let v6 = self.v6.iter().enumerate().flat_map(|(len, m)| {
            m.iter().map(move |(k, v)| {
                let net = Ipv6Net::new(Ipv6Addr::from(*k), len as u8).expect("valid length");
                (IpNet::V6(net), v)
            })
        });
        v4.chain(v6)
    }
}

/// True when `inner` lies within `outer` (equal prefixes included).
pub fn covers(outer: &IpNet, inner: &IpNet) -> bool {
    outer.prefix_len() <= inner.prefix_len() && outer.contains(&inner.network())
}

/// `net` minus the union of `holes`, as a list of disjoint prefixes.
pub fn subtract(net: IpNet, holes: &[IpNet]) -> Vec<IpNet> {
    let net = net.trunc();
    let relevant: Vec<IpNet> = holes
        .iter()
        .map(|h| h.trunc())
        .filter(|h| covers(h, &net) || covers(&net, h))
        .collect();
    let mut out = Vec::new();
    subtract_into(net, &relevant, &mut out);
    out
}

fn subtract_into(net: IpNet, holes: &[IpNet], out: &mut Vec<IpNet>) {
    if holes.iter().any(|h| covers(h, &net)) {
        return;
    }
    let inside: Vec<IpNet> = holes.iter().copied().filter(|h| covers(&net, h)).collect();
    if inside.is_empty() {
        out.push(net);
        return;
    }
    let halves = net
        .subnets(net.prefix_len() + 1)
        .expect("a hole strictly inside implies a longer prefix exists");
    for half in halves {
        subtract_into(half, &inside, out);
    }
}
