//! Per-episode entanglement requests.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::topology::{NodeId, Topology};
use crate::{Error, Result};

pub type RequestId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestStatus {
    Pending,
    Resolved,
    FailedPermanent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub src: NodeId,
    pub dst: NodeId,
    pub status: RequestStatus,
}

impl Request {
    pub fn is_pending(&self) -> bool {
        self.status == RequestStatus::Pending
    }
}

/// The requests of one episode. Ids are dense in `[0, len)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSet {
    requests: Vec<Request>,
}

impl DemandSet {
    pub fn from_pairs(pairs: &[(NodeId, NodeId)]) -> Result<Self> {
        let requests = pairs
            .iter()
            .enumerate()
            .map(|(id, &(src, dst))| {
                if src == dst {
                    return Err(Error::Argument(format!("request {id} has src == dst")));
                }
                Ok(Request {
                    id,
                    src,
                    dst,
                    status: RequestStatus::Pending,
                })
            })
            .collect::<Result<_>>()?;
        Ok(DemandSet { requests })
    }

    /// |D|, constant over the episode.
    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn get(&self, id: RequestId) -> Option<&Request> {
        self.requests.get(id)
    }

    /// Pending requests in id order.
    pub fn pending(&self) -> Vec<&Request> {
        self.requests.iter().filter(|r| r.is_pending()).collect()
    }

    pub fn has_pending(&self) -> bool {
        self.requests.iter().any(Request::is_pending)
    }

    pub fn count(&self, status: RequestStatus) -> usize {
        self.requests.iter().filter(|r| r.status == status).count()
    }

    pub fn resolved_count(&self) -> usize {
        self.count(RequestStatus::Resolved)
    }

    pub fn resolve(&mut self, id: RequestId) -> Result<()> {
        self.transition(id, RequestStatus::Resolved)
    }

    pub fn fail(&mut self, id: RequestId) -> Result<()> {
        self.transition(id, RequestStatus::FailedPermanent)
    }

    /// Marks every still-pending request as permanently failed.
    pub fn fail_remaining(&mut self) {
        for r in &mut self.requests {
            if r.is_pending() {
                r.status = RequestStatus::FailedPermanent;
            }
        }
    }

    fn transition(&mut self, id: RequestId, to: RequestStatus) -> Result<()> {
        let req = self
            .requests
            .get_mut(id)
            .ok_or_else(|| Error::Argument(format!("unknown request {id}")))?;
        if !req.is_pending() {
            return Err(Error::Contract(format!(
                "request {id} is {:?}, only pending requests change status",
                req.status
            )));
        }
        req.status = to;
        Ok(())
    }
}

/// Draws `count` requests uniformly from ordered node pairs with `src != dst`.
/// Repeated pairs are allowed.
pub fn generate_demands(topology: &Topology, count: usize, seed: u64) -> Result<DemandSet> {
    if count < 1 {
        return Err(Error::config("requests", "need at least one request"));
    }
    let n = topology.node_count();
    if n < 2 {
        return Err(Error::config("topology", "need at least two nodes"));
    }
    let mut rng = seed::rng(seed);
    let pairs: Vec<_> = (0..count)
        .map(|_| {
            let src = rng.random_range(0..n);
            let mut dst = rng.random_range(0..n - 1);
            if dst >= src {
                dst += 1;
            }
            (NodeId(src), NodeId(dst))
        })
        .collect();
    DemandSet::from_pairs(&pairs)
}
