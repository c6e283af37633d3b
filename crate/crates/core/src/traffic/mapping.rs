use serde::Serialize;

use crate::config::{ParallelismConfig, PlatformSpec};

use super::TrafficError;

/// Placement of one global rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RankInfo {
    pub rank: usize,
    pub machine: usize,
    pub local_slot: usize,
    pub stage: usize,
    pub tp_group: usize,
    pub tp_index: usize,
    pub dp_group: usize,
    pub dp_index: usize,
}

/// Whether a set of ranks shares one machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Span {
    IntraMachine,
    InterMachine,
}

/// Logical-to-physical rank placement.
///
/// Ranks are laid out stage-major, then DP index, then TP index:
/// `rank = stage·(t·d) + dp_index·t + tp_index`. TP groups therefore occupy
/// contiguous local slots, DP groups stay inside a machine whenever `t·d`
/// divides the machine size, and pipeline stages spread across machines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankMapping {
    pub pp: usize,
    pub tp: usize,
    pub dp: usize,
    pub ep: usize,
    pub gpus_per_machine: usize,
    /// Set when a TP group had to straddle machines (non-strict mode only).
    pub inter_machine_tp: bool,
    ranks: Vec<RankInfo>,
}

/// Lays out ranks for `par` on `platform`.
///
/// With `strict` set, a TP degree larger than one machine is an error;
/// otherwise the mapping is built and flagged with `inter_machine_tp`.
pub fn map_ranks(par: &ParallelismConfig, platform: &PlatformSpec, strict: bool) -> Result<RankMapping, TrafficError> {
    let required = par.gpu_count();
    let available = platform.gpu_count();
    if required != available || required == 0 {
        return Err(TrafficError::GpuCountMismatch { required, available });
    }
    let (pp, tp, dp) = (par.pp as usize, par.tp as usize, par.dp as usize);
    let gpm = platform.gpus_per_machine as usize;
    if tp > gpm && strict {
        return Err(TrafficError::UnmappableTpGroup { tp: par.tp, gpus_per_machine: platform.gpus_per_machine });
    }

    let mut ranks = Vec::with_capacity(required as usize);
    for stage in 0..pp {
        for dp_index in 0..dp {
            for tp_index in 0..tp {
                let rank = stage * tp * dp + dp_index * tp + tp_index;
                ranks.push(RankInfo {
                    rank,
                    machine: rank / gpm,
                    local_slot: rank % gpm,
                    stage,
                    tp_group: stage * dp + dp_index,
                    tp_index,
                    dp_group: stage * tp + tp_index,
                    dp_index,
                });
            }
        }
    }
    let mut mapping =
        RankMapping { pp, tp, dp, ep: par.ep as usize, gpus_per_machine: gpm, inter_machine_tp: false, ranks };
    mapping.inter_machine_tp = mapping.tp_span() == Span::InterMachine;
    Ok(mapping)
}

impl RankMapping {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn ranks(&self) -> &[RankInfo] {
        &self.ranks
    }

    pub fn info(&self, rank: usize) -> &RankInfo {
        &self.ranks[rank]
    }

    pub fn rank_of(&self, stage: usize, dp_index: usize, tp_index: usize) -> usize {
        stage * self.tp * self.dp + dp_index * self.tp + tp_index
    }

    /// Members of a TP group, ordered by TP index.
    pub fn tp_group(&self, group: usize) -> Vec<usize> {
        let (stage, dp_index) = (group / self.dp, group % self.dp);
        (0..self.tp).map(|i| self.rank_of(stage, dp_index, i)).collect()
    }

    /// Members of a DP group, ordered by DP index.
    pub fn dp_group(&self, group: usize) -> Vec<usize> {
        let (stage, tp_index) = (group / self.tp, group % self.tp);
        (0..self.dp).map(|i| self.rank_of(stage, i, tp_index)).collect()
    }

    pub fn tp_group_count(&self) -> usize {
        self.pp * self.dp
    }

    pub fn dp_group_count(&self) -> usize {
        self.pp * self.tp
    }

    /// Expert-parallel groups: consecutive runs of `ep` DP indices inside a
    /// DP group.
    pub fn ep_groups(&self) -> Vec<Vec<usize>> {
        let ep = self.ep.max(1);
        let mut out = Vec::new();
        for group in 0..self.dp_group_count() {
            let members = self.dp_group(group);
            for chunk in members.chunks(ep) {
                out.push(chunk.to_vec());
            }
        }
        out
    }

    /// Peer at the same (DP, TP) index in stage `stage + delta`.
    pub fn pp_peer(&self, rank: usize, delta: isize) -> Option<usize> {
        let info = &self.ranks[rank];
        let stage = info.stage as isize + delta;
        if stage < 0 || stage >= self.pp as isize {
            return None;
        }
        Some(self.rank_of(stage as usize, info.dp_index, info.tp_index))
    }

    fn span_of(&self, members: &[usize]) -> Span {
        let first = self.ranks[members[0]].machine;
        if members.iter().all(|&r| self.ranks[r].machine == first) {
            Span::IntraMachine
        } else {
            Span::InterMachine
        }
    }

    fn worst_span(&self, groups: impl Iterator<Item = Vec<usize>>) -> Span {
        groups.map(|g| self.span_of(&g)).max().unwrap_or(Span::IntraMachine)
    }

    /// Inter-machine if any TP group straddles machines.
    pub fn tp_span(&self) -> Span {
        self.worst_span((0..self.tp_group_count()).map(|g| self.tp_group(g)))
    }

    pub fn dp_span(&self) -> Span {
        self.worst_span((0..self.dp_group_count()).map(|g| self.dp_group(g)))
    }

    /// Inter-machine if any adjacent-stage pair of peers sits on different
    /// machines.
    pub fn pp_span(&self) -> Span {
        self.worst_span((0..self.len()).filter_map(|r| self.pp_peer(r, 1).map(|peer| vec![r, peer])))
    }

    pub fn ep_span(&self) -> Span {
        self.worst_span(self.ep_groups().into_iter())
    }
}
