use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClientDataset, LossModel, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionScheme {
    /// Every sample goes to a uniformly random client (balanced sizes).
    Iid,
    /// Samples sorted by label and dealt out in contiguous shards.
    LabelSorted,
}

impl fmt::Display for PartitionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionScheme::Iid => "iid",
            PartitionScheme::LabelSorted => "label-sorted",
        })
    }
}

impl FromStr for PartitionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(PartitionScheme::Iid),
            "label-sorted" | "non-iid" => Ok(PartitionScheme::LabelSorted),
            other => Err(Error::invalid(format!(
                "unknown partition scheme `{other}`"
            ))),
        }
    }
}

/// Client datasets produced by [`partition`].
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub clients: Vec<ClientDataset>,
    pub scheme: PartitionScheme,
    pub seed: u64,
}

impl Partition {
    /// Wraps pre-built client datasets (scheme recorded as iid).
    pub fn from_clients(clients: Vec<ClientDataset>) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::invalid("a partition needs at least one client"));
        }
        let dim = clients[0].dim();
        if let Some(c) = clients.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.dim(),
            });
        }
        Ok(Partition {
            clients,
            scheme: PartitionScheme::Iid,
            seed: 0,
        })
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.clients[0].dim()
    }

    /// `D_i` for every client.
    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(ClientDataset::len).collect()
    }

    /// `D = Σ D_i`
    pub fn total_size(&self) -> usize {
        self.clients.iter().map(ClientDataset::len).sum()
    }

    /// All client samples concatenated in client order.
    pub fn pooled(&self) -> ClientDataset {
        ClientDataset::pooled(&self.clients).expect("partition clients share a dimension")
    }

    /// Size-weighted global loss `Σ D_i F_i(w) / D`.
    pub fn global_loss(&self, model: &LossModel, params: &ParamVector) -> Result<f64> {
        let total = self.total_size() as f64;
        let mut acc = 0.0;
        for client in &self.clients {
            acc += client.len() as f64 * model.loss(params, client)?;
        }
        Ok(acc / total)
    }

    /// Size-weighted global gradient `Σ D_i ∇F_i(w) / D`.
    pub fn global_gradient(&self, model: &LossModel, params: &ParamVector) -> Result<ParamVector> {
        let total = self.total_size() as f64;
        let mut acc = ParamVector::zeros(params.dim());
        for client in &self.clients {
            acc.axpy(
                client.len() as f64 / total,
                &model.gradient(params, client)?,
            );
        }
        Ok(acc)
    }
}

/// Splits `data` across `n_clients` clients.
///
/// `Iid` shuffles with `seed` and deals balanced chunks; each client keeps its
/// samples in original order. `LabelSorted` groups samples by label: with at
/// most as many clients as labels, whole labels are assigned to clients in
/// sorted order; with more clients, client `c` receives a shard of label
/// `c mod L`, so every client stays single-label. If some label has fewer
/// samples than the clients mapped to it, the sorted samples are cut into
/// equal contiguous shards instead.
pub fn partition(
    data: &ClientDataset,
    n_clients: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::invalid("client count must be positive"));
    }
    if n_clients > data.len() {
        return Err(Error::invalid(format!(
            "cannot split {} samples across {n_clients} clients",
            data.len()
        )));
    }
    let assignment = match scheme {
        PartitionScheme::Iid => {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut shards: Vec<Vec<usize>> = balanced_chunks(&order, n_clients)
                .into_iter()
                .map(<[usize]>::to_vec)
                .collect();
            shards.iter_mut().for_each(|s| s.sort_unstable());
            shards
        }
        PartitionScheme::LabelSorted => label_sorted(data, n_clients),
    };
    let clients = assignment
        .iter()
        .map(|idx| data.subset(idx))
        .collect::<Result<Vec<_>>>()?;
    Ok(Partition {
        clients,
        scheme,
        seed,
    })
}

fn label_sorted(data: &ClientDataset, n_clients: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let labels = data.labels();
    order.sort_by(|&a, &b| labels[a].total_cmp(&labels[b]));

    // contiguous runs of equal labels
    let mut groups: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || labels[order[i]] != labels[order[start]] {
            groups.push(&order[start..i]);
            start = i;
        }
    }
    let n_labels = groups.len();

    if n_clients <= n_labels {
        let mut shards = vec![Vec::new(); n_clients];
        for (j, group) in groups.iter().enumerate() {
            shards[j * n_clients / n_labels].extend_from_slice(group);
        }
        return shards;
    }

    let clients_per_label: Vec<usize> = (0..n_labels)
        .map(|l| (l..n_clients).step_by(n_labels).count())
        .collect();
    if groups
        .iter()
        .zip(&clients_per_label)
        .any(|(g, &m)| g.len() < m)
    {
        return balanced_chunks(&order, n_clients)
            .into_iter()
            .map(<[usize]>::to_vec)
            .collect();
    }
    let mut per_label: Vec<std::vec::IntoIter<&[usize]>> = groups
        .iter()
        .zip(&clients_per_label)
        .map(|(g, &m)| balanced_chunks(g, m).into_iter())
        .collect();
    (0..n_clients)
        .map(|c| {
            per_label[c % n_labels]
                .next()
                .expect("one shard per mapped client")
                .to_vec()
        })
        .collect()
}

/// Splits `items` into `n` contiguous chunks whose sizes differ by at most one.
fn balanced_chunks<T>(items: &[T], n: usize) -> Vec<&[T]> {
    let base = items.len() / n;
    let extra = items.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < extra);
        out.push(&items[start..start + len]);
        start += len;
    }
    out
}
