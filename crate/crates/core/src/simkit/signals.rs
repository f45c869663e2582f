use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::scalar::{Cx, Real};

use super::channels::{complex_gaussian, ChannelRealization};
use super::config::SystemConfig;
use super::scenario::Scenario;

/// L×N pilot book stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix<T> {
    len: usize,
    users: usize,
    data: Vec<Cx<T>>,
}

impl<T: Real> PilotMatrix<T> {
    /// Builds a pilot book from its columns.
    pub fn from_columns(columns: Vec<Vec<Cx<T>>>) -> Result<Self> {
        let len = columns.first().map_or(0, Vec::len);
        if len == 0 || columns.iter().any(|c| c.len() != len) {
            return Err(Error::Dimension("pilot columns must share a positive length".into()));
        }
        Ok(Self {
            len,
            users: columns.len(),
            data: columns.into_iter().flatten().collect(),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.users == 0
    }

    #[inline]
    pub fn users(&self) -> usize {
        self.users
    }

    #[inline]
    pub fn column(&self, n: usize) -> &[Cx<T>] {
        &self.data[n * self.len..(n + 1) * self.len]
    }

    pub fn column_norm_sqr(&self, n: usize) -> T {
        self.column(n).iter().map(|z| z.norm_sqr()).sum()
    }

    /// Same book with columns reordered so that new column `i` is old
    /// column `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::from_columns(perm.iter().map(|&n| self.column(n).to_vec()).collect()).expect("valid permutation")
    }
}

/// Per-AP L×M observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignals<T> {
    pub y: Vec<CMatrix<T>>,
    pub noise_power: T,
}

impl<T: Real> ReceivedSignals<T> {
    pub fn aps(&self) -> usize {
        self.y.len()
    }

    pub fn antennas(&self) -> usize {
        self.y.first().map_or(0, CMatrix::cols)
    }

    pub fn total_energy(&self) -> T {
        self.y.iter().map(CMatrix::frob_norm_sqr).sum()
    }

    /// Checks that every AP matrix is `pilots.len() × M` and finite.
    pub fn check_against(&self, pilots: &PilotMatrix<T>) -> Result<()> {
        let m = self.antennas();
        if self.y.is_empty() || m == 0 {
            return Err(Error::Dimension("no observations".into()));
        }
        for (k, y) in self.y.iter().enumerate() {
            if y.rows() != pilots.len() || y.cols() != m {
                return Err(Error::Dimension(format!(
                    "Y_{k} is {}x{}, expected {}x{m}",
                    y.rows(),
                    y.cols(),
                    pilots.len()
                )));
            }
            if !y.is_finite() {
                return Err(Error::Dimension(format!("Y_{k} has non-finite entries")));
            }
        }
        Ok(())
    }
}

/// Complex Gaussian pilots, each column rescaled to squared norm L.
pub fn generate_pilots<T: Real, R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> PilotMatrix<T> {
    let l = cfg.pilot_len;
    let target = T::of_usize(l).sqrt();
    let columns = (0..cfg.users)
        .map(|_| {
            let mut col: Vec<Cx<T>> = (0..l).map(|_| complex_gaussian(rng, T::one())).collect();
            let norm = col.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
            for z in &mut col {
                *z *= target / norm;
            }
            col
        })
        .collect();
    PilotMatrix::from_columns(columns).expect("config validated")
}

/// `Y_k = Σ_n a_n √(effective_beta_kn) s_n g_knᵀ + W_k`, with `W_k` i.i.d.
/// CN(0, `scenario.noise_power`). No noise is drawn when that power is zero.
pub fn synthesize<T: Real, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    channels: &ChannelRealization<T>,
    pilots: &PilotMatrix<T>,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<ReceivedSignals<T>> {
    let (k_aps, n_users) = (scenario.aps(), scenario.users());
    let m = cfg.antennas;
    if pilots.users() != n_users
        || pilots.len() != cfg.pilot_len
        || channels.g.aps() != k_aps
        || channels.g.users() != n_users
        || channels.g.dim() != m
    {
        return Err(Error::Dimension(format!(
            "scenario {k_aps}x{n_users}, pilots {}x{}, channels {}x{}x{}, config L={} M={m}",
            pilots.len(),
            pilots.users(),
            channels.g.aps(),
            channels.g.users(),
            channels.g.dim(),
            cfg.pilot_len
        )));
    }
    let noise = scenario.noise_power;
    let y = (0..k_aps)
        .map(|k| {
            let mut yk = CMatrix::zeros(pilots.len(), m);
            for n in (0..n_users).filter(|&n| channels.activity[n]) {
                yk.add_outer(
                    scenario.effective_beta[(k, n)].sqrt(),
                    pilots.column(n),
                    channels.g.get(k, n),
                );
            }
            if noise > T::zero() {
                for z in yk.as_mut_slice() {
                    *z += complex_gaussian(rng, noise);
                }
            }
            yk
        })
        .collect();
    Ok(ReceivedSignals { y, noise_power: noise })
}
