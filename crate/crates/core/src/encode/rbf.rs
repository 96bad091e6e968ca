use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{dot, rng::stream_rng};

const KERNEL_PAIRS: usize = 4000;

/// Pivots for the RBF feature map `φ(x)_i = exp(−(x−ζ_i)²/σ²)`.
///
/// `⟨φ(x), φ(x′)⟩` is proportional to `exp(−(x−x′)²/(2σ²))` away from the
/// pivot boundary; [`kernel_constant`](Self::kernel_constant) fits that ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotSet {
    pivots: Vec<f64>,
    sigma: f64,
    periodic: bool,
}

impl PivotSet {
    pub fn new(pivots: Vec<f64>, sigma: f64, periodic: bool) -> Result<Self> {
        if pivots.len() < 2 {
            return Err(Error::invalid(format!("need at least 2 pivots, got {}", pivots.len())));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("RBF sigma {sigma} must be positive")));
        }
        if pivots.iter().any(|z| !(0.0..=1.0).contains(z)) {
            return Err(Error::invalid("pivots must lie in [0, 1]"));
        }
        if pivots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("pivots must be strictly increasing"));
        }
        Ok(Self {
            pivots,
            sigma,
            periodic,
        })
    }

    /// `z` pivots evenly spaced over `[0, 1]`, endpoints included.
    pub fn even(z: usize, sigma: f64) -> Result<Self> {
        if z < 2 {
            return Err(Error::invalid(format!("need at least 2 pivots, got {z}")));
        }
        let step = 1.0 / (z - 1) as f64;
        Self::new((0..z).map(|i| i as f64 * step).collect(), sigma, false)
    }

    /// `z` pivots at `k/z` on the unit ring; 0 and 1 coincide, so 1 is omitted.
    pub fn periodic(z: usize, sigma: f64) -> Result<Self> {
        if z < 2 {
            return Err(Error::invalid(format!("need at least 2 pivots, got {z}")));
        }
        Self::new((0..z).map(|i| i as f64 / z as f64).collect(), sigma, true)
    }

    pub fn pivots(&self) -> &[f64] {
        &self.pivots
    }

    pub fn len(&self) -> usize {
        self.pivots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivots.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    fn distance(&self, x: f64, z: f64) -> f64 {
        if self.periodic {
            let d = (x.rem_euclid(1.0) - z).abs();
            d.min(1.0 - d)
        } else {
            (x - z).abs()
        }
    }

    pub fn embed(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.embed_into(x, &mut out);
        out
    }

    pub fn embed_into(&self, x: f64, out: &mut [f64]) {
        let s2 = self.sigma * self.sigma;
        for (o, &z) in out.iter_mut().zip(&self.pivots) {
            let d = self.distance(x, z);
            *o = (-d * d / s2).exp();
        }
    }

    /// Target kernel `G(x − x′) = exp(−(x−x′)²/(2σ²))`, wrapped on the ring
    /// in periodic mode.
    pub fn kernel(&self, x: f64, y: f64) -> f64 {
        let d = if self.periodic {
            self.distance(x - y, 0.0)
        } else {
            (x - y).abs()
        };
        (-d * d / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// Least-squares `c` minimising `Σ (G(x−x′) − c⟨φ(x),φ(x′)⟩)²` over
    /// seeded pairs with `|x − x′| ≤ 2σ`. Pairs are drawn from the interior
    /// `[ζ_1 + 3σ, ζ_Z − 3σ]` when it is nonempty.
    pub fn kernel_constant(&self, seed: u64) -> f64 {
        let mut rng = stream_rng(seed, 0x5242_4643);
        let (lo, hi) = if self.periodic {
            (0.0, 1.0)
        } else {
            let first = self.pivots[0];
            let last = self.pivots[self.len() - 1];
            let (a, b) = (first + 3.0 * self.sigma, last - 3.0 * self.sigma);
            if a < b {
                (a, b)
            } else {
                (first, last)
            }
        };
        let reach = 2.0 * self.sigma;
        let (mut num, mut den) = (0.0, 0.0);
        let mut fx = vec![0.0; self.len()];
        let mut fy = vec![0.0; self.len()];
        for _ in 0..KERNEL_PAIRS {
            let x = rng.gen_range(lo..=hi);
            let y = if self.periodic {
                x + rng.gen_range(-reach..=reach)
            } else {
                rng.gen_range((x - reach).max(lo)..=(x + reach).min(hi))
            };
            self.embed_into(x, &mut fx);
            self.embed_into(y, &mut fy);
            let p = dot(&fx, &fy);
            num += self.kernel(x, y) * p;
            den += p * p;
        }
        if den > 0.0 {
            num / den
        } else {
            1.0
        }
    }
}
