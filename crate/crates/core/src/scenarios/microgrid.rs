//! Networked microgrid energy trading.
//!
//! Microgrid `j` pays `½xⱼᵀQʲxⱼ + dʲᵀxⱼ + u - (e - PAx)ᵀAʲxʲ + r̄‖Ax - By‖²`
//! and user `i` pays `½yᵢᵀMⁱyᵢ - gⁱᵀyᵢ + (e - PAx)ᵀBⁱyᵢ`. Both are quadratic,
//! so the game is assembled as a linear-quadratic instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lq::{build_lq_from_data, LqFollowerData, LqGameData, LqLeaderData};
use super::{offsets, random_spd, to_rows, uniform, uniform_vec, Scenario};
use crate::error::{Error, Result};
use crate::game::FeasibleSet;
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicrogridParams {
    /// Users per microgrid.
    pub cluster_sizes: Vec<usize>,
    /// Number of markets `v`.
    pub markets: usize,
    pub leader_dim: usize,
    pub follower_dim: usize,
    /// Eigenvalue range of `Qʲ`.
    pub generation_curvature: [f64; 2],
    /// Eigenvalue range of `Mⁱ`.
    pub demand_curvature: [f64; 2],
    /// Range of the diagonal price-sensitivity matrix `P`.
    pub price_slope: [f64; 2],
    /// Range of the base prices `e`.
    pub base_price: [f64; 2],
    pub generation_linear: [f64; 2],
    pub demand_linear: [f64; 2],
    pub u: f64,
    pub r_bar: f64,
    /// Leader sets become boxes when given.
    pub generation_bounds: Option<[f64; 2]>,
}

impl Default for MicrogridParams {
    fn default() -> Self {
        Self {
            cluster_sizes: vec![5, 6, 7, 8],
            markets: 3,
            leader_dim: 2,
            follower_dim: 2,
            generation_curvature: [20.0, 40.0],
            demand_curvature: [1.0, 3.0],
            price_slope: [0.1, 0.3],
            base_price: [5.0, 10.0],
            generation_linear: [-2.0, 2.0],
            demand_linear: [0.0, 2.0],
            u: 1.0,
            r_bar: 0.005,
            generation_bounds: None,
        }
    }
}

/// Everything drawn for one microgrid instance.
#[derive(Debug, Clone, Serialize)]
struct Generated {
    /// Market served by each column of `A`.
    supply_markets: Vec<usize>,
    /// Market served by each column of `B`.
    demand_markets: Vec<usize>,
    price_slopes: Vec<f64>,
    base_prices: Vec<f64>,
    game: LqGameData,
}

fn selector(v: usize, markets: &[usize]) -> Matrix {
    Matrix::from_fn(v, markets.len(), |r, c| if markets[c] == r { 1.0 } else { 0.0 })
}

impl MicrogridParams {
    fn validate(&self) -> Result<()> {
        let ranges_ok = [
            self.generation_curvature,
            self.demand_curvature,
            self.price_slope,
            self.base_price,
            self.generation_linear,
            self.demand_linear,
        ]
        .iter()
        .all(|r| r[0] <= r[1]);
        let ok = ranges_ok
            && !self.cluster_sizes.is_empty()
            && self.cluster_sizes.iter().all(|&c| c > 0)
            && self.markets > 0
            && self.leader_dim > 0
            && self.follower_dim > 0
            && self.generation_curvature[0] > 0.0
            && self.demand_curvature[0] > 0.0
            && self.price_slope[0] >= 0.0
            && self.r_bar >= 0.0
            && self.generation_bounds.is_none_or(|b| b[0] < b[1]);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid microgrid parameters {self:?}")))
        }
    }
}

fn generate(params: &MicrogridParams, rng: &mut ChaCha8Rng) -> Generated {
    let m = params.cluster_sizes.len();
    let v = params.markets;
    let n: usize = params.cluster_sizes.iter().sum();
    let leader_dims = vec![params.leader_dim; m];
    let follower_dims = vec![params.follower_dim; n];
    let q = m * params.leader_dim;
    let p = n * params.follower_dim;
    let lo = offsets(&leader_dims);

    let supply_markets: Vec<usize> = (0..q).map(|_| rng.random_range(0..v)).collect();
    let demand_markets: Vec<usize> = (0..p).map(|_| rng.random_range(0..v)).collect();
    let price_slopes: Vec<f64> = (0..v).map(|_| uniform(rng, params.price_slope)).collect();
    let base_prices: Vec<f64> = (0..v).map(|_| uniform(rng, params.base_price)).collect();
    let a = selector(v, &supply_markets);
    let b = selector(v, &demand_markets);
    let pm = Matrix::from_diagonal(&Vector::from_vec(price_slopes.clone()));
    let e = Vector::from_vec(base_prices.clone());
    let pa = &pm * &a;

    let clusters: Vec<usize> = params
        .cluster_sizes
        .iter()
        .enumerate()
        .flat_map(|(h, &c)| std::iter::repeat_n(h, c))
        .collect();
    let pd = params.follower_dim;
    let followers = clusters
        .iter()
        .enumerate()
        .map(|(i, &leader)| {
            let bi = b.columns(i * pd, pd);
            let g = uniform_vec(rng, pd, params.demand_linear);
            // (e - PAx)ᵀBⁱy = eᵀBⁱy - (BⁱᵀPA x)ᵀy
            LqFollowerData {
                leader,
                m: to_rows(&random_spd(rng, pd, params.demand_curvature)),
                g: (g - bi.transpose() * &e).iter().copied().collect(),
                c: to_rows(&(-(bi.transpose() * &pa))),
            }
        })
        .collect();

    // [A, -B] maps z = (x, y) to the supply-demand mismatch.
    let mut mismatch = Matrix::zeros(v, q + p);
    mismatch.columns_mut(0, q).copy_from(&a);
    mismatch.columns_mut(q, p).copy_from(&(-&b));

    let leaders = (0..m)
        .map(|j| {
            let own = lo[j]..lo[j + 1];
            let aj = a.columns(own.start, own.len());
            let mut hess = mismatch.transpose() * &mismatch * (2.0 * params.r_bar);
            let qj = random_spd(rng, own.len(), params.generation_curvature);
            {
                let mut block = hess.view_mut((own.start, own.start), (own.len(), own.len()));
                block += &qj;
            }
            // (PAx)ᵀAʲxʲ contributes AᵀPᵀAʲ in columns of xʲ plus its transpose.
            let bilinear = pa.transpose() * aj;
            {
                let mut cols = hess.view_mut((0, own.start), (q, own.len()));
                cols += &bilinear;
            }
            {
                let mut rows = hess.view_mut((own.start, 0), (own.len(), q));
                rows += bilinear.transpose();
            }
            let mut c = Vector::zeros(q + p);
            let d = uniform_vec(rng, own.len(), params.generation_linear);
            c.rows_mut(own.start, own.len()).copy_from(&(d - aj.transpose() * &e));
            let set = match params.generation_bounds {
                Some([l, u]) => FeasibleSet::Box {
                    lower: vec![l; own.len()],
                    upper: vec![u; own.len()],
                },
                None => FeasibleSet::whole_space(own.len()),
            };
            LqLeaderData {
                p: to_rows(&hess),
                c: c.iter().copied().collect(),
                constant: params.u,
                set,
            }
        })
        .collect();

    Generated {
        supply_markets,
        demand_markets,
        price_slopes,
        base_prices,
        game: LqGameData {
            leader_dims,
            follower_dims,
            leaders,
            followers,
        },
    }
}

const MAX_ATTEMPTS: usize = 50;

/// Builds a microgrid game whose pseudo-gradient is strongly monotone.
pub fn build_microgrid(params: &MicrogridParams, seed: u64) -> Result<Scenario> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let generated = generate(params, &mut rng);
        let mut scenario = build_lq_from_data(&generated.game)?;
        if scenario.spec.constants().m_theta.is_some() {
            scenario.name = "microgrid";
            scenario.generated = serde_json::to_value(&generated)?;
            return Ok(scenario);
        }
    }
    Err(Error::Config(format!(
        "no strongly monotone microgrid instance after {MAX_ATTEMPTS} draws"
    )))
}
