//! Cell geometry, zone partition, LoS channels and the beam codebook.
//!
//! The cell is a disk sector in front of the BS, split into an annular
//! ring-by-sector grid of zones. Every channel is line-of-sight and fully
//! determined by the geometry: a distance-dependent path loss and a uniform
//! linear array steering vector on each end. All powers are linear watts;
//! dB conversions happen at the configuration boundary, not here.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("SNR undefined: no active beam (zero normalization)")]
    UndefinedSnr,
}

/// Physical and sizing parameters of one cell instance. Linear units only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioParams {
    /// Cell radius in meters.
    pub cell_radius: f64,
    /// Number of zones Q.
    pub num_zones: usize,
    /// Radial rings of the zone grid; `num_zones` must be a multiple.
    pub rings: usize,
    /// BS antennas N_a.
    pub num_bs_antennas: usize,
    /// Codebook size N.
    pub num_beams: usize,
    /// RIS elements M.
    pub num_ris_elements: usize,
    /// Transmit power P_t, watts.
    pub transmit_power: f64,
    /// Noise power, watts.
    pub noise_power: f64,
    /// Reference path gain at `ref_distance`, linear.
    pub ref_path_loss: f64,
    /// Reference distance D_0, meters.
    pub ref_distance: f64,
    /// Path loss decay exponent.
    pub decay_exponent: f64,
    /// Carrier wavelength, meters.
    pub wavelength: f64,
    /// BS antenna spacing d_a, meters (half-wavelength by default).
    pub bs_spacing: f64,
    /// RIS element spacing d_m, meters (half-wavelength by default).
    pub ris_spacing: f64,
    /// RIS position in the BS-centric plane, meters.
    pub ris_position: [f64; 2],
    /// Expected number of users in the cell.
    pub num_users: f64,
    /// Activation SNR threshold, linear ratio.
    pub snr_threshold: f64,
    /// Angular extent served by the BS, radians (centered on broadside).
    pub sector_span: f64,
}

impl ScenarioParams {
    /// Full-scale parameter set: 1 km cell, 40 zones, 64 beams/antennas/elements.
    pub fn full_scale() -> Self {
        let wavelength = 3.0e8 / 28.0e9;
        let az = 45f64.to_radians();
        ScenarioParams {
            cell_radius: 1000.0,
            num_zones: 40,
            rings: 4,
            num_bs_antennas: 64,
            num_beams: 64,
            num_ris_elements: 64,
            transmit_power: 1.0,
            noise_power: 10f64.powf(-11.5), // -85 dBm
            ref_path_loss: 1e-3,            // -30 dB
            ref_distance: 1.0,
            decay_exponent: 2.75,
            wavelength,
            bs_spacing: wavelength / 2.0,
            ris_spacing: wavelength / 2.0,
            ris_position: [1000.0 * az.cos(), 1000.0 * az.sin()],
            num_users: 100.0,
            snr_threshold: 10.0, // 10 dB
            sector_span: PI,
        }
    }

    /// Small desk-scale set used by the fast experiment sweep and CI.
    ///
    /// The surface hangs 4 m from the BS; with the mild exponent this puts
    /// the aligned cascade a few dB above the direct path for the outer
    /// ring, so phase optimization genuinely decides coverage there.
    pub fn desk() -> Self {
        let wavelength = 3.0e8 / 28.0e9;
        let az = 60f64.to_radians();
        ScenarioParams {
            cell_radius: 60.0,
            num_zones: 10,
            rings: 2,
            num_bs_antennas: 16,
            num_beams: 16,
            num_ris_elements: 16,
            transmit_power: 1.0,
            noise_power: 10f64.powf(-4.9), // -19 dBm
            ref_path_loss: 1e-1, // -10 dB
            ref_distance: 1.0,
            decay_exponent: 2.0,
            wavelength,
            bs_spacing: wavelength / 2.0,
            ris_spacing: wavelength / 2.0,
            ris_position: [4.0 * az.cos(), 4.0 * az.sin()],
            num_users: 100.0,
            snr_threshold: 10.0,
            sector_span: PI,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: &str| Err(ScenarioError::InvalidArgument(m.to_string()));
        if self.num_zones < 1
            || self.rings < 1
            || self.num_bs_antennas < 1
            || self.num_beams < 1
            || self.num_ris_elements < 1
        {
            return err("all counts must be >= 1");
        }
        if self.num_zones % self.rings != 0 {
            return err("num_zones must factor into rings x sectors");
        }
        for (name, v) in [
            ("cell_radius", self.cell_radius),
            ("transmit_power", self.transmit_power),
            ("noise_power", self.noise_power),
            ("ref_path_loss", self.ref_path_loss),
            ("ref_distance", self.ref_distance),
            ("wavelength", self.wavelength),
            ("bs_spacing", self.bs_spacing),
            ("ris_spacing", self.ris_spacing),
            ("num_users", self.num_users),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return err(&format!("{name} must be positive and finite"));
            }
        }
        if !(self.snr_threshold >= 0.0) {
            return err("snr_threshold must be >= 0");
        }
        if !(self.sector_span > 0.0 && self.sector_span <= 2.0 * PI) {
            return err("sector_span must be in (0, 2*pi]");
        }
        if !self.decay_exponent.is_finite() {
            return err("decay_exponent must be finite");
        }
        Ok(())
    }
}

/// One cell region, represented by a single point sharing channel statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Zone {
    pub index: usize,
    pub centroid: [f64; 2],
    /// Expected number of users in the zone.
    pub weight: f64,
    pub distance_to_bs: f64,
    pub distance_to_ris: f64,
    /// Physical AoD from the BS toward the zone, radians.
    pub aod_bs: f64,
    /// Physical AoD from the RIS toward the zone, radians.
    pub aod_ris: f64,
}

/// All LoS channels of the cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSet {
    /// BS-to-zone channels h_{d,q}, stored as columns (`h.dotc(b)` = h^H b).
    #[serde(with = "cplx_serde::vec_list")]
    pub direct: Vec<DVector<Complex64>>,
    /// RIS-to-zone channels h_{r,q}, stored as columns.
    #[serde(with = "cplx_serde::vec_list")]
    pub ris_to_zone: Vec<DVector<Complex64>>,
    /// BS-to-RIS channel G, M x N_a, rank one by construction.
    #[serde(with = "cplx_serde::matrix")]
    pub bs_to_ris: DMatrix<Complex64>,
    /// Physical AoD from the BS toward the RIS.
    pub ris_aod_bs: f64,
    /// Physical AoA at the RIS from the BS.
    pub ris_aoa: f64,
    pub bs_ris_distance: f64,
}

/// Fixed sweeping codebook: N beams with uniformly spaced departure angles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamCodebook {
    #[serde(with = "cplx_serde::vec_list")]
    pub beams: Vec<DVector<Complex64>>,
    pub beam_aods: Vec<f64>,
}

/// A fully built cell: geometry, channels and codebook. Immutable after
/// construction; every evaluation on it is a pure function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellScenario {
    pub params: ScenarioParams,
    pub zones: Vec<Zone>,
    pub channels: ChannelSet,
    pub codebook: BeamCodebook,
}

/// ULA steering vector (1/sqrt(N)) [1, e^{j pi phi}, ..., e^{j pi (N-1) phi}].
///
/// `phi` is the per-element phase difference; it is 2-periodic and wrapped
/// into [0, 2) before use.
pub fn steering_vector(phi: f64, n: usize) -> Result<DVector<Complex64>, ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::InvalidArgument("N must be >= 1".into()));
    }
    if !phi.is_finite() {
        return Err(ScenarioError::InvalidArgument("phi must be finite".into()));
    }
    let phi = phi - 2.0 * (phi / 2.0).floor();
    let scale = 1.0 / (n as f64).sqrt();
    Ok(DVector::from_fn(n, |k, _| {
        Complex64::from_polar(scale, PI * phi * k as f64)
    }))
}

/// Distance-dependent path gain C_0 (d / D_0)^(-alpha), linear.
pub fn path_loss(d: f64, params: &ScenarioParams) -> Result<f64, ScenarioError> {
    if !(d > 0.0) {
        return Err(ScenarioError::InvalidArgument(
            "distance must be positive".into(),
        ));
    }
    Ok(params.ref_path_loss * (d / params.ref_distance).powf(-params.decay_exponent))
}

fn azimuth(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Build a scenario. The BS sits at the origin; zones tile the served sector
/// as `rings x sectors` annular cells, each represented by its area centroid.
/// `layout_seed != 0` jitters each representative point inside its cell for
/// Monte Carlo variety; seed 0 keeps the exact centroids.
pub fn build_scenario(
    params: &ScenarioParams,
    layout_seed: u64,
) -> Result<CellScenario, ScenarioError> {
    params.validate()?;
    let p = params;
    let rings = p.rings;
    let sectors = p.num_zones / rings;
    let theta_lo = (PI - p.sector_span) / 2.0;
    let sector_width = p.sector_span / sectors as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);

    let mut zones = Vec::with_capacity(p.num_zones);
    let mut total_area = 0.0;
    for ring in 0..rings {
        let r1 = p.cell_radius * ring as f64 / rings as f64;
        let r2 = p.cell_radius * (ring + 1) as f64 / rings as f64;
        for sec in 0..sectors {
            let index = ring * sectors + sec;
            let mid = theta_lo + (sec as f64 + 0.5) * sector_width;
            let half = sector_width / 2.0;
            // Area centroid of the annular sector lies on its bisector.
            let rad = (2.0 * half.sin() / (3.0 * half)) * (r2.powi(3) - r1.powi(3))
                / (r2.powi(2) - r1.powi(2));
            let area = half * (r2.powi(2) - r1.powi(2));
            total_area += area;
            let (mut rr, mut aa) = (rad, mid);
            if layout_seed != 0 {
                let dr = rng.gen_range(-0.3..0.3) * (r2 - r1);
                let da = rng.gen_range(-0.3..0.3) * sector_width;
                rr = (rad + dr).clamp(r1.max(1e-9), r2);
                aa = mid + da;
            }
            let centroid = [rr * aa.cos(), rr * aa.sin()];
            let distance_to_bs = dist([0.0, 0.0], centroid).max(p.ref_distance);
            let distance_to_ris = dist(p.ris_position, centroid).max(p.ref_distance);
            zones.push(Zone {
                index,
                centroid,
                weight: area, // rescaled below
                distance_to_bs,
                distance_to_ris,
                aod_bs: azimuth([0.0, 0.0], centroid),
                aod_ris: azimuth(p.ris_position, centroid),
            });
        }
    }
    for z in &mut zones {
        z.weight = p.num_users * z.weight / total_area;
    }

    let kappa_bs = 2.0 * p.bs_spacing / p.wavelength;
    let kappa_ris = 2.0 * p.ris_spacing / p.wavelength;

    let beam_aods: Vec<f64> = (0..p.num_beams)
        .map(|n| theta_lo + (n as f64 + 0.5) * p.sector_span / p.num_beams as f64)
        .collect();
    let beams = beam_aods
        .iter()
        .map(|&phi| {
            Ok(steering_vector(kappa_bs * phi.cos(), p.num_bs_antennas)?
                .map(|c| c * p.transmit_power.sqrt()))
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;

    let ris_aod_bs = azimuth([0.0, 0.0], p.ris_position);
    let ris_aoa = azimuth(p.ris_position, [0.0, 0.0]);
    let bs_ris_distance = dist([0.0, 0.0], p.ris_position).max(p.ref_distance);

    let mut direct = Vec::with_capacity(p.num_zones);
    let mut ris_to_zone = Vec::with_capacity(p.num_zones);
    for z in &zones {
        let gd = (p.num_bs_antennas as f64 * path_loss(z.distance_to_bs, p)?).sqrt();
        direct.push(
            steering_vector(kappa_bs * z.aod_bs.cos(), p.num_bs_antennas)?.map(|c| c * gd),
        );
        let gr = (p.num_ris_elements as f64 * path_loss(z.distance_to_ris, p)?).sqrt();
        ris_to_zone.push(
            steering_vector(kappa_ris * z.aod_ris.cos(), p.num_ris_elements)?.map(|c| c * gr),
        );
    }
    let g_gain =
        (p.num_ris_elements as f64 * p.num_bs_antennas as f64 * path_loss(bs_ris_distance, p)?)
            .sqrt();
    let a_ris = steering_vector(kappa_ris * ris_aoa.cos(), p.num_ris_elements)?;
    let a_bs = steering_vector(kappa_bs * ris_aod_bs.cos(), p.num_bs_antennas)?;
    let bs_to_ris = DMatrix::from_fn(p.num_ris_elements, p.num_bs_antennas, |m, k| {
        g_gain * a_ris[m] * a_bs[k].conj()
    });

    Ok(CellScenario {
        params: p.clone(),
        zones,
        channels: ChannelSet {
            direct,
            ris_to_zone,
            bs_to_ris,
            ris_aod_bs,
            ris_aoa,
            bs_ris_distance,
        },
        codebook: BeamCodebook { beams, beam_aods },
    })
}

impl CellScenario {
    pub fn num_zones(&self) -> usize {
        self.zones.len()
    }

    pub fn num_beams(&self) -> usize {
        self.codebook.beams.len()
    }

    pub fn num_ris_elements(&self) -> usize {
        self.params.num_ris_elements
    }

    /// Omega_q = diag(h_{r,q}^H) G, the RIS cascade map of zone q.
    pub fn omega(&self, q: usize) -> DMatrix<Complex64> {
        let hr = &self.channels.ris_to_zone[q];
        let g = &self.channels.bs_to_ris;
        DMatrix::from_fn(g.nrows(), g.ncols(), |m, k| hr[m].conj() * g[(m, k)])
    }

    /// Effective BS-to-zone channel under phases `theta`, returned as the
    /// column h_q with h_q^H = h_{r,q}^H diag(e^{j theta}) G + h_{d,q}^H.
    pub fn effective_channel(&self, q: usize, theta: &[f64]) -> DVector<Complex64> {
        let hr = &self.channels.ris_to_zone[q];
        let g = &self.channels.bs_to_ris;
        let hd = &self.channels.direct[q];
        // h = G^H Theta^H h_r + h_d
        let shifted = DVector::from_fn(hr.len(), |m, _| {
            hr[m] * Complex64::from_polar(1.0, -theta[m])
        });
        g.adjoint() * shifted + hd
    }

    /// Received SNR of zone q under active-beam indicators `y` and phases
    /// `theta`: noncoherent average of per-beam powers over active beams.
    pub fn snr(&self, q: usize, y: &[bool], theta: &[f64]) -> Result<f64, ScenarioError> {
        let active = y.iter().filter(|&&b| b).count();
        if active == 0 {
            return Err(ScenarioError::UndefinedSnr);
        }
        let h = self.effective_channel(q, theta);
        let num: f64 = y
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(n, _)| h.dotc(&self.codebook.beams[n]).norm_sqr())
            .sum();
        Ok(num / (self.params.noise_power * active as f64))
    }
}

/// Serde helpers storing complex arrays as interleaved [re, im, re, im, ...].
mod cplx_serde {
    use nalgebra::{DMatrix, DVector};
    use num_complex::Complex64;

    fn interleave(v: impl Iterator<Item = Complex64>) -> Vec<f64> {
        let mut out = Vec::new();
        for c in v {
            out.push(c.re);
            out.push(c.im);
        }
        out
    }

    fn deinterleave(v: &[f64]) -> Vec<Complex64> {
        v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
    }

    pub mod vec_list {
        use super::*;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(
            v: &[DVector<Complex64>],
            s: S,
        ) -> Result<S::Ok, S::Error> {
            let rows: Vec<Vec<f64>> = v
                .iter()
                .map(|row| interleave(row.iter().copied()))
                .collect();
            rows.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Vec<DVector<Complex64>>, D::Error> {
            let rows = Vec::<Vec<f64>>::deserialize(d)?;
            Ok(rows
                .iter()
                .map(|r| DVector::from_vec(deinterleave(r)))
                .collect())
        }
    }

    pub mod matrix {
        use super::*;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct Mat {
            rows: usize,
            cols: usize,
            /// Row-major interleaved re/im.
            data: Vec<f64>,
        }

        pub fn serialize<S: Serializer>(
            m: &DMatrix<Complex64>,
            s: S,
        ) -> Result<S::Ok, S::Error> {
            let mut flat = Vec::with_capacity(m.len());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    flat.push(m[(i, j)]);
                }
            }
            Mat {
                rows: m.nrows(),
                cols: m.ncols(),
                data: interleave(flat.into_iter()),
            }
            .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<DMatrix<Complex64>, D::Error> {
            let m = Mat::deserialize(d)?;
            let vals = deinterleave(&m.data);
            Ok(DMatrix::from_row_slice(m.rows, m.cols, &vals))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn steering_all_ones() {
        let a = steering_vector(0.0, 4).unwrap();
        for k in 0..4 {
            assert_relative_eq!(a[k].re, 0.5, epsilon = 1e-15);
            assert_relative_eq!(a[k].im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn steering_alternating_sign() {
        let a = steering_vector(1.0, 2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_relative_eq!(a[0].re, s, epsilon = 1e-14);
        assert_relative_eq!(a[1].re, -s, epsilon = 1e-14);
        assert!(a[1].im.abs() < 1e-14);
    }

    #[test]
    fn steering_two_periodic() {
        let a = steering_vector(2.5, 3).unwrap();
        let b = steering_vector(0.5, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn steering_rejects_bad_input() {
        assert!(steering_vector(f64::NAN, 3).is_err());
        assert!(steering_vector(0.3, 0).is_err());
    }

    #[test]
    fn path_loss_reference_and_inverse_square() {
        let mut p = ScenarioParams::full_scale();
        p.ref_path_loss = 1e-3;
        p.ref_distance = 1.0;
        assert_relative_eq!(path_loss(1.0, &p).unwrap(), 1e-3, epsilon = 1e-18);
        p.ref_path_loss = 1.0;
        p.decay_exponent = 2.0;
        assert_relative_eq!(path_loss(10.0, &p).unwrap(), 0.01, epsilon = 1e-15);
        assert!(path_loss(0.0, &p).is_err());
        assert!(path_loss(-1.0, &p).is_err());
    }

    #[test]
    fn path_loss_high_precision_point() {
        // 1e-3 * 1000^{-2.75}, evaluated directly at high precision.
        let mut p = ScenarioParams::full_scale();
        p.ref_path_loss = 1e-3;
        p.ref_distance = 1.0;
        p.decay_exponent = 2.75;
        let expected = 1e-3 * 1000f64.powf(-2.75);
        assert_relative_eq!(expected, 5.623413251903491e-12, max_relative = 1e-12);
        assert_relative_eq!(path_loss(1000.0, &p).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn full_scale_scenario_counts_and_weights() {
        let sc = build_scenario(&ScenarioParams::full_scale(), 0).unwrap();
        assert_eq!(sc.zones.len(), 40);
        let total: f64 = sc.zones.iter().map(|z| z.weight).sum();
        assert_relative_eq!(total, 100.0, max_relative = 1e-12);
        for z in &sc.zones {
            let r = (z.centroid[0].powi(2) + z.centroid[1].powi(2)).sqrt();
            assert!(r <= sc.params.cell_radius + 1e-9);
            assert!(z.distance_to_bs > 0.0 && z.distance_to_ris > 0.0);
        }
    }

    #[test]
    fn single_zone_distance_identity() {
        let mut p = ScenarioParams::full_scale();
        p.num_zones = 1;
        p.rings = 1;
        let sc = build_scenario(&p, 0).unwrap();
        let z = &sc.zones[0];
        let d = (z.centroid[0].powi(2) + z.centroid[1].powi(2)).sqrt();
        assert_relative_eq!(z.distance_to_bs, d, max_relative = 1e-14);
    }

    #[test]
    fn bs_ris_channel_rank_one_energy() {
        for seed in [0u64, 7, 42] {
            let sc = build_scenario(&ScenarioParams::desk(), seed).unwrap();
            let g = &sc.channels.bs_to_ris;
            let p = &sc.params;
            let expected = p.num_ris_elements as f64
                * p.num_bs_antennas as f64
                * path_loss(sc.channels.bs_ris_distance, p).unwrap();
            let fro: f64 = g.iter().map(|c| c.norm_sqr()).sum();
            assert_relative_eq!(fro, expected, max_relative = 1e-12);
            // Rank one: every 2x2 minor vanishes.
            let svd = g.clone().svd(false, false);
            let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
            sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert!(sv[1] <= 1e-12 * sv[0]);
        }
    }

    #[test]
    fn direct_channel_energy() {
        let sc = build_scenario(&ScenarioParams::desk(), 3).unwrap();
        for (q, z) in sc.zones.iter().enumerate() {
            let expected =
                sc.params.num_bs_antennas as f64 * path_loss(z.distance_to_bs, &sc.params).unwrap();
            assert_relative_eq!(
                sc.channels.direct[q].norm_squared(),
                expected,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn beam_power_is_transmit_power() {
        let sc = build_scenario(&ScenarioParams::desk(), 1).unwrap();
        for b in &sc.codebook.beams {
            assert_relative_eq!(
                b.norm_squared(),
                sc.params.transmit_power,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn effective_channel_reduces_to_direct_without_ris_path() {
        let mut sc = build_scenario(&ScenarioParams::desk(), 2).unwrap();
        let m = sc.params.num_ris_elements;
        for h in &mut sc.channels.ris_to_zone {
            *h = DVector::zeros(m);
        }
        let theta = vec![1.3; m];
        for q in 0..sc.num_zones() {
            let h = sc.effective_channel(q, &theta);
            assert_relative_eq!((h - &sc.channels.direct[q]).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn effective_channel_zero_phases_is_plain_sum() {
        let sc = build_scenario(&ScenarioParams::desk(), 2).unwrap();
        let theta = vec![0.0; sc.params.num_ris_elements];
        for q in 0..sc.num_zones() {
            let h = sc.effective_channel(q, &theta);
            // h_r^H G + h_d^H, assembled element by element.
            let hr = &sc.channels.ris_to_zone[q];
            let g = &sc.channels.bs_to_ris;
            let manual = DVector::from_fn(sc.params.num_bs_antennas, |k, _| {
                let mut acc = sc.channels.direct[q][k].conj();
                for m in 0..hr.len() {
                    acc += hr[m].conj() * g[(m, k)];
                }
                acc.conj()
            });
            assert!((h - manual).norm() < 1e-12);
        }
    }

    #[test]
    fn effective_channel_matches_omega_identity() {
        // h_q^H = t^H Omega_q + h_{d,q}^H for random (q, theta).
        let sc = build_scenario(&ScenarioParams::desk(), 5).unwrap();
        let m = sc.params.num_ris_elements;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let q = rng.gen_range(0..sc.num_zones());
            let theta: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let h = sc.effective_channel(q, &theta);
            let omega = sc.omega(q);
            // t_m = e^{-j theta_m}; row = t^H Omega + h_d^H.
            let t = DVector::from_fn(m, |i, _| Complex64::from_polar(1.0, -theta[i]));
            let row = omega.adjoint() * t + &sc.channels.direct[q];
            let rel = (h.clone() - &row).norm() / row.norm();
            assert!(rel < 1e-12, "relative error {rel}");
        }
    }

    #[test]
    fn snr_single_and_duplicated_beam() {
        let sc = build_scenario(&ScenarioParams::desk(), 4).unwrap();
        let theta = vec![0.0; sc.params.num_ris_elements];
        let n = sc.num_beams();
        let mut y = vec![false; n];
        y[3] = true;
        let h = sc.effective_channel(0, &theta);
        let c = h.dotc(&sc.codebook.beams[3]);
        let expect = c.norm_sqr() / sc.params.noise_power;
        assert_relative_eq!(sc.snr(0, &y, &theta).unwrap(), expect, max_relative = 1e-12);

        // Duplicating the active beam leaves the SNR unchanged.
        let mut sc2 = sc.clone();
        sc2.codebook.beams[4] = sc2.codebook.beams[3].clone();
        let mut y2 = y.clone();
        y2[4] = true;
        assert_relative_eq!(
            sc2.snr(0, &y2, &theta).unwrap(),
            expect,
            max_relative = 1e-12
        );
    }

    #[test]
    fn snr_matches_naive_loop() {
        let sc = build_scenario(&ScenarioParams::full_scale(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = sc.params.num_ris_elements;
        let theta: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let y: Vec<bool> = (0..sc.num_beams()).map(|_| rng.gen_bool(0.3)).collect();
        if y.iter().any(|&b| b) {
            for q in [0, 13, 39] {
                let mut num = 0.0;
                let mut cnt = 0usize;
                let h = sc.effective_channel(q, &theta);
                for (n, &b) in y.iter().enumerate() {
                    if b {
                        num += h.dotc(&sc.codebook.beams[n]).norm_sqr();
                        cnt += 1;
                    }
                }
                let oracle = num / (sc.params.noise_power * cnt as f64);
                assert_relative_eq!(
                    sc.snr(q, &y, &theta).unwrap(),
                    oracle,
                    max_relative = 1e-10
                );
            }
        }
    }

    #[test]
    fn snr_all_zero_beams_is_error() {
        let sc = build_scenario(&ScenarioParams::desk(), 0).unwrap();
        let y = vec![false; sc.num_beams()];
        let theta = vec![0.0; sc.params.num_ris_elements];
        assert!(matches!(
            sc.snr(0, &y, &theta),
            Err(ScenarioError::UndefinedSnr)
        ));
    }

    #[test]
    fn scenario_json_roundtrip() {
        let sc = build_scenario(&ScenarioParams::desk(), 8).unwrap();
        let json = serde_json::to_string(&sc).unwrap();
        let back: CellScenario = serde_json::from_str(&json).unwrap();
        assert_eq!(sc.channels.bs_to_ris, back.channels.bs_to_ris);
        assert_eq!(sc.channels.direct, back.channels.direct);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }
}
