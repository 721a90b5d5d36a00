#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rislab/complex_matrix.hpp"

namespace rislab {

/** 2-D point in meters. */
struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/**
 * Scenario geometry and propagation constants for the downlink simulator:
 * one multi-antenna base station, R reflecting surfaces, K single-antenna
 * users, clustered multipath with one geometric line-of-sight path per link.
 */
struct ScenarioConfig {
  std::size_t N_t = 8;   // BS antennas (uniform linear array)
  std::size_t R = 2;     // reflecting surfaces
  std::size_t K = 2;     // users
  std::size_t M_x = 4;   // surface grid width
  std::size_t M_y = 4;   // surface grid height
  Point2 bs_position{0.0, 0.0};
  std::vector<Point2> ris_positions{{30.0, 25.0}, {30.0, -25.0}};
  // User drop rectangle [x_min, x_max] x [y_min, y_max].
  double user_x_min = 40.0, user_x_max = 50.0;
  double user_y_min = -25.0, user_y_max = 25.0;
  std::size_t L = 3;            // paths per link (1 LoS + L-1 NLoS)
  double pl_a = 61.4;           // path-loss intercept, dB
  double pl_b = 2.0;            // path-loss exponent (decades)
  double shadow_sigma_db = 5.8; // lognormal shadowing std dev, dB
  double nlos_gain_factor = 0.01;
  double noise_power_dbm = -85.0;
  double carrier_ghz = 28.0;    // informational; element spacing fixed at half wavelength

  std::size_t M() const { return M_x * M_y; }
  /** Throws std::invalid_argument describing the first violated constraint. */
  void validate() const;
};

/** One draw of all BS->surface and surface->user channels plus geometry. */
struct ChannelRealization {
  // G[i]: M x N_t BS->surface_i channel.
  std::vector<ComplexMatrix> G;
  // h[i*K + k]: 1 x M surface_i->user_k channel.
  std::vector<ComplexMatrix> h;
  // H[i*K + k]: M x N_t cascaded channel diag(h_ik) * G_i.
  std::vector<ComplexMatrix> H;
  std::vector<Point2> user_positions;
  // distances[k*R + i]: user_k to surface_i, meters.
  std::vector<double> distances;

  const ComplexMatrix& h_of(std::size_t i, std::size_t k, std::size_t K) const {
    return h[i * K + k];
  }
  const ComplexMatrix& H_of(std::size_t i, std::size_t k, std::size_t K) const {
    return H[i * K + k];
  }
};

struct Dataset {
  ScenarioConfig scenario;
  std::vector<ChannelRealization> samples;
  std::uint64_t rng_seed = 0;
  std::uint64_t train_count = 0;
  std::uint64_t val_count = 0;
};

/** 10^((dbm - 30)/10): dBm to watts. */
double dbm_to_watts(double dbm);

/**
 * Half-wavelength uniform linear array response for directional cosine
 * phi in [-1, 1]: entry i in {n - (N-1)/2 : n = 0..N-1} is
 * (1/sqrt(N)) * exp(-j * pi * phi * i).  Unit Euclidean norm.
 */
ComplexMatrix steering_ula(std::size_t N, double phi);

/**
 * Uniform planar array response: kron(a_ula(M_x, phi1), a_ula(M_y, phi2)),
 * column vector of length M_x*M_y, unit norm.
 */
ComplexMatrix steering_upa(std::size_t M_x, std::size_t M_y, double phi1,
                           double phi2);

/**
 * Linear amplitude scale 10^(-PL/20) with PL = pl_a + 10*pl_b*log10(r) +
 * shadowing_db (dB).  The complex path gain drawn as amplitude * CN(0,1) then
 * has variance 10^(-0.1*PL).
 */
double path_loss_amplitude(double r_meters, double shadowing_db, double pl_a,
                           double pl_b);

/**
 * Draws one channel realization: user positions uniform in the user
 * rectangle; per link one geometric LoS path plus L-1 NLoS paths with
 * uniformly drawn directional cosines; LoS gains CN(0, 10^(-0.1*PL)) with
 * lognormal shadowing, NLoS gains additionally scaled by nlos_gain_factor.
 * BS->surface paths carry the aperture factor sqrt(M*N_t) so that co-phased
 * beamforming gains scale with the array sizes.  The RNG draw order is fixed
 * and its draw count is independent of M and N_t, so equal seeds pair the
 * same large-scale fading across array-size sweeps.
 */
ChannelRealization sample_realization(const ScenarioConfig& sc, std::mt19937_64& rng);

/** Directional cosine of the line from `from` to `to` against the array axis (y). */
double los_cosine(const Point2& from, const Point2& to);

/** Deterministic parallel dataset generation with per-sample substreams. */
Dataset generate_dataset(const ScenarioConfig& sc, std::size_t n_samples,
                         std::uint64_t seed, std::uint64_t train_count,
                         std::uint64_t val_count);

/**
 * Little-endian binary serialization.  Layout: magic "RISD", version, scenario
 * block, seed, counts, then per sample the G and h matrices as interleaved
 * (re, im) doubles followed by user positions.  Cascades and distances are
 * rebuilt on read through the same code path used at generation time, so a
 * round trip is bit-identical.
 */
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace rislab
