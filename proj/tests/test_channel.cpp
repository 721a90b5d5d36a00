#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "rislab/channel.hpp"
#include "test_support.hpp"

using namespace rislab;

namespace {

double cm_unit_norm_error(const ComplexMatrix& a) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) sq += std::norm(a.data()[i]);
  return std::abs(std::sqrt(sq) - 1.0);
}

/** Flips one byte of a file in place. */
void corrupt_byte(const std::string& path, std::size_t offset) {
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(static_cast<std::streamoff>(offset));
  char c = 0;
  f.read(&c, 1);
  c = static_cast<char>(c ^ 0x5a);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(&c, 1);
}

bool same_realization(const ChannelRealization& a, const ChannelRealization& b) {
  if (a.G.size() != b.G.size() || a.h.size() != b.h.size() ||
      a.H.size() != b.H.size() || a.distances != b.distances) {
    return false;
  }
  for (std::size_t i = 0; i < a.user_positions.size(); ++i) {
    if (a.user_positions[i].x != b.user_positions[i].x ||
        a.user_positions[i].y != b.user_positions[i].y) {
      return false;
    }
  }
  const auto same = [](const ComplexMatrix& x, const ComplexMatrix& y) {
    if (!x.same_shape(y)) return false;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (x.data()[i] != y.data()[i]) return false;
    }
    return true;
  };
  for (std::size_t i = 0; i < a.G.size(); ++i) {
    if (!same(a.G[i], b.G[i])) return false;
  }
  for (std::size_t i = 0; i < a.h.size(); ++i) {
    if (!same(a.h[i], b.h[i]) || !same(a.H[i], b.H[i])) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("channel") {

TEST_CASE("linear array response matches its defining values") {
  const ComplexMatrix a1 = steering_ula(1, 0.7);
  CHECK(a1.numel() == 1);
  CHECK(std::abs(a1.at(0, 0) - cplx(1.0, 0.0)) == 0.0);

  const ComplexMatrix a2 = steering_ula(2, 0.0);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(a2.at(0, 0) - cplx(inv_sqrt2, 0.0)) <= 1e-15);
  CHECK(std::abs(a2.at(1, 0) - cplx(inv_sqrt2, 0.0)) <= 1e-15);

  // N = 4, phi = 0.5: entry n is exp(-j pi 0.5 (n - 1.5)) / 2.
  const ComplexMatrix a4 = steering_ula(4, 0.5);
  const double pi = std::acos(-1.0);
  for (std::size_t n = 0; n < 4; ++n) {
    const cplx want =
        std::polar(0.5, -pi * 0.5 * (static_cast<double>(n) - 1.5));
    CHECK(std::abs(a4.at(n, 0) - want) <= 1e-14);
  }

  CHECK_THROWS_AS(steering_ula(0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(steering_ula(4, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(steering_ula(4, -1.0001), std::invalid_argument);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    CHECK(cm_unit_norm_error(steering_ula(8, u(rng))) <= 1e-12);
  }
}

TEST_CASE("planar array response is the grid product") {
  const ComplexMatrix a11 = steering_upa(1, 1, 0.3, -0.8);
  CHECK(std::abs(a11.at(0, 0) - cplx(1.0, 0.0)) == 0.0);

  const ComplexMatrix flat = steering_upa(3, 2, 0.0, 0.0);
  for (std::size_t m = 0; m < 6; ++m) {
    CHECK(std::abs(flat.at(m, 0) - cplx(1.0 / std::sqrt(6.0), 0.0)) <= 1e-15);
  }

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const auto& dims : {std::pair<std::size_t, std::size_t>{2, 2},
                          std::pair<std::size_t, std::size_t>{3, 2},
                          std::pair<std::size_t, std::size_t>{4, 4}}) {
    const double p1 = u(rng), p2 = u(rng);
    const ComplexMatrix a = steering_upa(dims.first, dims.second, p1, p2);
    const auto ref = oracles::naive_upa(dims.first, dims.second, p1, p2);
    REQUIRE(a.numel() == ref.size());
    for (std::size_t m = 0; m < ref.size(); ++m) {
      CHECK(std::abs(a.at(m, 0) - ref[m]) <= 1e-14);
    }
    CHECK(cm_unit_norm_error(a) <= 1e-12);
  }
}

TEST_CASE("path loss amplitude matches the dB law") {
  // 61.4 + 20 log10(10) = 81.4 dB at 10 m; exactly the intercept at 1 m.
  CHECK(path_loss_amplitude(10.0, 0.0, 61.4, 2.0) ==
        doctest::Approx(std::pow(10.0, -81.4 / 20.0)).epsilon(1e-12));
  CHECK(path_loss_amplitude(1.0, 0.0, 61.4, 2.0) ==
        doctest::Approx(std::pow(10.0, -61.4 / 20.0)).epsilon(1e-12));
  CHECK_THROWS_AS(path_loss_amplitude(0.0, 0.0, 61.4, 2.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(path_loss_amplitude(-3.0, 0.0, 61.4, 2.0),
                  std::invalid_argument);
}

TEST_CASE("shadowed amplitude variance matches the lognormal moment") {
  const double sigma_db = 5.8;
  const double a0 = path_loss_amplitude(10.0, 0.0, 61.4, 2.0);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> shadow(0.0, sigma_db);
  const std::size_t n = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = path_loss_amplitude(10.0, shadow(rng), 61.4, 2.0);
    sum += a;
    sum_sq += a * a;
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sum_sq / static_cast<double>(n) - mean * mean;
  const double want = oracles::lognormal_amplitude_variance(a0, sigma_db);
  CHECK(std::abs(var - want) <= 0.03 * want);
}

TEST_CASE("decibel-milliwatt conversion") {
  CHECK(dbm_to_watts(20.0) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(dbm_to_watts(30.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(dbm_to_watts(0.0) == doctest::Approx(1e-3).epsilon(1e-14));
}

TEST_CASE("line-of-sight cosine follows the geometry") {
  const Point2 bs{0.0, 0.0};
  const Point2 ris{30.0, 25.0};
  CHECK(los_cosine(bs, ris) == doctest::Approx(25.0 / std::sqrt(1525.0)));
  CHECK(los_cosine(ris, bs) == doctest::Approx(-25.0 / std::sqrt(1525.0)));
}

TEST_CASE("sampled realization has the advertised shapes and geometry") {
  const ScenarioConfig sc = testsup::desk_scenario();
  std::mt19937_64 rng(11);
  const ChannelRealization cr = sample_realization(sc, rng);

  REQUIRE(cr.G.size() == sc.R);
  REQUIRE(cr.h.size() == sc.R * sc.K);
  REQUIRE(cr.H.size() == sc.R * sc.K);
  REQUIRE(cr.user_positions.size() == sc.K);
  REQUIRE(cr.distances.size() == sc.K * sc.R);
  for (std::size_t i = 0; i < sc.R; ++i) {
    CHECK(cr.G[i].rows() == sc.M());
    CHECK(cr.G[i].cols() == sc.N_t);
    for (std::size_t k = 0; k < sc.K; ++k) {
      CHECK(cr.h_of(i, k, sc.K).rows() == 1);
      CHECK(cr.h_of(i, k, sc.K).cols() == sc.M());
      CHECK(cr.H_of(i, k, sc.K).rows() == sc.M());
      CHECK(cr.H_of(i, k, sc.K).cols() == sc.N_t);
    }
  }
  for (std::size_t k = 0; k < sc.K; ++k) {
    CHECK(cr.user_positions[k].x >= sc.user_x_min);
    CHECK(cr.user_positions[k].x <= sc.user_x_max);
    CHECK(cr.user_positions[k].y >= sc.user_y_min);
    CHECK(cr.user_positions[k].y <= sc.user_y_max);
    for (std::size_t i = 0; i < sc.R; ++i) {
      CHECK(std::abs(cr.distances[k * sc.R + i] -
                     testsup::dist(cr.user_positions[k],
                                   sc.ris_positions[i])) <= 1e-12);
    }
  }
}

TEST_CASE("cascade entries equal the element-wise product") {
  const ScenarioConfig sc = testsup::tiny_scenario();
  std::mt19937_64 rng(12);
  const ChannelRealization cr = sample_realization(sc, rng);
  for (std::size_t i = 0; i < sc.R; ++i) {
    for (std::size_t k = 0; k < sc.K; ++k) {
      const ComplexMatrix& h = cr.h_of(i, k, sc.K);
      const ComplexMatrix& big = cr.H_of(i, k, sc.K);
      for (std::size_t m = 0; m < sc.M(); ++m) {
        for (std::size_t n = 0; n < sc.N_t; ++n) {
          const cplx want = h.at(0, m) * cr.G[i].at(m, n);
          CHECK(std::abs(big.at(m, n) - want) <=
                1e-12 * std::max(1.0, std::abs(want)));
        }
      }
    }
  }
}

TEST_CASE("single-path draw without shadowing is pure geometry") {
  ScenarioConfig sc = testsup::desk_scenario();
  sc.L = 1;
  sc.shadow_sigma_db = 0.0;
  std::mt19937_64 rng(13);
  const ChannelRealization cr = sample_realization(sc, rng);

  for (std::size_t i = 0; i < sc.R; ++i) {
    // G_i is a scaled outer product of the two line-of-sight responses.
    const ComplexMatrix a_ris = steering_upa(
        sc.M_x, sc.M_y, los_cosine(sc.ris_positions[i], sc.bs_position), 0.0);
    const ComplexMatrix a_bs =
        steering_ula(sc.N_t, los_cosine(sc.bs_position, sc.ris_positions[i]));
    cplx ratio(0.0, 0.0);
    for (std::size_t m = 0; m < sc.M(); ++m) {
      for (std::size_t n = 0; n < sc.N_t; ++n) {
        const cplx basis = a_ris.at(m, 0) * std::conj(a_bs.at(n, 0));
        const cplx r = cr.G[i].at(m, n) / basis;
        if (m == 0 && n == 0) {
          ratio = r;
          CHECK(std::abs(r) > 0.0);
        } else {
          CHECK(std::abs(r - ratio) <= 1e-10 * std::abs(ratio));
        }
      }
    }
    // Rank one: every 2x2 minor vanishes.
    const double scale = std::norm(cr.G[i].at(0, 0)) + std::norm(ratio);
    for (std::size_t m = 1; m < sc.M(); ++m) {
      for (std::size_t n = 1; n < sc.N_t; ++n) {
        const cplx minor = cr.G[i].at(0, 0) * cr.G[i].at(m, n) -
                           cr.G[i].at(0, n) * cr.G[i].at(m, 0);
        CHECK(std::abs(minor) <= 1e-10 * std::max(1e-300, scale));
      }
    }

    // Surface-to-user rows align with the conjugated departure response.
    for (std::size_t k = 0; k < sc.K; ++k) {
      const ComplexMatrix a = steering_upa(
          sc.M_x, sc.M_y,
          los_cosine(sc.ris_positions[i], cr.user_positions[k]), 0.0);
      const ComplexMatrix& h = cr.h_of(i, k, sc.K);
      const cplx first = h.at(0, 0) / std::conj(a.at(0, 0));
      for (std::size_t m = 1; m < sc.M(); ++m) {
        const cplx r = h.at(0, m) / std::conj(a.at(m, 0));
        CHECK(std::abs(r - first) <= 1e-10 * std::abs(first));
      }
    }
  }
}

TEST_CASE("mean squared link norm matches the per-path budget") {
  // Moderate shadowing keeps the lognormal second moment's Monte Carlo
  // error near 1%, so the 5% tolerance sits several standard errors out.
  ScenarioConfig sc = testsup::desk_scenario();
  sc.shadow_sigma_db = 3.0;
  const double r = testsup::dist(sc.bs_position, sc.ris_positions[0]);
  const double want = oracles::expected_g_frobenius_sq(
      sc.M(), sc.N_t, r, sc.pl_a, sc.pl_b, sc.shadow_sigma_db,
      sc.nlos_gain_factor, sc.L);

  std::mt19937_64 rng(77);
  const std::size_t n = 10000;
  double acc = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const ChannelRealization cr = sample_realization(sc, rng);
    const double fn = frobenius_norm(cr.G[0]);
    acc += fn * fn;
  }
  const double mean = acc / static_cast<double>(n);
  CHECK(std::abs(mean - want) <= 0.05 * want);
}

TEST_CASE("dataset generation is reproducible and seed-sensitive") {
  const ScenarioConfig sc = testsup::tiny_scenario();
  const Dataset a = generate_dataset(sc, 50, 2024, 40, 10);
  const Dataset b = generate_dataset(sc, 50, 2024, 40, 10);
  REQUIRE(a.samples.size() == 50);
  for (std::size_t s = 0; s < a.samples.size(); ++s) {
    CHECK(same_realization(a.samples[s], b.samples[s]));
  }
  const Dataset c = generate_dataset(sc, 50, 2025, 40, 10);
  bool any_diff = false;
  for (std::size_t s = 0; s < a.samples.size() && !any_diff; ++s) {
    any_diff = !same_realization(a.samples[s], c.samples[s]);
  }
  CHECK(any_diff);
}

TEST_CASE("equal seeds pair the fading across array sizes") {
  // The generator's draw count does not depend on M or N_t, so sweeps over
  // the array sizes share user drops and distances sample by sample.
  ScenarioConfig small = testsup::desk_scenario();
  small.M_x = 3;
  small.M_y = 3;
  small.N_t = 4;
  ScenarioConfig big = testsup::desk_scenario();
  big.M_x = 5;
  big.M_y = 5;
  big.N_t = 16;
  const Dataset a = generate_dataset(small, 20, 7, 16, 4);
  const Dataset b = generate_dataset(big, 20, 7, 16, 4);
  for (std::size_t s = 0; s < 20; ++s) {
    CHECK(a.samples[s].distances == b.samples[s].distances);
    for (std::size_t k = 0; k < small.K; ++k) {
      CHECK(a.samples[s].user_positions[k].x ==
            b.samples[s].user_positions[k].x);
      CHECK(a.samples[s].user_positions[k].y ==
            b.samples[s].user_positions[k].y);
    }
  }
}

TEST_CASE("dataset serialization round trips bit-identically") {
  const ScenarioConfig sc = testsup::tiny_scenario();
  const Dataset ds = generate_dataset(sc, 10, 5, 8, 2);
  const std::string path = testsup::scratch_path("roundtrip.bin");
  write_dataset(ds, path);
  const Dataset back = read_dataset(path);
  CHECK(back.rng_seed == ds.rng_seed);
  CHECK(back.train_count == ds.train_count);
  CHECK(back.val_count == ds.val_count);
  CHECK(back.scenario.N_t == sc.N_t);
  CHECK(back.scenario.M_x == sc.M_x);
  CHECK(back.scenario.pl_a == sc.pl_a);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t s = 0; s < ds.samples.size(); ++s) {
    CHECK(same_realization(back.samples[s], ds.samples[s]));
  }
  std::filesystem::remove(path);
}

TEST_CASE("corrupted or truncated dataset files are rejected") {
  const ScenarioConfig sc = testsup::tiny_scenario();
  const Dataset ds = generate_dataset(sc, 4, 5, 3, 1);
  const std::string path = testsup::scratch_path("corrupt.bin");

  write_dataset(ds, path);
  corrupt_byte(path, 0);  // magic
  CHECK_THROWS_AS(read_dataset(path), std::runtime_error);

  write_dataset(ds, path);
  corrupt_byte(path, 4);  // version
  CHECK_THROWS_AS(read_dataset(path), std::runtime_error);

  write_dataset(ds, path);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 7);
  CHECK(testsup::throws_containing<std::runtime_error>(
      [&] { read_dataset(path); }, "truncat"));

  write_dataset(ds, path);
  {
    std::ofstream f(path, std::ios::app | std::ios::binary);
    f.put('\0');
  }
  CHECK_THROWS_AS(read_dataset(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("file size follows the layout arithmetic") {
  const ScenarioConfig sc = testsup::tiny_scenario();
  const std::size_t n = 10000;
  const Dataset ds = generate_dataset(sc, n, 3, 9000, 1000);
  const std::string path = testsup::scratch_path("layout.bin");
  write_dataset(ds, path);
  const std::uintmax_t header = 160 + 16 * sc.R;
  const std::uintmax_t per_sample =
      16 * (sc.R * sc.M() * sc.N_t + sc.R * sc.K * sc.M() + sc.K);
  CHECK(std::filesystem::file_size(path) == header + n * per_sample);
  std::filesystem::remove(path);
}

}  // TEST_SUITE("channel")
