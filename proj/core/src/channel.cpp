#include "rislab/channel.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "rislab/rng.hpp"
#include "rislab/threads.hpp"

namespace rislab {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kInvSqrt2 = 0.70710678118654752440;

double distance(const Point2& a, const Point2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

/** Complex CN(0,1) draw: (n1 + j n2)/sqrt(2). Consumes two normals. */
cplx draw_cn(std::mt19937_64& rng) {
  const double re = draw_normal(rng);
  const double im = draw_normal(rng);
  return cplx(re * kInvSqrt2, im * kInvSqrt2);
}

/** G_i += beta * a_ris * a_bs^H (outer product of steering columns). */
void add_outer(ComplexMatrix& G, cplx beta, const ComplexMatrix& a_ris,
               const ComplexMatrix& a_bs) {
  const std::size_t M = a_ris.numel();
  const std::size_t N = a_bs.numel();
  for (std::size_t m = 0; m < M; ++m) {
    const cplx lm = beta * a_ris.data()[m];
    for (std::size_t n = 0; n < N; ++n) {
      G.at(m, n) += lm * std::conj(a_bs.data()[n]);
    }
  }
}

}  // namespace

void ScenarioConfig::validate() const {
  if (N_t < 1 || R < 1 || K < 1 || M_x < 1 || M_y < 1) {
    throw std::invalid_argument("scenario: all array/user counts must be >= 1");
  }
  if (ris_positions.size() != R) {
    throw std::invalid_argument("scenario: expected " + std::to_string(R) +
                                " surface positions, got " +
                                std::to_string(ris_positions.size()));
  }
  if (!(user_x_max > user_x_min) || !(user_y_max > user_y_min)) {
    throw std::invalid_argument("scenario: user region is degenerate");
  }
  if (L < 1) throw std::invalid_argument("scenario: path count L must be >= 1");
  if (shadow_sigma_db < 0.0) {
    throw std::invalid_argument("scenario: shadowing sigma must be >= 0 dB");
  }
  if (nlos_gain_factor < 0.0) {
    throw std::invalid_argument("scenario: NLoS gain factor must be >= 0");
  }
}

double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

ComplexMatrix steering_ula(std::size_t N, double phi) {
  if (N == 0) throw std::invalid_argument("steering_ula: zero antenna count");
  if (phi < -1.0 || phi > 1.0) {
    throw std::invalid_argument("steering_ula: directional cosine " +
                                std::to_string(phi) + " outside [-1, 1]");
  }
  ComplexMatrix a(N, 1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(N));
  const double center = (static_cast<double>(N) - 1.0) / 2.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double idx = static_cast<double>(n) - center;
    const double phase = -kPi * phi * idx;
    a.at(n, 0) = cplx(scale * std::cos(phase), scale * std::sin(phase));
  }
  return a;
}

ComplexMatrix steering_upa(std::size_t M_x, std::size_t M_y, double phi1,
                           double phi2) {
  if (M_x == 0 || M_y == 0) {
    throw std::invalid_argument("steering_upa: zero grid dimension");
  }
  const ComplexMatrix ax = steering_ula(M_x, phi1);
  const ComplexMatrix ay = steering_ula(M_y, phi2);
  ComplexMatrix a(M_x * M_y, 1);
  for (std::size_t ix = 0; ix < M_x; ++ix) {
    for (std::size_t iy = 0; iy < M_y; ++iy) {
      a.at(ix * M_y + iy, 0) = ax.at(ix, 0) * ay.at(iy, 0);
    }
  }
  return a;
}

double path_loss_amplitude(double r_meters, double shadowing_db, double pl_a,
                           double pl_b) {
  if (!(r_meters > 0.0)) {
    throw std::invalid_argument("path_loss_amplitude: distance must be positive");
  }
  const double pl_db = pl_a + 10.0 * pl_b * std::log10(r_meters) + shadowing_db;
  return std::pow(10.0, -pl_db / 20.0);
}

double los_cosine(const Point2& from, const Point2& to) {
  const double d = distance(from, to);
  return (to.y - from.y) / d;
}

ChannelRealization sample_realization(const ScenarioConfig& sc,
                                      std::mt19937_64& rng) {
  sc.validate();
  const std::size_t M = sc.M();
  const std::size_t R = sc.R;
  const std::size_t K = sc.K;

  ChannelRealization out;
  out.G.assign(R, ComplexMatrix(M, sc.N_t));
  out.h.assign(R * K, ComplexMatrix(1, M));
  out.H.reserve(R * K);
  out.user_positions.resize(K);
  out.distances.resize(K * R);

  // Draw order is part of the reproducibility contract: user positions first,
  // then the BS->surface links, then the surface->user links.  The number of
  // engine draws per sample does not depend on M or N_t, so equal seeds pair
  // the same positions, shadowing, and path gains across array-size sweeps.
  for (std::size_t k = 0; k < K; ++k) {
    out.user_positions[k].x = draw_uniform(rng, sc.user_x_min, sc.user_x_max);
    out.user_positions[k].y = draw_uniform(rng, sc.user_y_min, sc.user_y_max);
  }

  // BS->surface links carry the aperture factor sqrt(M*N_t): per-element
  // capture keeps the same scale while co-phased beamforming gains grow with
  // both array sizes.
  const double aperture = std::sqrt(static_cast<double>(M * sc.N_t));
  for (std::size_t i = 0; i < R; ++i) {
    const Point2& ris = sc.ris_positions[i];
    const double r_bs = distance(sc.bs_position, ris);
    const double dep_los = los_cosine(sc.bs_position, ris);
    const double arr_los = los_cosine(ris, sc.bs_position);
    {
      const double xi = sc.shadow_sigma_db * draw_normal(rng);
      const cplx beta = path_loss_amplitude(r_bs, xi, sc.pl_a, sc.pl_b) *
                        aperture * draw_cn(rng);
      add_outer(out.G[i], beta, steering_upa(sc.M_x, sc.M_y, arr_los, 0.0),
                steering_ula(sc.N_t, dep_los));
    }
    for (std::size_t p = 1; p < sc.L; ++p) {
      const double dep = draw_uniform(rng, -1.0, 1.0);
      const double arr1 = draw_uniform(rng, -1.0, 1.0);
      const double arr2 = draw_uniform(rng, -1.0, 1.0);
      const double xi = sc.shadow_sigma_db * draw_normal(rng);
      const cplx beta = path_loss_amplitude(r_bs, xi, sc.pl_a, sc.pl_b) *
                        aperture * sc.nlos_gain_factor * draw_cn(rng);
      add_outer(out.G[i], beta, steering_upa(sc.M_x, sc.M_y, arr1, arr2),
                steering_ula(sc.N_t, dep));
    }
  }

  for (std::size_t i = 0; i < R; ++i) {
    const Point2& ris = sc.ris_positions[i];
    for (std::size_t k = 0; k < K; ++k) {
      const Point2& user = out.user_positions[k];
      const double r_uk = distance(user, ris);
      out.distances[k * R + i] = r_uk;
      ComplexMatrix& hv = out.h[i * K + k];
      {
        const double dep_los = los_cosine(ris, user);
        const double xi = sc.shadow_sigma_db * draw_normal(rng);
        const cplx beta =
            path_loss_amplitude(r_uk, xi, sc.pl_a, sc.pl_b) * draw_cn(rng);
        const ComplexMatrix a = steering_upa(sc.M_x, sc.M_y, dep_los, 0.0);
        for (std::size_t m = 0; m < M; ++m) {
          hv.at(0, m) += beta * std::conj(a.at(m, 0));
        }
      }
      for (std::size_t p = 1; p < sc.L; ++p) {
        const double dep1 = draw_uniform(rng, -1.0, 1.0);
        const double dep2 = draw_uniform(rng, -1.0, 1.0);
        const double xi = sc.shadow_sigma_db * draw_normal(rng);
        const cplx beta = path_loss_amplitude(r_uk, xi, sc.pl_a, sc.pl_b) *
                          sc.nlos_gain_factor * draw_cn(rng);
        const ComplexMatrix a = steering_upa(sc.M_x, sc.M_y, dep1, dep2);
        for (std::size_t m = 0; m < M; ++m) {
          hv.at(0, m) += beta * std::conj(a.at(m, 0));
        }
      }
    }
  }

  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      out.H.push_back(multiply(diag_from_vector(out.h[i * K + k]), out.G[i]));
    }
  }
  return out;
}

Dataset generate_dataset(const ScenarioConfig& sc, std::size_t n_samples,
                         std::uint64_t seed, std::uint64_t train_count,
                         std::uint64_t val_count) {
  sc.validate();
  if (n_samples == 0) throw std::invalid_argument("generate_dataset: empty dataset");
  if (train_count + val_count != n_samples) {
    throw std::invalid_argument("generate_dataset: split " +
                                std::to_string(train_count) + "+" +
                                std::to_string(val_count) + " != " +
                                std::to_string(n_samples));
  }
  Dataset ds;
  ds.scenario = sc;
  ds.rng_seed = seed;
  ds.train_count = train_count;
  ds.val_count = val_count;
  ds.samples.resize(n_samples);
  parallel_for(n_samples, [&](std::size_t idx) {
    std::mt19937_64 rng(substream_seed(seed, idx));
    ds.samples[idx] = sample_realization(sc, rng);
  });
  return ds;
}

// ---------------------------------------------------------------------------
// Serialization (little-endian host assumed; layout documented in the header).

namespace {

constexpr char kMagic[4] = {'R', 'I', 'S', 'D'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : os_(path, std::ios::binary) {
    if (!os_) throw std::runtime_error("cannot open for writing: " + path);
  }
  void bytes(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void cmat(const ComplexMatrix& m) {
    for (std::size_t i = 0; i < m.numel(); ++i) {
      f64(m.data()[i].real());
      f64(m.data()[i].imag());
    }
  }
  void close(const std::string& path) {
    os_.flush();
    if (!os_) throw std::runtime_error("write failed: " + path);
  }

 private:
  std::ofstream os_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : is_(path, std::ios::binary), path_(path) {
    if (!is_) throw std::runtime_error("cannot open for reading: " + path);
  }
  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw std::runtime_error("truncated dataset file " + path_ + " at offset " +
                               std::to_string(offset_));
    }
    offset_ += n;
  }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, sizeof v); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, sizeof v); return v; }
  double f64() { double v; bytes(&v, sizeof v); return v; }
  void cmat(ComplexMatrix& m) {
    for (std::size_t i = 0; i < m.numel(); ++i) {
      const double re = f64();
      const double im = f64();
      m.data()[i] = cplx(re, im);
    }
  }
  std::size_t offset() const { return offset_; }
  bool at_eof() {
    is_.peek();
    return is_.eof();
  }

 private:
  std::ifstream is_;
  std::string path_;
  std::size_t offset_ = 0;
};

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
  ds.scenario.validate();
  if (ds.samples.empty()) throw std::invalid_argument("write_dataset: no samples");
  const ScenarioConfig& sc = ds.scenario;
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(sc.N_t));
  w.u32(static_cast<std::uint32_t>(sc.R));
  w.u32(static_cast<std::uint32_t>(sc.K));
  w.u32(static_cast<std::uint32_t>(sc.M_x));
  w.u32(static_cast<std::uint32_t>(sc.M_y));
  w.f64(sc.bs_position.x);
  w.f64(sc.bs_position.y);
  for (const Point2& p : sc.ris_positions) {
    w.f64(p.x);
    w.f64(p.y);
  }
  w.f64(sc.user_x_min);
  w.f64(sc.user_x_max);
  w.f64(sc.user_y_min);
  w.f64(sc.user_y_max);
  w.u32(static_cast<std::uint32_t>(sc.L));
  w.f64(sc.pl_a);
  w.f64(sc.pl_b);
  w.f64(sc.shadow_sigma_db);
  w.f64(sc.nlos_gain_factor);
  w.f64(sc.noise_power_dbm);
  w.f64(sc.carrier_ghz);
  w.u64(ds.rng_seed);
  w.u64(static_cast<std::uint64_t>(ds.samples.size()));
  w.u64(ds.train_count);
  w.u64(ds.val_count);
  for (const ChannelRealization& s : ds.samples) {
    for (std::size_t i = 0; i < sc.R; ++i) w.cmat(s.G[i]);
    for (std::size_t i = 0; i < sc.R; ++i) {
      for (std::size_t k = 0; k < sc.K; ++k) w.cmat(s.h[i * sc.K + k]);
    }
    for (std::size_t k = 0; k < sc.K; ++k) {
      w.f64(s.user_positions[k].x);
      w.f64(s.user_positions[k].y);
    }
  }
  w.close(path);
}

Dataset read_dataset(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("bad dataset magic in " + path + " at offset 0");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("unsupported dataset version " +
                             std::to_string(version) + " in " + path);
  }
  Dataset ds;
  ScenarioConfig& sc = ds.scenario;
  sc.N_t = r.u32();
  sc.R = r.u32();
  sc.K = r.u32();
  sc.M_x = r.u32();
  sc.M_y = r.u32();
  sc.bs_position.x = r.f64();
  sc.bs_position.y = r.f64();
  sc.ris_positions.resize(sc.R);
  for (Point2& p : sc.ris_positions) {
    p.x = r.f64();
    p.y = r.f64();
  }
  sc.user_x_min = r.f64();
  sc.user_x_max = r.f64();
  sc.user_y_min = r.f64();
  sc.user_y_max = r.f64();
  sc.L = r.u32();
  sc.pl_a = r.f64();
  sc.pl_b = r.f64();
  sc.shadow_sigma_db = r.f64();
  sc.nlos_gain_factor = r.f64();
  sc.noise_power_dbm = r.f64();
  sc.carrier_ghz = r.f64();
  sc.validate();
  ds.rng_seed = r.u64();
  const std::uint64_t n = r.u64();
  ds.train_count = r.u64();
  ds.val_count = r.u64();
  if (n == 0) {
    throw std::runtime_error("dataset " + path + " declares zero samples");
  }
  if (ds.train_count + ds.val_count != n) {
    throw std::runtime_error("dataset " + path + " split does not cover samples");
  }
  const std::size_t M = sc.M();
  ds.samples.resize(n);
  for (std::uint64_t s = 0; s < n; ++s) {
    ChannelRealization& cr = ds.samples[s];
    cr.G.assign(sc.R, ComplexMatrix(M, sc.N_t));
    cr.h.assign(sc.R * sc.K, ComplexMatrix(1, M));
    cr.user_positions.resize(sc.K);
    cr.distances.resize(sc.K * sc.R);
    for (std::size_t i = 0; i < sc.R; ++i) r.cmat(cr.G[i]);
    for (std::size_t i = 0; i < sc.R; ++i) {
      for (std::size_t k = 0; k < sc.K; ++k) r.cmat(cr.h[i * sc.K + k]);
    }
    for (std::size_t k = 0; k < sc.K; ++k) {
      cr.user_positions[k].x = r.f64();
      cr.user_positions[k].y = r.f64();
    }
    cr.H.reserve(sc.R * sc.K);
    for (std::size_t i = 0; i < sc.R; ++i) {
      for (std::size_t k = 0; k < sc.K; ++k) {
        cr.H.push_back(multiply(diag_from_vector(cr.h[i * sc.K + k]), cr.G[i]));
      }
      for (std::size_t k = 0; k < sc.K; ++k) {
        cr.distances[k * sc.R + i] =
            std::hypot(cr.user_positions[k].x - sc.ris_positions[i].x,
                       cr.user_positions[k].y - sc.ris_positions[i].y);
      }
    }
    (void)s;
  }
  if (!r.at_eof()) {
    throw std::runtime_error("trailing bytes in dataset " + path + " at offset " +
                             std::to_string(r.offset()));
  }
  return ds;
}

}  // namespace rislab
