#include "rislab/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rislab {

namespace {

constexpr char kMagic[4] = {'H', 'G', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : os_(path, std::ios::binary), path_(path) {
    if (!os_) throw std::runtime_error("cannot open for writing: " + path);
  }
  void bytes(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u8(std::uint8_t v) { bytes(&v, sizeof v); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const RealTensor& t) {
    u64(t.rows());
    u64(t.cols());
    bytes(t.data(), t.numel() * sizeof(double));
  }
  void named_tensors(const std::map<std::string, RealTensor>& ts) {
    u64(ts.size());
    for (const auto& [name, t] : ts) {
      str(name);
      tensor(t);
    }
  }
  void finish() {
    os_.flush();
    if (!os_) throw std::runtime_error("write failed: " + path_);
  }

 private:
  std::ofstream os_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : is_(path, std::ios::binary), path_(path) {
    if (!is_) throw std::runtime_error("cannot open for reading: " + path);
  }
  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw std::runtime_error("truncated checkpoint " + path_);
    }
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, sizeof v); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, sizeof v); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, sizeof v); return v; }
  double f64() { double v; bytes(&v, sizeof v); return v; }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 20)) throw std::runtime_error("oversized name in " + path_);
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  RealTensor tensor() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (rows == 0 || cols == 0 || rows * cols > (1ull << 32)) {
      throw std::runtime_error("bad tensor shape in " + path_);
    }
    RealTensor t(rows, cols);
    bytes(t.data(), t.numel() * sizeof(double));
    return t;
  }
  std::map<std::string, RealTensor> named_tensors() {
    const std::uint64_t n = u64();
    std::map<std::string, RealTensor> out;
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name = str();
      out.emplace(std::move(name), tensor());
    }
    return out;
  }
  bool at_eof() {
    is_.peek();
    return is_.eof();
  }

 private:
  std::ifstream is_;
  std::string path_;
};

}  // namespace

void save_model(const Model& model, const std::string& path,
                const AdamState* adam) {
  model.config.validate();
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(model.kind));
  w.u32(static_cast<std::uint32_t>(model.config.hidden));
  w.u32(static_cast<std::uint32_t>(model.config.depth));
  w.u32(static_cast<std::uint32_t>(model.config.N_t));
  w.u32(static_cast<std::uint32_t>(model.config.M));
  w.u32(static_cast<std::uint32_t>(model.config.R));
  w.u32(static_cast<std::uint32_t>(model.config.K));
  w.f64(model.config.leaky_slope);
  w.f64(model.eta);
  w.f64(model.input_scale);
  w.f64(model.rate_scale);
  w.f64(model.pmax_dbm);
  w.u32(static_cast<std::uint32_t>(model.label_mode));
  w.u32(static_cast<std::uint32_t>(model.label_single_index));
  w.u64(model.completed_epochs);
  w.named_tensors(model.params);
  if (adam != nullptr) {
    w.u8(1);
    w.u64(adam->step_count());
    w.named_tensors(adam->first_moments());
    w.named_tensors(adam->second_moments());
  } else {
    w.u8(0);
  }
  w.finish();
}

Model load_model(const std::string& path, AdamState* adam) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("bad checkpoint magic in " + path);
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version) + " in " + path);
  }
  Model model;
  const std::uint32_t kind = r.u32();
  if (kind > 1) throw std::runtime_error("unknown model kind in " + path);
  model.kind = static_cast<Model::Kind>(kind);
  model.config.hidden = r.u32();
  model.config.depth = r.u32();
  model.config.N_t = r.u32();
  model.config.M = r.u32();
  model.config.R = r.u32();
  model.config.K = r.u32();
  model.config.leaky_slope = r.f64();
  model.eta = r.f64();
  model.input_scale = r.f64();
  model.rate_scale = r.f64();
  model.pmax_dbm = r.f64();
  const std::uint32_t label_mode = r.u32();
  if (label_mode > 2) throw std::runtime_error("unknown label mode in " + path);
  model.label_mode = static_cast<CaseMode>(label_mode);
  model.label_single_index = r.u32();
  model.completed_epochs = r.u64();
  model.config.validate();
  model.params = r.named_tensors();
  const std::uint8_t has_adam = r.u8();
  if (has_adam == 1) {
    const std::uint64_t steps = r.u64();
    auto m = r.named_tensors();
    auto v = r.named_tensors();
    if (adam != nullptr) {
      adam->set_step_count(steps);
      adam->first_moments() = std::move(m);
      adam->second_moments() = std::move(v);
    }
  } else if (has_adam != 0) {
    throw std::runtime_error("corrupt optimizer flag in " + path);
  }
  if (!r.at_eof()) {
    throw std::runtime_error("trailing bytes in checkpoint " + path);
  }
  return model;
}

}  // namespace rislab
