#include "fbsde/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "fbsde/errors.hpp"

namespace fbsde {

namespace {

constexpr char kMagic[8] = {'F', 'B', 'S', 'D', 'E', 'C', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_array(std::ostream& out, const std::string& name, const Mat& m) {
  put_string(out, name);
  put_u64(out, static_cast<std::uint64_t>(m.rows()));
  put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
}

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw ConfigError("checkpoint '" + path + "': " + what);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) bad(path, "truncated file");
  return v;
}
std::uint64_t get_u64(std::istream& in, const std::string& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) bad(path, "truncated file");
  return v;
}
std::string get_string(std::istream& in, const std::string& path) {
  const std::uint32_t len = get_u32(in, path);
  if (len > (1u << 20)) bad(path, "implausible string length");
  std::string s(len, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(len))) bad(path, "truncated file");
  return s;
}

}  // namespace

const Mat* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : arrays) {
    if (n == name) return &m;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const std::string& digest, std::uint64_t iteration,
                     const NetworkParams& params, const AdamState* adam) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_string(out, digest);
  put_u64(out, iteration);

  const std::vector<NamedArray> arrays = named_arrays(params);
  std::uint32_t count = static_cast<std::uint32_t>(arrays.size());
  if (adam) count = count * 3 + 1;
  put_u32(out, count);
  for (const NamedArray& a : arrays) put_array(out, a.name, *a.mat);
  if (adam) {
    if (adam->m.size() != arrays.size() || adam->v.size() != arrays.size()) {
      throw ConfigError("checkpoint: optimizer state does not match parameter layout");
    }
    for (std::size_t i = 0; i < arrays.size(); ++i) put_array(out, "adam.m." + arrays[i].name, adam->m[i]);
    for (std::size_t i = 0; i < arrays.size(); ++i) put_array(out, "adam.v." + arrays[i].name, adam->v[i]);
    Mat t(1, 1);
    t(0, 0) = static_cast<double>(adam->t);
    put_array(out, "adam.t", t);
  }
  out.flush();
  if (!out) throw ConfigError("write failed for checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) bad(path, "cannot open");
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    bad(path, "bad magic (not a checkpoint file)");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != kVersion) bad(path, "unsupported format version " + std::to_string(version));

  Checkpoint cp;
  cp.digest = get_string(in, path);
  cp.iteration = get_u64(in, path);
  const std::uint32_t count = get_u32(in, path);
  if (count > (1u << 16)) bad(path, "implausible array count");
  cp.arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(in, path);
    const std::uint64_t rows = get_u64(in, path);
    const std::uint64_t cols = get_u64(in, path);
    if (rows > (1u << 24) || cols > (1u << 24)) bad(path, "implausible array shape");
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::uint64_t r = 0; r < rows; ++r) {
      for (std::uint64_t c = 0; c < cols; ++c) {
        double v = 0.0;
        if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) bad(path, "truncated file");
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
      }
    }
    cp.arrays.emplace_back(name, std::move(m));
  }
  return cp;
}

NetworkParams params_from_checkpoint(const NetworkSpec& spec, const Checkpoint& cp) {
  NetworkParams params = init_params(spec, 0);
  for (const NamedArray& a : named_arrays(params)) {
    const Mat* stored = cp.find(a.name);
    if (!stored) throw ConfigError("checkpoint: missing parameter array '" + a.name + "'");
    if (stored->rows() != a.mat->rows() || stored->cols() != a.mat->cols()) {
      throw ConfigError("checkpoint: shape mismatch for '" + a.name +
                        "' (network config does not match the checkpoint)");
    }
    *a.mat = *stored;
  }
  return params;
}

AdamState adam_from_checkpoint(const NetworkParams& params, const Checkpoint& cp) {
  AdamState st = AdamState::zero(params);
  const Mat* t = cp.find("adam.t");
  if (!t) return st;
  st.t = static_cast<long>((*t)(0, 0));
  const std::vector<NamedArray> arrays = named_arrays(params);
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const Mat* m = cp.find("adam.m." + arrays[i].name);
    const Mat* v = cp.find("adam.v." + arrays[i].name);
    if (!m || !v || m->rows() != st.m[i].rows() || m->cols() != st.m[i].cols() ||
        v->rows() != st.v[i].rows() || v->cols() != st.v[i].cols()) {
      throw ConfigError("checkpoint: incomplete optimizer state for '" + arrays[i].name + "'");
    }
    st.m[i] = *m;
    st.v[i] = *v;
  }
  return st;
}

}  // namespace fbsde
