#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "affect/config.hpp"
#include "affect/tensor.hpp"

namespace affect {

// Checkpoint: text headers with raw little-endian f64 payloads per tensor.
// Tensors are keyed by hierarchical name; optimizer state rides along under
// an "opt." prefix. save(load(f)) == f byte for byte.
struct Checkpoint {
  TrainConfig config;
  int epoch = 0;
  std::string rng_state;
  std::map<std::string, Tensor> tensors;
};

namespace detail {

inline void write_f64_le(std::ostream& out, const real* data, std::size_t n) {
  static_assert(sizeof(real) == 8);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &data[i], 8);
    unsigned char buf[8];
    for (int b = 0; b < 8; ++b) buf[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
  }
}

inline void read_f64_le(std::istream& in, real* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[b]) << (8 * b);
    std::memcpy(&data[i], &bits, 8);
  }
}

inline std::string expect_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw IoError(std::string("checkpoint truncated, expected ") + what);
  return line;
}

}  // namespace detail

inline void save_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  out << "tensor " << name << "\n";
  out << "dtype f64\n";
  out << "shape";
  for (int d : t.shape()) out << " " << d;
  out << "\n";
  detail::write_f64_le(out, t.data(), t.numel());
  out << "\n";
}

inline std::pair<std::string, Tensor> load_tensor(std::istream& in) {
  std::string line = detail::expect_line(in, "tensor header");
  if (line.rfind("tensor ", 0) != 0) throw IoError("bad tensor header: " + line);
  const std::string name = line.substr(7);
  line = detail::expect_line(in, "dtype");
  if (line != "dtype f64") throw IoError("unsupported dtype line: " + line);
  line = detail::expect_line(in, "shape");
  if (line.rfind("shape", 0) != 0) throw IoError("bad shape line: " + line);
  std::istringstream ss(line.substr(5));
  Shape shape;
  int d;
  while (ss >> d) shape.push_back(d);
  Tensor t(shape);
  detail::read_f64_le(in, t.data(), t.numel());
  if (!in) throw IoError("checkpoint truncated inside tensor " + name);
  if (in.get() != '\n') throw IoError("missing terminator after tensor " + name);
  return {name, std::move(t)};
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << "AFFECTCKPT 1\n";
  const auto cfg = ckpt.config.to_map();
  out << "config " << cfg.size() << "\n";
  for (const auto& [k, v] : cfg) out << k << "=" << v << "\n";
  out << "epoch " << ckpt.epoch << "\n";
  out << "rng " << ckpt.rng_state << "\n";
  out << "tensors " << ckpt.tensors.size() << "\n";
  for (const auto& [name, t] : ckpt.tensors) save_tensor(out, name, t);
  if (!out) throw IoError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  Checkpoint ckpt;
  std::string line = detail::expect_line(in, "magic");
  if (line != "AFFECTCKPT 1") throw IoError("not an affect checkpoint: " + path);
  line = detail::expect_line(in, "config count");
  if (line.rfind("config ", 0) != 0) throw IoError("bad config header: " + line);
  const int n_cfg = std::stoi(line.substr(7));
  for (int i = 0; i < n_cfg; ++i)
    apply_config_line(ckpt.config, detail::expect_line(in, "config entry"));
  line = detail::expect_line(in, "epoch");
  if (line.rfind("epoch ", 0) != 0) throw IoError("bad epoch line: " + line);
  ckpt.epoch = std::stoi(line.substr(6));
  line = detail::expect_line(in, "rng");
  if (line.rfind("rng ", 0) != 0) throw IoError("bad rng line: " + line);
  ckpt.rng_state = line.substr(4);
  line = detail::expect_line(in, "tensor count");
  if (line.rfind("tensors ", 0) != 0) throw IoError("bad tensors header: " + line);
  const int n_tensors = std::stoi(line.substr(8));
  for (int i = 0; i < n_tensors; ++i) ckpt.tensors.insert(load_tensor(in));
  return ckpt;
}

}  // namespace affect
