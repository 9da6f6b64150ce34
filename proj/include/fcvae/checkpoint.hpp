#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fcvae/models.hpp"

namespace fcvae {

// Versioned binary checkpoint: per-net layer sizes plus raw little-endian
// doubles, so write -> read round-trips bit-exactly.
namespace ckpt_detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.write(b, 4);
}
inline std::uint32_t get_u32(std::istream& in) {
  char b[4];
  in.read(b, 4);
  std::uint32_t v;
  std::memcpy(&v, b, 4);
  return v;
}
inline void put_f64(std::ostream& out, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.write(b, 8);
}
inline double get_f64(std::istream& in) {
  char b[8];
  in.read(b, 8);
  double v;
  std::memcpy(&v, b, 8);
  return v;
}
inline void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& in) {
  std::uint32_t n = get_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

inline void put_net(std::ostream& out, const MlpParams& net) {
  put_u32(out, static_cast<std::uint32_t>(net.layer_sizes.size()));
  for (int s : net.layer_sizes) put_u32(out, static_cast<std::uint32_t>(s));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const Matrix& w = net.weights[l];
    for (Index i = 0; i < w.size(); ++i) put_f64(out, w.data()[i]);
    const Matrix& b = net.biases[l];
    for (Index i = 0; i < b.size(); ++i) put_f64(out, b.data()[i]);
  }
}

inline MlpParams get_net(std::istream& in) {
  MlpParams net;
  std::uint32_t n_sizes = get_u32(in);
  require(n_sizes >= 2 && n_sizes < 64, "checkpoint: corrupt layer count");
  for (std::uint32_t k = 0; k < n_sizes; ++k)
    net.layer_sizes.push_back(static_cast<int>(get_u32(in)));
  for (std::size_t l = 0; l + 1 < net.layer_sizes.size(); ++l) {
    int rows = net.layer_sizes[l], cols = net.layer_sizes[l + 1];
    Matrix w(rows, cols);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = get_f64(in);
    net.weights.push_back(std::move(w));
    Matrix b(1, cols);
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = get_f64(in);
    net.biases.push_back(std::move(b));
  }
  return net;
}

inline void put_dims(std::ostream& out, const FcvaeDims& d) {
  put_u32(out, static_cast<std::uint32_t>(d.d_x));
  put_u32(out, static_cast<std::uint32_t>(d.d_z));
  put_u32(out, static_cast<std::uint32_t>(d.xz_hidden));
  put_u32(out, static_cast<std::uint32_t>(d.tarnet_hidden));
  put_u32(out, static_cast<std::uint32_t>(d.rep));
}
inline FcvaeDims get_dims(std::istream& in) {
  FcvaeDims d;
  d.d_x = static_cast<int>(get_u32(in));
  d.d_z = static_cast<int>(get_u32(in));
  d.xz_hidden = static_cast<int>(get_u32(in));
  d.tarnet_hidden = static_cast<int>(get_u32(in));
  d.rep = static_cast<int>(get_u32(in));
  return d;
}

}  // namespace ckpt_detail

inline void write_checkpoint(const ModelParams& m, const std::string& path) {
  using namespace ckpt_detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write("FCVK", 4);
  put_u32(out, 1);  // version
  put_str(out, to_string(kind_of(m)));
  if (const auto* p = std::get_if<FcvaeParams>(&m)) {
    put_u32(out, p->y_kind == YKind::Binary ? 0 : 1);
    put_u32(out, p->heteroscedastic_y ? 1 : 0);
    put_f64(out, p->sigma_x);
    put_f64(out, p->pi_a);
    put_dims(out, p->dims);
  } else if (const auto* p = std::get_if<CvaeAParams>(&m)) {
    put_u32(out, p->y_kind == YKind::Binary ? 0 : 1);
    put_u32(out, p->heteroscedastic_y ? 1 : 0);
    put_f64(out, p->sigma_x);
    put_f64(out, p->pi_a);
    put_dims(out, p->dims);
  }
  std::uint32_t n_nets = 0;
  std::visit([&](const auto& p) { for_each_net(p, [&](const MlpParams&) { ++n_nets; }); }, m);
  put_u32(out, n_nets);
  std::visit([&](const auto& p) { for_each_net(p, [&](const MlpParams& net) { put_net(out, net); }); },
             m);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline ModelParams read_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  require(in && std::memcmp(magic, "FCVK", 4) == 0, "checkpoint: bad magic in " + path);
  std::uint32_t version = get_u32(in);
  require(version == 1, "checkpoint: unsupported version");
  ModelKind kind = parse_model_kind(get_str(in));

  ModelParams m;
  if (kind == ModelKind::Fcvae1 || kind == ModelKind::Fcvae2) {
    FcvaeParams p;
    p.variant = kind == ModelKind::Fcvae1 ? FcvaeVariant::V1 : FcvaeVariant::V2;
    p.y_kind = get_u32(in) == 0 ? YKind::Binary : YKind::Continuous;
    p.heteroscedastic_y = get_u32(in) != 0;
    p.sigma_x = get_f64(in);
    p.pi_a = get_f64(in);
    p.dims = get_dims(in);
    p.t_net.heads.resize(2);
    p.y_net.heads.resize(4);
    m = std::move(p);
  } else if (kind == ModelKind::CvaeA) {
    CvaeAParams p;
    p.y_kind = get_u32(in) == 0 ? YKind::Binary : YKind::Continuous;
    p.heteroscedastic_y = get_u32(in) != 0;
    p.sigma_x = get_f64(in);
    p.pi_a = get_f64(in);
    p.dims = get_dims(in);
    p.y_net.heads.resize(2);
    m = std::move(p);
  } else if (kind == ModelKind::Cfmlp) {
    m = CfmlpParams{};
  } else {
    m = Cf4mlpParams{};
  }

  std::uint32_t n_nets = get_u32(in);
  std::uint32_t expected = 0;
  std::visit([&](auto& p) { for_each_net(p, [&](MlpParams&) { ++expected; }); }, m);
  require(n_nets == expected, "checkpoint: net count mismatch");
  std::visit([&](auto& p) { for_each_net(p, [&](MlpParams& net) { net = get_net(in); }); }, m);
  require(static_cast<bool>(in), "checkpoint: truncated file " + path);
  return m;
}

}  // namespace fcvae
