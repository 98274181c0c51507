#include "fewshot/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "fewshot/errors.hpp"

namespace fewshot {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i)
    b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw TruncatedFile("checkpoint ends mid-field");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw TruncatedFile("checkpoint ends mid-tensor");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

Matrix row_matrix(const Vector& v) {
  Matrix m(1, v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = v[i];
  return m;
}

Vector to_vector(const Matrix& m) {
  return m.data();
}

const Matrix* find(const Checkpoint& ck, const std::string& name) {
  for (const auto& [n, m] : ck.tensors)
    if (n == name) return &m;
  return nullptr;
}

const Matrix& need(const Checkpoint& ck, const std::string& name) {
  const Matrix* m = find(ck, name);
  if (m == nullptr) throw TruncatedFile("checkpoint lacks tensor " + name);
  return *m;
}

}  // namespace

void write_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(ck.config_text.size()));
  out.write(ck.config_text.data(),
            static_cast<std::streamsize>(ck.config_text.size()));
  put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, m] : ck.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.data()) put_f64(out, v);
  }
  if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw BadMagic("not a checkpoint file: " + path);
  if (get_u32(in) != kVersion)
    throw BadMagic("unsupported checkpoint version in " + path);

  Checkpoint ck;
  const std::uint32_t cfg_len = get_u32(in);
  ck.config_text.resize(cfg_len);
  if (cfg_len > 0 && !in.read(ck.config_text.data(), cfg_len))
    throw TruncatedFile("checkpoint ends inside config text");
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    if (name_len > 0 && !in.read(name.data(), name_len))
      throw TruncatedFile("checkpoint ends inside tensor name");
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = get_f64(in);
    ck.tensors.emplace_back(std::move(name), std::move(m));
  }
  return ck;
}

Checkpoint pack_params(const TrainableParams& params,
                       const std::string& config_text) {
  Checkpoint ck;
  ck.config_text = config_text;
  for (std::size_t i = 0; i < params.backbone.weights.size(); ++i) {
    const std::string idx = std::to_string(i);
    ck.tensors.emplace_back("backbone.w" + idx, params.backbone.weights[i]);
    ck.tensors.emplace_back("backbone.b" + idx,
                            row_matrix(params.backbone.biases[i]));
  }
  if (params.use_iam) {
    const IamParams& p = params.iam;
    Matrix meta(1, 5);
    meta(0, 0) = p.dropout_rate;
    meta(0, 1) = static_cast<double>(p.d);
    meta(0, 2) = static_cast<double>(p.d_k);
    meta(0, 3) = static_cast<double>(p.d_v);
    meta(0, 4) = static_cast<double>(p.r);
    ck.tensors.emplace_back("iam.meta", std::move(meta));
    ck.tensors.emplace_back("iam.map_q.w1", p.map_q.w1);
    ck.tensors.emplace_back("iam.map_q.w2", p.map_q.w2);
    ck.tensors.emplace_back("iam.map_k.w1", p.map_k.w1);
    ck.tensors.emplace_back("iam.map_k.w2", p.map_k.w2);
    ck.tensors.emplace_back("iam.map_v.w1", p.map_v.w1);
    ck.tensors.emplace_back("iam.map_v.w2", p.map_v.w2);
    ck.tensors.emplace_back("iam.map_h.w1", p.map_h.w1);
    ck.tensors.emplace_back("iam.map_h.w2", p.map_h.w2);
    ck.tensors.emplace_back("iam.ln_gain", row_matrix(p.ln_gain));
    ck.tensors.emplace_back("iam.ln_bias", row_matrix(p.ln_bias));
  }
  return ck;
}

TrainableParams unpack_params(const Checkpoint& ck) {
  TrainableParams params;
  for (std::size_t i = 0;; ++i) {
    const std::string idx = std::to_string(i);
    const Matrix* w = find(ck, "backbone.w" + idx);
    if (w == nullptr) break;
    params.backbone.weights.push_back(*w);
    params.backbone.biases.push_back(to_vector(need(ck, "backbone.b" + idx)));
  }
  if (find(ck, "iam.meta") != nullptr) {
    const Matrix& meta = need(ck, "iam.meta");
    IamParams& p = params.iam;
    p.dropout_rate = meta(0, 0);
    p.d = static_cast<std::size_t>(meta(0, 1));
    p.d_k = static_cast<std::size_t>(meta(0, 2));
    p.d_v = static_cast<std::size_t>(meta(0, 3));
    p.r = static_cast<int>(meta(0, 4));
    p.map_q = {need(ck, "iam.map_q.w1"), need(ck, "iam.map_q.w2")};
    p.map_k = {need(ck, "iam.map_k.w1"), need(ck, "iam.map_k.w2")};
    p.map_v = {need(ck, "iam.map_v.w1"), need(ck, "iam.map_v.w2")};
    p.map_h = {need(ck, "iam.map_h.w1"), need(ck, "iam.map_h.w2")};
    p.ln_gain = to_vector(need(ck, "iam.ln_gain"));
    p.ln_bias = to_vector(need(ck, "iam.ln_bias"));
    params.use_iam = true;
  }
  return params;
}

}  // namespace fewshot
