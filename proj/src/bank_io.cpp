#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fewshot/episode.hpp"

namespace fewshot {

namespace {

constexpr char kMagic[4] = {'F', 'B', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) throw TruncatedFile("feature bank ends mid-record");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

float read_f32(std::istream& is) {
  const std::uint32_t bits = read_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::size_t class_slot(FeatureBank& bank, int class_id) {
  for (std::size_t i = 0; i < bank.classes.size(); ++i)
    if (bank.classes[i] == class_id) return i;
  bank.classes.push_back(class_id);
  bank.samples.emplace_back();
  return bank.classes.size() - 1;
}

}  // namespace

FeatureBank load_feature_bank(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open feature bank: " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw BadMagic("not an FBK1 feature bank: " + path);
  const std::uint32_t version = read_u32(is);
  if (version != kVersion)
    throw BadMagic("unsupported FBK1 version " + std::to_string(version));
  const std::uint32_t dim = read_u32(is);
  const std::uint32_t num_samples = read_u32(is);
  if (dim == 0 || num_samples == 0)
    throw InconsistentDim("feature bank declares an empty layout");

  FeatureBank bank;
  bank.dim = dim;
  for (std::uint32_t s = 0; s < num_samples; ++s) {
    const std::uint32_t class_id = read_u32(is);
    Vector v(dim);
    for (std::uint32_t j = 0; j < dim; ++j) {
      const float f = read_f32(is);
      if (!std::isfinite(f))
        throw NonFiniteFeature("non-finite feature in " + path);
      v[j] = static_cast<double>(f);
    }
    bank.samples[class_slot(bank, static_cast<int>(class_id))].push_back(
        std::move(v));
  }
  return bank;
}

void write_feature_bank(const FeatureBank& bank, const std::string& path) {
  if (bank.dim == 0 || bank.classes.empty())
    throw InconsistentDim("refusing to write an empty feature bank");
  std::size_t total = 0;
  for (const auto& rows : bank.samples) {
    if (rows.empty())
      throw InconsistentDim("feature bank has a class with no samples");
    for (const auto& v : rows)
      if (v.size() != bank.dim)
        throw InconsistentDim("feature length differs from bank dim");
    total += rows.size();
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write feature bank: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(bank.dim));
  write_u32(os, static_cast<std::uint32_t>(total));
  for (std::size_t c = 0; c < bank.classes.size(); ++c)
    for (const auto& v : bank.samples[c]) {
      write_u32(os, static_cast<std::uint32_t>(bank.classes[c]));
      for (double x : v) write_f32(os, static_cast<float>(x));
    }
  if (!os) throw IoError("short write to " + path);
}

FeatureBank load_feature_bank_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open feature bank: " + path);
  std::string line;
  if (!std::getline(is, line)) throw TruncatedFile("empty CSV bank: " + path);
  // header: label,f0,...,f{d-1}
  std::size_t dim = 0;
  {
    std::stringstream ss(line);
    std::string tok;
    if (!std::getline(ss, tok, ',') || tok != "label")
      throw BadMagic("CSV bank header must start with 'label'");
    while (std::getline(ss, tok, ',')) {
      if (tok != "f" + std::to_string(dim))
        throw BadMagic("CSV bank header column '" + tok + "' out of order");
      ++dim;
    }
  }
  if (dim == 0) throw InconsistentDim("CSV bank header has no feature columns");

  FeatureBank bank;
  bank.dim = dim;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    if (!std::getline(ss, tok, ','))
      throw TruncatedFile("CSV bank line " + std::to_string(lineno));
    int label;
    try {
      label = std::stoi(tok);
    } catch (const std::exception&) {
      throw InvalidArgument("CSV bank line " + std::to_string(lineno) +
                            ": bad label '" + tok + "'");
    }
    if (label < 0)
      throw LabelOutOfRange("CSV bank labels must be nonnegative");
    Vector v;
    v.reserve(dim);
    while (std::getline(ss, tok, ',')) {
      double x;
      try {
        x = std::stod(tok);
      } catch (const std::exception&) {
        throw InvalidArgument("CSV bank line " + std::to_string(lineno) +
                              ": bad value '" + tok + "'");
      }
      if (!std::isfinite(x))
        throw NonFiniteFeature("non-finite feature at CSV line " +
                               std::to_string(lineno));
      v.push_back(x);
    }
    if (v.size() != dim)
      throw InconsistentDim("CSV bank line " + std::to_string(lineno) +
                            " has " + std::to_string(v.size()) +
                            " features, expected " + std::to_string(dim));
    bank.samples[class_slot(bank, label)].push_back(std::move(v));
  }
  if (bank.classes.empty())
    throw InconsistentDim("CSV bank contains no samples");
  return bank;
}

void write_feature_bank_csv(const FeatureBank& bank, const std::string& path) {
  if (bank.dim == 0 || bank.classes.empty())
    throw InconsistentDim("refusing to write an empty feature bank");
  std::ofstream os(path);
  if (!os) throw IoError("cannot write feature bank: " + path);
  os << "label";
  for (std::size_t j = 0; j < bank.dim; ++j) os << ",f" << j;
  os << "\n";
  char buf[40];
  for (std::size_t c = 0; c < bank.classes.size(); ++c)
    for (const auto& v : bank.samples[c]) {
      os << bank.classes[c];
      for (double x : v) {
        std::snprintf(buf, sizeof(buf), ",%.9g", x);
        os << buf;
      }
      os << "\n";
    }
  if (!os) throw IoError("short write to " + path);
}

}  // namespace fewshot
