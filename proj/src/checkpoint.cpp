#include "ia/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace ia {

namespace {

void put_le(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  os.write(bytes, 8);
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::filesystem::path index_path(const std::filesystem::path& base) {
  return std::filesystem::path(base.string() + ".index");
}

std::filesystem::path blob_path(const std::filesystem::path& base) {
  return std::filesystem::path(base.string() + ".bin");
}

void save_checkpoint(const std::filesystem::path& base, const TensorDict& tensors) {
  std::ofstream index(index_path(base), std::ios::binary);
  std::ofstream blob(blob_path(base), std::ios::binary);
  if (!index || !blob) throw std::runtime_error("checkpoint: cannot write " + base.string());
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
      throw std::invalid_argument("checkpoint: invalid tensor name '" + name + "'");
    index << name << " f64";
    for (Index d : t.shape()) index << ' ' << d;
    index << ' ' << offset << '\n';
    for (Index i = 0; i < t.size(); ++i) put_le(blob, t[i]);
    offset += 8 * static_cast<std::uint64_t>(t.size());
  }
  if (!index || !blob) throw std::runtime_error("checkpoint: write failed for " + base.string());
}

TensorDict load_checkpoint(const std::filesystem::path& base) {
  std::ifstream index(index_path(base));
  if (!index) throw std::runtime_error("checkpoint: cannot open " + index_path(base).string());
  std::ifstream blob_in(blob_path(base), std::ios::binary);
  if (!blob_in) throw std::runtime_error("checkpoint: cannot open " + blob_path(base).string());
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(blob_in)),
                                        std::istreambuf_iterator<char>());
  TensorDict out;
  std::string line;
  int lineno = 0;
  while (std::getline(index, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, dtype;
    std::vector<std::uint64_t> fields;
    ls >> name >> dtype;
    for (std::uint64_t v; ls >> v;) fields.push_back(v);
    if (dtype != "f64" || fields.size() < 2 || !ls.eof())
      throw std::runtime_error("checkpoint: malformed index line " + std::to_string(lineno));
    const std::uint64_t offset = fields.back();
    Shape shape(fields.begin(), fields.end() - 1);
    Tensor t(shape);
    if (offset + 8 * static_cast<std::uint64_t>(t.size()) > blob.size())
      throw std::runtime_error("checkpoint: tensor '" + name + "' runs past end of blob");
    for (Index i = 0; i < t.size(); ++i) t[i] = get_le(blob.data() + offset + 8 * i);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace ia
