#include "riiu/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace riiu {

namespace {

constexpr const char* kMagic = "riiu-checkpoint 1";

struct StoredTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

}  // namespace

std::string checkpoint_to_string(std::span<const ad::TensorView> tensors) {
  std::ostringstream out;
  out << kMagic << '\n';
  for (const auto& t : tensors) {
    out << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
    for (std::size_t r = 0; r < t.rows; ++r) {
      for (std::size_t c = 0; c < t.cols; ++c) {
        if (c) out << ' ';
        out << hex(t.data[r * t.cols + c]);
      }
      out << '\n';
    }
  }
  return out.str();
}

void save_checkpoint(const std::filesystem::path& path, std::span<const ad::TensorView> tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  f << checkpoint_to_string(tensors);
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

void checkpoint_from_string(const std::string& text, std::span<const ad::TensorView> tensors) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw std::runtime_error("checkpoint: bad header");

  std::map<std::string, StoredTensor> stored;
  std::string tag;
  while (in >> tag) {
    if (tag != "tensor") throw std::runtime_error("checkpoint: expected 'tensor', got " + tag);
    std::string name;
    StoredTensor t;
    if (!(in >> name >> t.rows >> t.cols)) throw std::runtime_error("checkpoint: bad tensor header");
    t.values.resize(t.rows * t.cols);
    for (double& v : t.values) {
      std::string token;
      if (!(in >> token)) throw std::runtime_error("checkpoint: truncated tensor " + name);
      char* end = nullptr;
      v = std::strtod(token.c_str(), &end);
      if (end != token.c_str() + token.size())
        throw std::runtime_error("checkpoint: bad number '" + token + "' in " + name);
    }
    stored.emplace(name, std::move(t));
  }

  for (const auto& t : tensors) {
    auto it = stored.find(t.name);
    if (it == stored.end()) throw std::runtime_error("checkpoint: missing tensor " + t.name);
    if (it->second.rows != t.rows || it->second.cols != t.cols)
      throw std::runtime_error("checkpoint: shape mismatch for " + t.name);
    std::copy(it->second.values.begin(), it->second.values.end(), t.data.begin());
  }
}

void load_checkpoint(const std::filesystem::path& path, std::span<const ad::TensorView> tensors) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  checkpoint_from_string(buf.str(), tensors);
}

}  // namespace riiu
