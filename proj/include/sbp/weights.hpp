#pragma once

// Per-node parameter storage.
//
// On disk a store is two files: a blob of little-endian IEEE-754 doubles and a
// text manifest with one `node_id offset length` line per node, offsets and
// lengths counted in doubles. Nodes are written in ascending id order.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sbp/error.hpp"
#include "sbp/graph.hpp"

namespace sbp {

class WeightStore {
 public:
  void set(int node_id, std::vector<double> values) { blocks_[node_id] = std::move(values); }

  bool contains(int node_id) const { return blocks_.count(node_id) != 0; }

  std::span<const double> at(int node_id) const {
    auto it = blocks_.find(node_id);
    if (it == blocks_.end()) throw WeightError(node_id, "no weights in store");
    return it->second;
  }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [id, v] : blocks_) n += v.size();
    return n;
  }

  const std::map<int, std::vector<double>>& blocks() const noexcept { return blocks_; }

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

  void save(const std::filesystem::path& blob, const std::filesystem::path& manifest) const {
    std::ofstream b(blob, std::ios::binary);
    std::ofstream m(manifest);
    if (!b || !m) throw Error("cannot write weight store to " + blob.string());
    std::size_t offset = 0;
    for (const auto& [id, values] : blocks_) {
      for (double v : values) {
        unsigned char bytes[8];
        std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
        b.write(reinterpret_cast<const char*>(bytes), 8);
      }
      m << id << " " << offset << " " << values.size() << "\n";
      offset += values.size();
    }
    if (!b || !m) throw Error("short write on weight store " + blob.string());
  }

  static WeightStore load(const std::filesystem::path& blob, const std::filesystem::path& manifest) {
    std::ifstream b(blob, std::ios::binary);
    if (!b) throw Error("cannot open weight blob " + blob.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    if (bytes.size() % 8 != 0) throw Error("weight blob size " + std::to_string(bytes.size()) + " is not a multiple of 8");
    const std::size_t count = bytes.size() / 8;

    std::ifstream m(manifest);
    if (!m) throw Error("cannot open weight manifest " + manifest.string());
    WeightStore store;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(m, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream in(line);
      long long id = 0;
      unsigned long long offset = 0;
      unsigned long long length = 0;
      std::string extra;
      if (!(in >> id >> offset >> length) || (in >> extra)) {
        throw ParseError(manifest.string(), line_no, 0, "expected 'node_id offset length'");
      }
      if (offset > count || length > count - offset) {
        throw ParseError(manifest.string(), line_no, 0, "range exceeds blob of " + std::to_string(count) + " values");
      }
      if (store.contains(static_cast<int>(id))) throw ParseError(manifest.string(), line_no, 0, "duplicate node id");
      std::vector<double> values(length);
      for (std::size_t i = 0; i < length; ++i) {
        std::uint64_t bits = 0;
        const unsigned char* p = bytes.data() + (offset + i) * 8;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(p[k]) << (8 * k);
        values[i] = std::bit_cast<double>(bits);
      }
      store.set(static_cast<int>(id), std::move(values));
    }
    return store;
  }

 private:
  std::map<int, std::vector<double>> blocks_;
};

struct InitOptions {
  std::uint64_t seed = 0x5b9'2024;
  bool zero_bias = false;
};

// Number of parameters each weighted node of a shaped graph needs.
inline std::map<int, std::size_t> parameter_layout(const ArchGraph& g) {
  if (!g.shaped()) throw UsageError("parameter_layout needs a shape-inferred graph");
  std::map<int, std::size_t> layout;
  for (const auto& n : g.nodes) {
    if (!has_weights(n.kind)) continue;
    layout[n.id] = block_param_count(make_block(n, input_shapes(g, n)));
  }
  return layout;
}

// Uniform in +-1/sqrt(fan_in) per conv unit; each node draws from its own
// stream seeded by (seed, node id), so a node's weights do not depend on the
// rest of the graph.
inline WeightStore random_weights(const ArchGraph& g, const InitOptions& opt = {}) {
  if (!g.shaped()) throw UsageError("random_weights needs a shape-inferred graph");
  WeightStore store;
  for (const auto& n : g.nodes) {
    if (!has_weights(n.kind)) continue;
    const NodeBlock block = make_block(n, input_shapes(g, n));
    std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                      static_cast<std::uint32_t>(n.id)};
    std::mt19937_64 rng(seq);
    std::vector<double> values;
    for (const auto& group : block_units(block)) {
      for (const auto& u : group) {
        const double fan_in = static_cast<double>(u.spec.c1 / u.spec.groups) * u.spec.k * u.spec.k;
        const double bound = 1.0 / std::sqrt(fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < u.spec.weight_count(); ++i) values.push_back(dist(rng));
        for (std::size_t i = 0; i < u.spec.bias_count(); ++i) values.push_back(opt.zero_bias ? 0.0 : dist(rng));
      }
    }
    store.set(n.id, std::move(values));
  }
  return store;
}

}  // namespace sbp
