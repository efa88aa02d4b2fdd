#pragma once

// Architecture graphs: a line-oriented config format, the typed layer IR it
// parses into, static shape inference, and the mapping from layer nodes to
// the blocks in blocks.hpp.
//
// Grammar (UTF-8, '#' starts a comment, blank lines ignored):
//
//   [meta]
//   name = sbp-yolo
//   input = 3,640,640          # c,h,w
//   nc = 2                     # class count
//   reg_max = 16               # DFL bins per box side
//   levels = 4                 # optional: required head level count
//   bias = true                # default bias flag for parameterized layers
//
//   [const]
//   W_P2 = 32                  # referenced as $W_P2 in integer arguments
//
//   [layers]
//   0: conv(from=input, c2=16, k=3, s=2)
//   1: concat(from=0|3)
//
// Node ids are consecutive from 0 and inputs may only name earlier nodes or
// the network input.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "sbp/blocks.hpp"
#include "sbp/error.hpp"
#include "sbp/tensor.hpp"

namespace sbp {

enum class LayerKind {
  conv,
  ghost_conv,
  gs_conv,
  gs_bottleneck,
  vov_gscspc,
  c3k2_proxy,
  sppf_proxy,
  c2psa_proxy,
  upsample,
  concat,
  add,
  ledh_head,
  plain_head,
};

inline constexpr std::pair<LayerKind, std::string_view> kLayerKindNames[] = {
    {LayerKind::conv, "conv"},
    {LayerKind::ghost_conv, "ghost_conv"},
    {LayerKind::gs_conv, "gs_conv"},
    {LayerKind::gs_bottleneck, "gs_bottleneck"},
    {LayerKind::vov_gscspc, "vov_gscspc"},
    {LayerKind::c3k2_proxy, "c3k2_proxy"},
    {LayerKind::sppf_proxy, "sppf_proxy"},
    {LayerKind::c2psa_proxy, "c2psa_proxy"},
    {LayerKind::upsample, "upsample"},
    {LayerKind::concat, "concat"},
    {LayerKind::add, "add"},
    {LayerKind::ledh_head, "ledh_head"},
    {LayerKind::plain_head, "plain_head"},
};

inline std::string_view to_string(LayerKind k) {
  for (const auto& [kind, name] : kLayerKindNames) {
    if (kind == k) return name;
  }
  return "?";
}

inline std::optional<LayerKind> parse_layer_kind(std::string_view s) {
  for (const auto& [kind, name] : kLayerKindNames) {
    if (name == s) return kind;
  }
  return std::nullopt;
}

inline bool is_head(LayerKind k) { return k == LayerKind::ledh_head || k == LayerKind::plain_head; }

inline bool has_weights(LayerKind k) {
  return k != LayerKind::upsample && k != LayerKind::concat && k != LayerKind::add;
}

// Channels and spatial extent of one feature map, batch excluded.
struct Shape3 {
  int c = 0;
  int h = 0;
  int w = 0;

  friend bool operator==(const Shape3&, const Shape3&) = default;
};

inline std::string to_string(const Shape3& s) {
  return "(" + std::to_string(s.c) + "," + std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

// ---------------------------------------------------------------- layer args

struct ConvArgs {
  int c2 = 0;
  int k = 1;
  int s = 1;
  int g = 1;
  Act act = Act::silu;
  friend bool operator==(const ConvArgs&, const ConvArgs&) = default;
};
struct GhostArgs {
  int c2 = 0;
  int k = 3;
  int kc = 5;
  int s = 1;
  friend bool operator==(const GhostArgs&, const GhostArgs&) = default;
};
struct GSConvArgs {
  int c2 = 0;
  int k = 3;
  int s = 1;
  friend bool operator==(const GSConvArgs&, const GSConvArgs&) = default;
};
struct GSBottleneckArgs {
  friend bool operator==(const GSBottleneckArgs&, const GSBottleneckArgs&) = default;
};
struct VoVArgs {
  int c2 = 0;
  friend bool operator==(const VoVArgs&, const VoVArgs&) = default;
};
struct C3k2Args {
  int c2 = 0;
  int n = 1;
  bool c3k = false;
  double e = 0.5;
  bool shortcut = true;
  friend bool operator==(const C3k2Args&, const C3k2Args&) = default;
};
struct SPPFArgs {
  int c2 = 0;
  int k = 5;
  friend bool operator==(const SPPFArgs&, const SPPFArgs&) = default;
};
struct C2PSAArgs {
  int n = 1;
  friend bool operator==(const C2PSAArgs&, const C2PSAArgs&) = default;
};
struct PlainArgs {
  friend bool operator==(const PlainArgs&, const PlainArgs&) = default;
};
struct HeadArgs {
  int nc = 2;
  int r = 16;
  int d = 16;  // LEDH group divisor; unused by plain_head
  friend bool operator==(const HeadArgs&, const HeadArgs&) = default;
};

using LayerArgs =
    std::variant<ConvArgs, GhostArgs, GSConvArgs, GSBottleneckArgs, VoVArgs, C3k2Args, SPPFArgs, C2PSAArgs, PlainArgs,
                 HeadArgs>;

inline constexpr int kInputId = -1;

struct LayerNode {
  int id = 0;
  LayerKind kind = LayerKind::conv;
  std::vector<int> inputs;  // kInputId names the network input
  LayerArgs args;
  bool bias = true;
  std::vector<Shape3> out_shapes;  // one per output; heads have one per level
  std::size_t line = 0;            // source line, not part of identity

  const Shape3& out_shape() const {
    if (out_shapes.empty()) throw UsageError("node " + std::to_string(id) + " has no inferred shape");
    return out_shapes.front();
  }

  friend bool operator==(const LayerNode& a, const LayerNode& b) {
    return a.id == b.id && a.kind == b.kind && a.inputs == b.inputs && a.args == b.args && a.bias == b.bias &&
           a.out_shapes == b.out_shapes;
  }
};

struct GraphMeta {
  std::string name = "unnamed";
  Shape3 input{3, 640, 640};
  int num_classes = 2;
  int reg_max = 16;
  int levels = 0;  // 0: any count the head accepts
  bool bias = true;
  friend bool operator==(const GraphMeta&, const GraphMeta&) = default;
};

struct ArchGraph {
  GraphMeta meta;
  std::vector<std::pair<std::string, int>> constants;
  std::vector<LayerNode> nodes;
  std::vector<int> head_levels;  // producer ids feeding the head, finest level first

  const LayerNode& node(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes.size()) {
      throw UsageError("no node with id " + std::to_string(id));
    }
    return nodes[static_cast<std::size_t>(id)];
  }

  std::optional<int> head() const {
    for (const auto& n : nodes) {
      if (is_head(n.kind)) return n.id;
    }
    return std::nullopt;
  }

  bool shaped() const {
    return std::all_of(nodes.begin(), nodes.end(), [](const LayerNode& n) { return !n.out_shapes.empty(); });
  }

  friend bool operator==(const ArchGraph&, const ArchGraph&) = default;
};

// ---------------------------------------------------------------- parsing

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline bool is_ident_char(char ch) { return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-'; }

struct RawArg {
  std::string value;
  std::size_t column = 0;
};

class ConfigParser {
 public:
  ConfigParser(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {}

  ArchGraph run() {
    enum class Section { none, meta, constants, layers } section = Section::none;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text_.size()) {
      const std::size_t end = std::min(text_.find('\n', pos), text_.size());
      std::string_view raw = text_.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      line_ = line_no;
      if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
      line_text_ = raw;
      const std::size_t hash = raw.find('#');
      std::string_view body = raw.substr(0, hash);
      if (trim(body).empty()) {
        if (end == text_.size()) break;
        continue;
      }
      const std::string_view t = trim(body);
      if (t.front() == '[') {
        if (t.back() != ']') fail(col_of(t) + t.size() - 1, "section header must end with ']'");
        const std::string_view name = trim(t.substr(1, t.size() - 2));
        if (name == "meta") {
          section = Section::meta;
        } else if (name == "const") {
          section = Section::constants;
        } else if (name == "layers") {
          section = Section::layers;
        } else {
          fail(col_of(name), "unknown section '" + std::string(name) + "'");
        }
      } else {
        switch (section) {
          case Section::none:
            fail(col_of(t), "content before any [section] header");
          case Section::meta:
            parse_meta(t);
            break;
          case Section::constants:
            parse_constant(t);
            break;
          case Section::layers:
            parse_layer(t);
            break;
        }
      }
      if (end == text_.size()) break;
    }
    validate_references();
    validate_heads();
    return std::move(graph_);
  }

 private:
  [[noreturn]] void fail(std::size_t column, const std::string& msg) const {
    throw ParseError(source_, line_, column, msg);
  }
  [[noreturn]] void fail_at(std::size_t line, std::size_t column, const std::string& msg) const {
    throw ParseError(source_, line, column, msg);
  }

  std::size_t col_of(std::string_view sub) const {
    return static_cast<std::size_t>(sub.data() - line_text_.data()) + 1;
  }

  std::pair<std::string_view, std::string_view> split_assignment(std::string_view t) {
    const std::size_t eq = t.find('=');
    if (eq == std::string_view::npos) fail(col_of(t), "expected 'key = value'");
    const std::string_view key = trim(t.substr(0, eq));
    const std::string_view value = trim(t.substr(eq + 1));
    if (key.empty()) fail(col_of(t), "missing key before '='");
    if (value.empty()) fail(col_of(t) + eq + 1, "missing value after '='");
    return {key, value};
  }

  int parse_int(std::string_view s, std::size_t column) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) fail(column, "expected an integer, got '" + std::string(s) + "'");
    return v;
  }

  bool parse_bool(std::string_view s, std::size_t column) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    fail(column, "expected true/false, got '" + std::string(s) + "'");
  }

  void parse_meta(std::string_view t) {
    auto [key, value] = split_assignment(t);
    const std::size_t vc = col_of(value);
    auto& m = graph_.meta;
    if (key == "name") {
      m.name = std::string(value);
    } else if (key == "input") {
      std::vector<int> dims;
      std::size_t start = 0;
      while (start <= value.size()) {
        std::size_t comma = value.find(',', start);
        if (comma == std::string_view::npos) comma = value.size();
        const std::string_view part = trim(value.substr(start, comma - start));
        dims.push_back(parse_int(part, vc + start));
        start = comma + 1;
      }
      if (dims.size() != 3) fail(vc, "input must be c,h,w");
      if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) fail(vc, "input dimensions must be >= 1");
      m.input = {dims[0], dims[1], dims[2]};
    } else if (key == "nc") {
      m.num_classes = parse_int(value, vc);
      if (m.num_classes < 1) fail(vc, "nc must be >= 1");
    } else if (key == "reg_max") {
      m.reg_max = parse_int(value, vc);
      if (m.reg_max < 1) fail(vc, "reg_max must be >= 1");
    } else if (key == "levels") {
      m.levels = parse_int(value, vc);
      if (m.levels < 1 || m.levels > 4) fail(vc, "levels must be between 1 and 4");
    } else if (key == "bias") {
      m.bias = parse_bool(value, vc);
    } else {
      fail(col_of(key), "unknown meta key '" + std::string(key) + "'");
    }
  }

  void parse_constant(std::string_view t) {
    auto [key, value] = split_assignment(t);
    if (!std::all_of(key.begin(), key.end(), [](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_'; })) {
      fail(col_of(key), "constant names may contain only letters, digits and '_'");
    }
    for (const auto& [name, v] : graph_.constants) {
      if (name == key) fail(col_of(key), "constant '" + std::string(key) + "' defined twice");
    }
    graph_.constants.emplace_back(std::string(key), parse_int(value, col_of(value)));
  }

  void parse_layer(std::string_view t) {
    const std::size_t colon = t.find(':');
    if (colon == std::string_view::npos) fail(col_of(t), "expected '<id>: <kind>(...)'");
    const std::string_view id_text = trim(t.substr(0, colon));
    const int id = parse_int(id_text, col_of(t));
    const int expected = static_cast<int>(graph_.nodes.size());
    if (id != expected) {
      fail(col_of(t), "node ids must be consecutive from 0: expected " + std::to_string(expected) + ", got " +
                          std::to_string(id));
    }
    std::string_view rest = trim(t.substr(colon + 1));
    const std::size_t open = rest.find('(');
    if (open == std::string_view::npos) fail(col_of(rest), "expected '(' after layer kind");
    const std::string_view kind_text = trim(rest.substr(0, open));
    const auto kind = parse_layer_kind(kind_text);
    if (!kind) fail(col_of(rest), "unknown layer kind '" + std::string(kind_text) + "'");
    if (rest.back() != ')') fail(col_of(rest) + rest.size() - 1, "expected ')' at end of layer");
    const std::string_view inner = rest.substr(open + 1, rest.size() - open - 2);

    std::map<std::string, RawArg> raw;
    std::size_t start = 0;
    while (start <= inner.size()) {
      std::size_t comma = inner.find(',', start);
      if (comma == std::string_view::npos) comma = inner.size();
      const std::string_view item = trim(inner.substr(start, comma - start));
      if (item.empty()) {
        if (comma == inner.size() && start == 0) break;
        fail(col_of(inner) + start, "empty argument");
      }
      auto [key, value] = split_assignment(item);
      if (!std::all_of(key.begin(), key.end(), is_ident_char)) fail(col_of(key), "bad argument name");
      if (raw.count(std::string(key))) fail(col_of(key), "argument '" + std::string(key) + "' given twice");
      raw[std::string(key)] = {std::string(value), col_of(value)};
      start = comma + 1;
      if (comma == inner.size()) break;
    }

    LayerNode node;
    node.id = id;
    node.kind = *kind;
    node.line = line_;
    node.bias = graph_.meta.bias;

    auto from = raw.find("from");
    if (from == raw.end()) fail(col_of(rest), "layer " + std::to_string(id) + " is missing 'from='");
    node.inputs = parse_inputs(from->second);
    raw.erase(from);
    if (auto b = raw.find("bias"); b != raw.end()) {
      if (!has_weights(*kind)) fail(b->second.column, std::string(to_string(*kind)) + " has no weights to bias");
      node.bias = parse_bool(b->second.value, b->second.column);
      raw.erase(b);
    }
    node.args = parse_args(*kind, raw, col_of(rest));
    check_arity(node, col_of(rest));
    graph_.nodes.push_back(std::move(node));
  }

  std::vector<int> parse_inputs(const RawArg& arg) {
    std::vector<int> ids;
    std::string_view v = arg.value;
    std::size_t start = 0;
    while (start <= v.size()) {
      std::size_t bar = v.find('|', start);
      if (bar == std::string_view::npos) bar = v.size();
      const std::string_view part = trim(v.substr(start, bar - start));
      if (part == "input") {
        ids.push_back(kInputId);
      } else {
        ids.push_back(parse_int(part, arg.column + start));
      }
      start = bar + 1;
      if (bar == v.size()) break;
    }
    return ids;
  }

  void check_arity(const LayerNode& n, std::size_t column) {
    const std::size_t count = n.inputs.size();
    switch (n.kind) {
      case LayerKind::concat:
        if (count < 1) fail(column, "concat needs at least one input");
        break;
      case LayerKind::add:
        if (count != 2) fail(column, "add needs exactly two inputs");
        break;
      case LayerKind::ledh_head:
      case LayerKind::plain_head:
        if (count < 1 || count > 4) {
          fail(column, "wrong head-level count: " + std::string(to_string(n.kind)) + " takes 1 to 4 levels, got " +
                           std::to_string(count));
        }
        break;
      default:
        if (count != 1) fail(column, std::string(to_string(n.kind)) + " takes exactly one input");
    }
  }

  class ArgReader {
   public:
    ArgReader(ConfigParser& p, std::map<std::string, RawArg>& raw) : p_(p), raw_(raw) {}

    int integer(const std::string& key, std::optional<int> fallback, std::size_t layer_col) {
      auto it = raw_.find(key);
      if (it == raw_.end()) {
        if (!fallback) p_.fail(layer_col, "missing required argument '" + key + "'");
        return *fallback;
      }
      const RawArg a = it->second;
      raw_.erase(it);
      if (!a.value.empty() && a.value.front() == '$') {
        const std::string name = a.value.substr(1);
        for (const auto& [cname, v] : p_.graph_.constants) {
          if (cname == name) return v;
        }
        p_.fail(a.column, "undefined constant '" + name + "'");
      }
      return p_.parse_int(a.value, a.column);
    }

    int positive(const std::string& key, std::optional<int> fallback, std::size_t layer_col) {
      const std::size_t col = raw_.count(key) ? raw_.at(key).column : layer_col;
      const int v = integer(key, fallback, layer_col);
      if (v < 1) p_.fail(col, "argument '" + key + "' must be >= 1");
      return v;
    }

    bool boolean(const std::string& key, bool fallback) {
      auto it = raw_.find(key);
      if (it == raw_.end()) return fallback;
      const RawArg a = it->second;
      raw_.erase(it);
      return p_.parse_bool(a.value, a.column);
    }

    double real(const std::string& key, double fallback) {
      auto it = raw_.find(key);
      if (it == raw_.end()) return fallback;
      const RawArg a = it->second;
      raw_.erase(it);
      double v = 0.0;
      std::istringstream in(a.value);
      in.imbue(std::locale::classic());
      if (!(in >> v) || !in.eof() || !(v > 0.0)) p_.fail(a.column, "expected a positive real, got '" + a.value + "'");
      return v;
    }

    Act activation(const std::string& key) {
      auto it = raw_.find(key);
      if (it == raw_.end()) return Act::silu;
      const RawArg a = it->second;
      raw_.erase(it);
      if (a.value == "silu") return Act::silu;
      if (a.value == "none") return Act::none;
      p_.fail(a.column, "activation must be silu or none, got '" + a.value + "'");
    }

    void finish() {
      if (!raw_.empty()) {
        const auto& [key, a] = *raw_.begin();
        p_.fail(a.column, "unknown argument '" + key + "'");
      }
    }

   private:
    ConfigParser& p_;
    std::map<std::string, RawArg>& raw_;
  };

  LayerArgs parse_args(LayerKind kind, std::map<std::string, RawArg>& raw, std::size_t col) {
    ArgReader r(*this, raw);
    LayerArgs out;
    switch (kind) {
      case LayerKind::conv: {
        ConvArgs a;
        a.c2 = r.positive("c2", std::nullopt, col);
        a.k = r.positive("k", 1, col);
        a.s = r.positive("s", 1, col);
        a.g = r.positive("g", 1, col);
        a.act = r.activation("act");
        out = a;
        break;
      }
      case LayerKind::ghost_conv: {
        GhostArgs a;
        a.c2 = r.positive("c2", std::nullopt, col);
        a.k = r.positive("k", 3, col);
        a.kc = r.positive("kc", 5, col);
        a.s = r.positive("s", 1, col);
        out = a;
        break;
      }
      case LayerKind::gs_conv: {
        GSConvArgs a;
        a.c2 = r.positive("c2", std::nullopt, col);
        a.k = r.positive("k", 3, col);
        a.s = r.positive("s", 1, col);
        out = a;
        break;
      }
      case LayerKind::gs_bottleneck:
        out = GSBottleneckArgs{};
        break;
      case LayerKind::vov_gscspc:
        out = VoVArgs{r.positive("c2", std::nullopt, col)};
        break;
      case LayerKind::c3k2_proxy: {
        C3k2Args a;
        a.c2 = r.positive("c2", std::nullopt, col);
        a.n = r.positive("n", 1, col);
        a.c3k = r.boolean("c3k", false);
        a.e = r.real("e", 0.5);
        a.shortcut = r.boolean("shortcut", true);
        out = a;
        break;
      }
      case LayerKind::sppf_proxy: {
        SPPFArgs a;
        a.c2 = r.positive("c2", std::nullopt, col);
        a.k = r.positive("k", 5, col);
        out = a;
        break;
      }
      case LayerKind::c2psa_proxy:
        out = C2PSAArgs{r.positive("n", 1, col)};
        break;
      case LayerKind::upsample:
      case LayerKind::concat:
      case LayerKind::add:
        out = PlainArgs{};
        break;
      case LayerKind::ledh_head:
      case LayerKind::plain_head: {
        HeadArgs a;
        a.nc = r.positive("nc", graph_.meta.num_classes, col);
        a.r = r.positive("r", graph_.meta.reg_max, col);
        a.d = kind == LayerKind::ledh_head ? r.positive("d", 16, col) : 16;
        out = a;
        break;
      }
    }
    r.finish();
    return out;
  }

  // Follows input edges from `from` looking for `target`.
  bool reaches(int from, int target, std::set<int>& seen) const {
    if (from == target) return true;
    if (from < 0 || static_cast<std::size_t>(from) >= graph_.nodes.size() || !seen.insert(from).second) return false;
    for (int next : graph_.nodes[static_cast<std::size_t>(from)].inputs) {
      if (reaches(next, target, seen)) return true;
    }
    return false;
  }

  void validate_references() const {
    const int count = static_cast<int>(graph_.nodes.size());
    for (const auto& n : graph_.nodes) {
      for (int ref : n.inputs) {
        if (ref < kInputId) {
          fail_at(n.line, 0, "dangling input reference: node " + std::to_string(n.id) + " reads undefined node " +
                                 std::to_string(ref));
        }
        if (ref == kInputId || ref < n.id) continue;
        if (ref == n.id) fail_at(n.line, 0, "cycle: node " + std::to_string(n.id) + " takes itself as input");
        if (ref >= count) {
          fail_at(n.line, 0, "dangling input reference: node " + std::to_string(n.id) + " reads undefined node " +
                                 std::to_string(ref));
        }
        std::set<int> seen;
        if (reaches(ref, n.id, seen)) {
          fail_at(n.line, 0, "cycle: node " + std::to_string(n.id) + " and node " + std::to_string(ref) +
                                 " depend on each other");
        }
        fail_at(n.line, 0, "forward reference: node " + std::to_string(n.id) + " reads later node " +
                               std::to_string(ref));
      }
      for (int ref : n.inputs) {
        if (ref != kInputId && is_head(graph_.nodes[static_cast<std::size_t>(ref)].kind)) {
          fail_at(n.line, 0, "node " + std::to_string(n.id) + " reads head node " + std::to_string(ref) +
                                 ", heads are terminal");
        }
      }
    }
  }

  void validate_heads() {
    std::vector<const LayerNode*> heads;
    for (const auto& n : graph_.nodes) {
      if (is_head(n.kind)) heads.push_back(&n);
    }
    if (heads.size() > 1) fail_at(heads[1]->line, 0, "graph has more than one head node");
    if (heads.empty()) {
      if (graph_.meta.levels != 0) {
        throw ParseError(source_, line_, 0,
                         "wrong head-level count: meta declares " + std::to_string(graph_.meta.levels) +
                             " levels but the graph has no head");
      }
      return;
    }
    const LayerNode& h = *heads.front();
    const int count = static_cast<int>(h.inputs.size());
    if (graph_.meta.levels != 0 && count != graph_.meta.levels) {
      fail_at(h.line, 0, "wrong head-level count: meta declares " + std::to_string(graph_.meta.levels) +
                             " levels, head reads " + std::to_string(count));
    }
    if (h.kind == LayerKind::ledh_head && count != static_cast<int>(LEDH::kLevels)) {
      fail_at(h.line, 0, "wrong head-level count: ledh_head needs exactly 4 levels (P2-P5), got " +
                             std::to_string(count));
    }
    for (int ref : h.inputs) {
      if (ref == kInputId) fail_at(h.line, 0, "head cannot read the network input directly");
    }
    graph_.head_levels = h.inputs;
  }

  std::string_view text_;
  std::string source_;
  std::size_t line_ = 0;
  std::string_view line_text_;
  ArchGraph graph_;
};

}  // namespace detail

inline ArchGraph parse_config(std::string_view text, std::string source = "<config>") {
  return detail::ConfigParser(text, std::move(source)).run();
}

// ---------------------------------------------------------------- emission

inline std::string emit_config(const ArchGraph& g) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << "[meta]\n";
  os << "name = " << g.meta.name << "\n";
  os << "input = " << g.meta.input.c << "," << g.meta.input.h << "," << g.meta.input.w << "\n";
  os << "nc = " << g.meta.num_classes << "\n";
  os << "reg_max = " << g.meta.reg_max << "\n";
  if (g.meta.levels != 0) os << "levels = " << g.meta.levels << "\n";
  os << "bias = " << (g.meta.bias ? "true" : "false") << "\n";
  if (!g.constants.empty()) {
    os << "\n[const]\n";
    for (const auto& [name, v] : g.constants) os << name << " = " << v << "\n";
  }
  os << "\n[layers]\n";
  for (const auto& n : g.nodes) {
    os << n.id << ": " << to_string(n.kind) << "(from=";
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (i) os << "|";
      if (n.inputs[i] == kInputId) {
        os << "input";
      } else {
        os << n.inputs[i];
      }
    }
    auto b = [](bool v) { return v ? "true" : "false"; };
    std::visit(
        [&](const auto& a) {
          using T = std::decay_t<decltype(a)>;
          if constexpr (std::is_same_v<T, ConvArgs>) {
            os << ", c2=" << a.c2 << ", k=" << a.k << ", s=" << a.s << ", g=" << a.g
               << ", act=" << (a.act == Act::silu ? "silu" : "none");
          } else if constexpr (std::is_same_v<T, GhostArgs>) {
            os << ", c2=" << a.c2 << ", k=" << a.k << ", kc=" << a.kc << ", s=" << a.s;
          } else if constexpr (std::is_same_v<T, GSConvArgs>) {
            os << ", c2=" << a.c2 << ", k=" << a.k << ", s=" << a.s;
          } else if constexpr (std::is_same_v<T, VoVArgs>) {
            os << ", c2=" << a.c2;
          } else if constexpr (std::is_same_v<T, C3k2Args>) {
            os << ", c2=" << a.c2 << ", n=" << a.n << ", c3k=" << b(a.c3k) << ", e=" << std::setprecision(17)
               << a.e << ", shortcut=" << b(a.shortcut);
          } else if constexpr (std::is_same_v<T, SPPFArgs>) {
            os << ", c2=" << a.c2 << ", k=" << a.k;
          } else if constexpr (std::is_same_v<T, C2PSAArgs>) {
            os << ", n=" << a.n;
          } else if constexpr (std::is_same_v<T, HeadArgs>) {
            os << ", nc=" << a.nc << ", r=" << a.r;
            if (n.kind == LayerKind::ledh_head) os << ", d=" << a.d;
          }
        },
        n.args);
    if (has_weights(n.kind)) os << ", bias=" << b(n.bias);
    os << ")\n";
  }
  return os.str();
}

// ---------------------------------------------------------------- blocks per node

using NodeBlock = std::variant<std::monostate, ConvUnit, GhostConv, GSConv, GSBottleneck, VoVGSCSPC, C3k2Proxy,
                               SPPFProxy, C2PSAProxy, LEDH, DenseHead>;

// Instantiates the block a node describes, given its input shapes. Throws
// ConfigError for widths the block cannot take.
inline NodeBlock make_block(const LayerNode& n, std::span<const Shape3> in) {
  const bool bias = n.bias;
  const int c1 = in.empty() ? 0 : in.front().c;
  try {
    switch (n.kind) {
      case LayerKind::conv: {
        const auto& a = std::get<ConvArgs>(n.args);
        ConvUnit u{ConvSpec::same(c1, a.c2, a.k, a.s, a.g, bias), a.act};
        validate(u.spec);
        return u;
      }
      case LayerKind::ghost_conv: {
        const auto& a = std::get<GhostArgs>(n.args);
        return GhostConv({c1, a.c2, a.k, a.kc, a.s, bias});
      }
      case LayerKind::gs_conv: {
        const auto& a = std::get<GSConvArgs>(n.args);
        return GSConv({c1, a.c2, a.s, a.k, bias});
      }
      case LayerKind::gs_bottleneck:
        return GSBottleneck(c1, bias);
      case LayerKind::vov_gscspc:
        return VoVGSCSPC(c1, std::get<VoVArgs>(n.args).c2, bias);
      case LayerKind::c3k2_proxy: {
        const auto& a = std::get<C3k2Args>(n.args);
        return C3k2Proxy({c1, a.c2, a.n, a.c3k, a.e, a.shortcut, bias});
      }
      case LayerKind::sppf_proxy: {
        const auto& a = std::get<SPPFArgs>(n.args);
        return SPPFProxy(c1, a.c2, a.k, bias);
      }
      case LayerKind::c2psa_proxy:
        return C2PSAProxy(c1, std::get<C2PSAArgs>(n.args).n, bias);
      case LayerKind::ledh_head: {
        const auto& a = std::get<HeadArgs>(n.args);
        LEDHSpec s;
        for (const auto& shape : in) s.channels.push_back(shape.c);
        s.num_classes = a.nc;
        s.reg_max = a.r;
        s.divisor = a.d;
        s.bias = bias;
        return LEDH(std::move(s));
      }
      case LayerKind::plain_head: {
        const auto& a = std::get<HeadArgs>(n.args);
        DenseHeadSpec s;
        for (const auto& shape : in) s.channels.push_back(shape.c);
        s.num_classes = a.nc;
        s.reg_max = a.r;
        s.bias = bias;
        return DenseHead(std::move(s));
      }
      case LayerKind::upsample:
      case LayerKind::concat:
      case LayerKind::add:
        return std::monostate{};
    }
  } catch (const ConfigError& e) {
    throw ConfigError("node " + std::to_string(n.id) + " (" + std::string(to_string(n.kind)) + "): " + e.what());
  }
  return std::monostate{};
}

// Conv units of a block, grouped by the output they produce (one group per
// head level, a single group otherwise).
inline std::vector<std::vector<ConvUnit>> block_units(const NodeBlock& b) {
  return std::visit(
      [](const auto& blk) -> std::vector<std::vector<ConvUnit>> {
        using T = std::decay_t<decltype(blk)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return {};
        } else if constexpr (std::is_same_v<T, ConvUnit>) {
          return {{blk}};
        } else if constexpr (std::is_same_v<T, LEDH>) {
          std::vector<std::vector<ConvUnit>> out;
          for (std::size_t i = 0; i < LEDH::kLevels; ++i) out.push_back(blk.level_units(i));
          return out;
        } else if constexpr (std::is_same_v<T, DenseHead>) {
          std::vector<std::vector<ConvUnit>> out;
          for (std::size_t i = 0; i < blk.levels(); ++i) out.push_back(blk.level_units(i));
          return out;
        } else {
          return {blk.units()};
        }
      },
      b);
}

inline std::size_t block_param_count(const NodeBlock& b) {
  std::size_t total = 0;
  for (const auto& group : block_units(b)) total += param_count(group);
  return total;
}

inline std::vector<Shape3> input_shapes(const ArchGraph& g, const LayerNode& n) {
  std::vector<Shape3> shapes;
  for (int ref : n.inputs) shapes.push_back(ref == kInputId ? g.meta.input : g.node(ref).out_shape());
  return shapes;
}

// ---------------------------------------------------------------- shape inference

namespace detail {

inline std::string strip_prefix(const std::string& what) {
  const std::size_t colon = what.find(": ");
  return colon == std::string::npos ? what : what.substr(colon + 2);
}

// Fills n.out_shapes from the already-inferred shapes of its inputs.
inline void infer_node(const ArchGraph& g, LayerNode& n) {
  const auto producer = [](int ref) { return ref == kInputId ? std::string("input") : "node " + std::to_string(ref); };
  const std::vector<Shape3> in = input_shapes(g, n);
  const NodeBlock block = make_block(n, in);
  const Shape3 first = in.front();
  auto strided = [&](int c2, int k, int s) {
    const ConvSpec spec = ConvSpec::same(first.c, c2, k, s);
    const Shape3 out{c2, spec.out_extent(first.h), spec.out_extent(first.w)};
    if (out.h < 1 || out.w < 1) {
      throw ShapeError("spatial", "node " + std::to_string(n.id) + " reduces " + to_string(first) + " below 1 pixel");
    }
    return out;
  };
  std::vector<Shape3> out;
  switch (n.kind) {
    case LayerKind::conv: {
      const auto& a = std::get<ConvArgs>(n.args);
      out = {strided(a.c2, a.k, a.s)};
      break;
    }
    case LayerKind::ghost_conv: {
      const auto& a = std::get<GhostArgs>(n.args);
      out = {strided(a.c2, a.k, a.s)};
      break;
    }
    case LayerKind::gs_conv: {
      const auto& a = std::get<GSConvArgs>(n.args);
      out = {strided(a.c2, a.k, a.s)};
      break;
    }
    case LayerKind::gs_bottleneck:
      out = {{first.c / 2, first.h, first.w}};
      break;
    case LayerKind::vov_gscspc:
      out = {{std::get<VoVArgs>(n.args).c2, first.h, first.w}};
      break;
    case LayerKind::c3k2_proxy:
      out = {{std::get<C3k2Args>(n.args).c2, first.h, first.w}};
      break;
    case LayerKind::sppf_proxy:
      out = {{std::get<SPPFArgs>(n.args).c2, first.h, first.w}};
      break;
    case LayerKind::c2psa_proxy:
      out = {first};
      break;
    case LayerKind::upsample:
      out = {{first.c, first.h * 2, first.w * 2}};
      break;
    case LayerKind::concat:
    case LayerKind::add: {
      int channels = 0;
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i].h != first.h || in[i].w != first.w) {
          throw ShapeError("spatial", std::string(to_string(n.kind)) + " node " + std::to_string(n.id) + ": " +
                                          producer(n.inputs[0]) + " gives " + to_string(first) + " but " +
                                          producer(n.inputs[i]) + " gives " + to_string(in[i]));
        }
        if (n.kind == LayerKind::add && in[i].c != first.c) {
          throw ShapeError("channels", "add node " + std::to_string(n.id) + ": " + producer(n.inputs[0]) +
                                           " gives " + to_string(first) + " but " + producer(n.inputs[i]) +
                                           " gives " + to_string(in[i]));
        }
        channels += in[i].c;
      }
      out = {{n.kind == LayerKind::add ? first.c : channels, first.h, first.w}};
      break;
    }
    case LayerKind::ledh_head:
    case LayerKind::plain_head: {
      const auto& a = std::get<HeadArgs>(n.args);
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (i > 0 && (in[i - 1].h != 2 * in[i].h || in[i - 1].w != 2 * in[i].w)) {
          throw ShapeError("spatial", "head node " + std::to_string(n.id) + ": level " + std::to_string(i) + " (" +
                                          producer(n.inputs[i]) + ", " + to_string(in[i]) +
                                          ") is not half of level " + std::to_string(i - 1) + " (" +
                                          producer(n.inputs[i - 1]) + ", " + to_string(in[i - 1]) + ")");
        }
        out.push_back({4 * a.r + a.nc, in[i].h, in[i].w});
      }
      break;
    }
  }
  (void)block;
  n.out_shapes = std::move(out);
}

}  // namespace detail

inline ArchGraph infer_shapes(ArchGraph g) {
  for (auto& n : g.nodes) n.out_shapes.clear();
  for (auto& n : g.nodes) {
    try {
      detail::infer_node(g, n);
    } catch (const ShapeError& e) {
      if (n.line == 0) throw;
      throw ShapeError(e.dimension(), "line " + std::to_string(n.line) + ": " + detail::strip_prefix(e.what()));
    } catch (const ConfigError& e) {
      if (n.line == 0) throw;
      throw ConfigError("line " + std::to_string(n.line) + ": " + e.what());
    }
  }
  return g;
}

// Re-targets a graph to a new input extent and re-infers every shape.
inline ArchGraph with_input(ArchGraph g, Shape3 input) {
  g.meta.input = input;
  return infer_shapes(std::move(g));
}

}  // namespace sbp
