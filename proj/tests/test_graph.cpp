#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sbp/cost_model.hpp"
#include "sbp/graph.hpp"

using namespace sbp;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::filesystem::path> bundled_configs() {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(std::filesystem::path(SBP_SOURCE_DIR) / "configs")) {
    if (e.path().extension() == ".cfg") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

ArchGraph load(const std::string& name) {
  const auto path = std::filesystem::path(SBP_SOURCE_DIR) / "configs" / name;
  return infer_shapes(parse_config(read_file(path), path.string()));
}

// Parses `text` and expects a ParseError on `line` whose message contains `needle`.
void expect_parse_error(const std::string& text, std::size_t line, const std::string& needle) {
  try {
    parse_config(text, "t.cfg");
    ADD_FAILURE() << "no error for:\n" << text;
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), line) << e.what();
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    EXPECT_EQ(std::string(e.what()).rfind("t.cfg:" + std::to_string(line) + ":", 0), 0u) << e.what();
  }
}

const std::string kMeta = "[meta]\ninput = 3,64,64\n[layers]\n";  // layers start on line 4

}  // namespace

TEST(Config, MinimalThreeLineGraph) {
  const ArchGraph g = infer_shapes(parse_config("[layers]\n0: conv(from=input, c2=8, k=3)\n1: conv(from=0, c2=4, k=1)\n"));
  ASSERT_EQ(g.nodes.size(), 2u);
  EXPECT_EQ(g.nodes[0].out_shape(), (Shape3{8, 640, 640}));
  EXPECT_EQ(g.nodes[1].out_shape(), (Shape3{4, 640, 640}));
  EXPECT_EQ(g.nodes[1].inputs, std::vector<int>{0});
}

TEST(Config, SbpYoloShapesAt640) {
  const ArchGraph g = load("sbp-yolo.cfg");
  EXPECT_EQ(g.nodes.front().out_shape(), (Shape3{16, 320, 320}));
  const auto head = g.head();
  ASSERT_TRUE(head);
  const auto& levels = g.node(*head).out_shapes;
  ASSERT_EQ(levels.size(), 4u);
  const int expect[4] = {160, 80, 40, 20};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(levels[i], (Shape3{66, expect[i], expect[i]}));
  }
  EXPECT_EQ(g.head_levels, (std::vector<int>{19, 22, 25, 28}));
}

TEST(Config, SbpYoloShapesAt160) {
  const ArchGraph g = with_input(load("sbp-yolo.cfg"), {3, 160, 160});
  const auto& levels = g.node(*g.head()).out_shapes;
  const int expect[4] = {40, 20, 10, 5};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(levels[i].h, expect[i]);
}

TEST(Config, UpsampleAndConcatShapes) {
  const ArchGraph g = infer_shapes(parse_config(kMeta +
                                                "0: conv(from=input, c2=8, k=3, s=2)\n"
                                                "1: upsample(from=0)\n"
                                                "2: concat(from=1|input)\n"));
  EXPECT_EQ(g.nodes[1].out_shape(), (Shape3{8, 64, 64}));
  EXPECT_EQ(g.nodes[2].out_shape(), (Shape3{11, 64, 64}));
}

TEST(Config, InputOnlyGraphHasZeroCost) {
  const ArchGraph g = infer_shapes(parse_config("[meta]\ninput = 3,32,32\n[layers]\n"));
  EXPECT_TRUE(g.nodes.empty());
  EXPECT_TRUE(g.shaped());
  const CostReport r = analyze(g);
  EXPECT_EQ(r.totals.params, 0);
  EXPECT_EQ(r.totals.flops, 0);
}

TEST(Config, ForwardReferenceNamesTheNode) {
  expect_parse_error(kMeta +
                         "0: conv(from=input, c2=8, k=3)\n"
                         "1: conv(from=0, c2=8, k=3)\n"
                         "2: conv(from=1, c2=8, k=3)\n"
                         "3: conv(from=7, c2=8, k=3)\n"
                         "4: conv(from=2, c2=8, k=3)\n"
                         "5: conv(from=4, c2=8, k=3)\n"
                         "6: conv(from=5, c2=8, k=3)\n"
                         "7: conv(from=6, c2=8, k=3)\n",
                     7, "forward reference: node 3 reads later node 7");
}

TEST(Config, LongCycleIsReportedAsACycle) {
  expect_parse_error(kMeta +
                         "0: conv(from=input, c2=8, k=3)\n"
                         "1: conv(from=3, c2=8, k=3)\n"
                         "2: conv(from=1, c2=8, k=3)\n"
                         "3: conv(from=2, c2=8, k=3)\n",
                     5, "cycle: node 1 and node 3 depend on each other");
}

TEST(Config, EachDiagnosticPointsAtItsLine) {
  expect_parse_error(kMeta + "1: conv(from=input, c2=8)\n", 4, "node ids must be consecutive");
  expect_parse_error(kMeta + "0: convolution(from=input, c2=8)\n", 4, "unknown layer kind");
  expect_parse_error(kMeta + "0: conv(from=input, c2=8, wobble=1)\n", 4, "unknown argument 'wobble'");
  expect_parse_error(kMeta + "0: conv(from=input, k=3)\n", 4, "missing required argument 'c2'");
  expect_parse_error(kMeta + "0: conv(c2=8)\n", 4, "layer 0 is missing 'from='");
  expect_parse_error(kMeta + "0: conv(from=0, c2=8)\n", 4, "cycle: node 0 takes itself as input");
  expect_parse_error(kMeta + "0: conv(from=input, c2=8)\n1: conv(from=9, c2=8)\n", 5, "dangling input reference");
  expect_parse_error(kMeta + "0: conv(from=input, c2=8)\n1: conv(from=-3, c2=8)\n", 5, "dangling input reference");
  expect_parse_error(kMeta + "0: conv(from=input, c2=8)\n1: plain_head(from=0)\n2: conv(from=1, c2=8)\n", 6,
                     "reads head node 1");
  expect_parse_error(kMeta + "0: conv(from=input, c2=8)\n1: plain_head(from=0)\n2: plain_head(from=0)\n", 6,
                     "more than one head node");
  expect_parse_error(kMeta + "0: conv(from=input, c2=8)\n1: ledh_head(from=0)\n", 5, "wrong head-level count");
  expect_parse_error("[meta]\nlevels = 2\n[layers]\n0: conv(from=input, c2=8)\n1: plain_head(from=0)\n", 5,
                     "wrong head-level count");
  expect_parse_error(kMeta + "0: plain_head(from=input)\n", 4, "head cannot read the network input");
  expect_parse_error(kMeta + "0: conv(from=input, c2=$NOPE)\n", 4, "undefined constant 'NOPE'");
  expect_parse_error(kMeta + "0: upsample(from=input, bias=true)\n", 4, "has no weights to bias");
  expect_parse_error("0: conv(from=input, c2=8)\n", 1, "content before any [section] header");
  expect_parse_error("[meta]\ncolour = red\n", 2, "unknown meta key 'colour'");
  expect_parse_error("[meta]\nnc = two\n", 2, "expected an integer");
  expect_parse_error("[metadata]\n", 1, "unknown section");
}

TEST(Config, ConcatSpatialMismatchNamesBothProducers) {
  const ArchGraph g = parse_config(kMeta +
                                   "0: conv(from=input, c2=8, k=3, s=2)\n"
                                   "1: conv(from=0, c2=8, k=3, s=2)\n"
                                   "2: concat(from=0|1)\n");
  try {
    infer_shapes(g);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_EQ(e.dimension(), "spatial");
    EXPECT_NE(what.find("line 6"), std::string::npos) << what;
    EXPECT_NE(what.find("node 0 gives (8,32,32)"), std::string::npos) << what;
    EXPECT_NE(what.find("node 1 gives (8,16,16)"), std::string::npos) << what;
  }
}

TEST(Config, HeadLevelsMustHalve) {
  const ArchGraph g = parse_config(kMeta +
                                   "0: conv(from=input, c2=8, k=3, s=2)\n"
                                   "1: conv(from=0, c2=8, k=3, s=4)\n"
                                   "2: plain_head(from=0|1)\n");
  try {
    infer_shapes(g);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("node 0"), std::string::npos) << what;
    EXPECT_NE(what.find("node 1"), std::string::npos) << what;
  }
}

TEST(Config, OddWidthIntoGSBottleneckIsAConfigError) {
  const ArchGraph g = parse_config(kMeta + "0: conv(from=input, c2=7, k=1)\n1: gs_bottleneck(from=0)\n");
  try {
    infer_shapes(g);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos) << e.what();
  }
}

TEST(Config, RoundTripEveryBundledConfig) {
  const auto configs = bundled_configs();
  ASSERT_GE(configs.size(), 5u);
  for (const auto& path : configs) {
    SCOPED_TRACE(path.string());
    const ArchGraph a = parse_config(read_file(path), path.string());
    const std::string text = emit_config(a);
    const ArchGraph b = parse_config(text, "emitted");
    EXPECT_EQ(a, b);
    EXPECT_EQ(emit_config(b), text);
    EXPECT_EQ(infer_shapes(a), infer_shapes(b));
  }
}

// Random byte- and line-level mutations of a real config. Every outcome is
// either a valid graph or exactly one library error carrying a line number.
TEST(Config, MutatedConfigsFailCleanly) {
  const std::string base = read_file(std::filesystem::path(SBP_SOURCE_DIR) / "configs" / "sbp-yolo.cfg");
  std::mt19937_64 rng(0x6a7f);
  const std::string alphabet = "0123456789abcxyz_$|=,()[]#:.- \n";
  int failures = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    std::string text = base;
    const int edits = 1 + static_cast<int>(rng() % 3);
    for (int e = 0; e < edits; ++e) {
      if (text.empty()) break;
      const std::size_t at = rng() % text.size();
      switch (rng() % 5) {
        case 0:
          text.erase(at, 1 + rng() % 4);
          break;
        case 1:
          text[at] = alphabet[rng() % alphabet.size()];
          break;
        case 2:
          text.insert(at, 1, alphabet[rng() % alphabet.size()]);
          break;
        case 3: {  // drop a whole line
          const std::size_t s = text.rfind('\n', at);
          const std::size_t f = text.find('\n', at);
          const std::size_t from = s == std::string::npos ? 0 : s;
          text.erase(from, (f == std::string::npos ? text.size() : f) - from);
          break;
        }
        default: {  // duplicate a line
          const std::size_t s = text.rfind('\n', at);
          const std::size_t f = text.find('\n', at);
          const std::size_t from = s == std::string::npos ? 0 : s;
          const std::string line = text.substr(from, (f == std::string::npos ? text.size() : f) - from);
          text.insert(from, line);
          break;
        }
      }
    }
    try {
      const ArchGraph g = infer_shapes(parse_config(text, "fuzz.cfg"));
      (void)analyze(g);
    } catch (const ParseError& e) {
      ++failures;
      EXPECT_GE(e.line(), 1u) << e.what();
      EXPECT_EQ(std::string(e.what()).rfind("fuzz.cfg:", 0), 0u) << e.what();
    } catch (const Error& e) {
      ++failures;
      EXPECT_NE(std::string(e.what()).find("line "), std::string::npos) << e.what() << "\n" << text;
    }
  }
  EXPECT_GT(failures, 1000);
}

TEST(Config, AnalyzeBeforeInferenceIsAUsageError) {
  const ArchGraph g = parse_config(read_file(std::filesystem::path(SBP_SOURCE_DIR) / "configs" / "minimal.cfg"));
  EXPECT_THROW(analyze(g), UsageError);
}
